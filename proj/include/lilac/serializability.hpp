// Direct serialization graph over committed read-write transactions.
//
// The history lists transactions in installation order; that order fixes the
// version order of every key. Edges: ww between consecutive writers of a key,
// wr from the writer a transaction read to the reader, and rw from a reader to
// the writer that installed the next version of what it read. The history is
// serializable iff the graph is acyclic.

#pragma once

#include "replication.hpp"
#include "types.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace lilac {

struct SerializabilityVerdict {
    bool serializable = true;
    std::vector<TxId> cycle;
    std::string reason;
};

inline SerializabilityVerdict check_serializability(const std::vector<CommitRecord> &history)
{
    SerializabilityVerdict v;
    const std::size_t n = history.size();
    std::unordered_map<TxId, std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) {
        if (history[i].txId == kInitialWriter || !index.emplace(history[i].txId, i).second) {
            v.serializable = false;
            v.reason = "duplicate or reserved transaction id " + std::to_string(history[i].txId);
            return v;
        }
    }

    // Per key: writers in version order, initial version first.
    std::map<ItemId, std::vector<TxId>> order;
    for (const auto &rec : history) {
        for (ItemId k : rec.writes) {
            auto &w = order[k];
            if (w.empty()) {
                w.push_back(kInitialWriter);
            }
            w.push_back(rec.txId);
        }
    }

    std::vector<std::vector<std::size_t>> adj(n);
    auto edge = [&](TxId from, TxId to) {
        if (from == kInitialWriter || to == kInitialWriter || from == to) {
            return;
        }
        adj[index.at(from)].push_back(index.at(to));
    };

    for (const auto &[k, writers] : order) {
        for (std::size_t i = 1; i + 1 < writers.size(); ++i) {
            edge(writers[i], writers[i + 1]);
        }
    }
    for (const auto &rec : history) {
        for (const auto &[k, seen] : rec.reads) {
            auto it = order.find(k);
            if (it == order.end()) {
                if (seen != kInitialWriter) {
                    v.serializable = false;
                    v.reason = "read of a version no committed transaction wrote";
                    return v;
                }
                continue;
            }
            const auto &writers = it->second;
            auto pos = std::find(writers.begin(), writers.end(), seen);
            if (pos == writers.end()) {
                v.serializable = false;
                v.reason = "read of a version no committed transaction wrote";
                return v;
            }
            edge(seen, rec.txId);
            if (auto next = std::next(pos); next != writers.end()) {
                edge(rec.txId, *next);
            }
        }
    }

    // Iterative three-colour DFS; the first back edge yields a cycle.
    std::vector<char> colour(n, 0);
    std::vector<std::size_t> parent(n, n);
    for (std::size_t root = 0; root < n; ++root) {
        if (colour[root]) {
            continue;
        }
        std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
        colour[root] = 1;
        while (!stack.empty()) {
            auto &[u, i] = stack.back();
            if (i < adj[u].size()) {
                const std::size_t w = adj[u][i++];
                if (colour[w] == 0) {
                    colour[w] = 1;
                    parent[w] = u;
                    stack.emplace_back(w, 0);
                } else if (colour[w] == 1) {
                    v.serializable = false;
                    v.reason = "dependency cycle";
                    for (std::size_t x = u; x != w; x = parent[x]) {
                        v.cycle.push_back(history[x].txId);
                    }
                    v.cycle.push_back(history[w].txId);
                    std::reverse(v.cycle.begin(), v.cycle.end());
                    return v;
                }
            } else {
                colour[u] = 2;
                stack.pop_back();
            }
        }
    }
    return v;
}

} // namespace lilac
