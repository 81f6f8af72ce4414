// Per-replica versioned key-value store with TL2-style transactions.
//
// Every replica keeps its own global version clock. A transaction snapshots the
// clock at begin, buffers its writes, and records the version (and writer) of
// every cell it reads. Reading a cell newer than the snapshot aborts early.
// Committing applies the whole write-set atomically and bumps the clock once.
//
// Replicas only synchronise through write-set application, so clocks drift
// apart between replicas. The writer transaction id stored with each cell is the
// replica-independent version token; it is what remote validation compares.

#pragma once

#include "types.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <stdexcept>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace lilac::stm {

struct VersionedCell {
    Value value = 0;
    std::uint64_t version = 0;
    TxId writer = kInitialWriter;
};

struct ReadEntry {
    std::uint64_t version = 0;
    TxId writer = kInitialWriter;
};

using ReadSet = std::map<ItemId, ReadEntry>;
using WriteSet = std::map<ItemId, Value>;
// Replica-independent validation metadata: key -> writer observed.
using WriterMap = std::map<ItemId, TxId>;

struct TxContext {
    TxId txId = 0;
    NodeId origin = 0;
    ReadSet readSet;
    WriteSet writeSet;
    std::uint64_t startVersion = 0;
    bool readOnly = false;
    int retriesLeft = 0;
};

class StaleRead : public std::runtime_error {
public:
    explicit StaleRead(ItemId key) : std::runtime_error("stale read"), m_key(key) {}
    ItemId key() const noexcept { return m_key; }

private:
    ItemId m_key;
};

class ReadOnlyViolation : public std::logic_error {
public:
    ReadOnlyViolation() : std::logic_error("write inside a read-only transaction") {}
};

class UnknownKey : public std::out_of_range {
public:
    explicit UnknownKey(ItemId key) : std::out_of_range("unknown key"), m_key(key) {}
    ItemId key() const noexcept { return m_key; }

private:
    ItemId m_key;
};

inline WriterMap writers_of(const ReadSet &rs)
{
    WriterMap out;
    for (const auto &[k, e] : rs) {
        out.emplace_hint(out.end(), k, e.writer);
    }
    return out;
}

class Store {
public:
    explicit Store(NodeId replica = 0) : m_replica(replica) {}

    NodeId replica() const noexcept { return m_replica; }
    std::uint64_t clock() const noexcept { return m_clock; }
    std::size_t size() const noexcept { return m_cells.size(); }

    // Loads an initial value at version 0; only valid before any commit.
    void put_initial(ItemId key, Value v) { m_cells[key] = VersionedCell{v, 0, kInitialWriter}; }

    bool contains(ItemId key) const { return m_cells.count(key) != 0; }

    const VersionedCell &cell(ItemId key) const
    {
        auto it = m_cells.find(key);
        if (it == m_cells.end()) {
            throw UnknownKey(key);
        }
        return it->second;
    }

    TxContext begin(TxId id, NodeId origin, bool readOnly, int retries = 0) const
    {
        TxContext tx;
        tx.txId = id;
        tx.origin = origin;
        tx.startVersion = m_clock;
        tx.readOnly = readOnly;
        tx.retriesLeft = retries;
        return tx;
    }

    Value read(TxContext &tx, ItemId key) const
    {
        if (auto w = tx.writeSet.find(key); w != tx.writeSet.end()) {
            return w->second;
        }
        const VersionedCell &c = cell(key);
        if (c.version > tx.startVersion) {
            throw StaleRead(key);
        }
        tx.readSet.emplace(key, ReadEntry{c.version, c.writer});
        return c.value;
    }

    void write(TxContext &tx, ItemId key, Value v) const
    {
        if (tx.readOnly) {
            throw ReadOnlyViolation();
        }
        tx.writeSet[key] = v;
    }

    bool validate(const ReadSet &rs) const
    {
        for (const auto &[key, e] : rs) {
            if (cell(key).version != e.version) {
                return false;
            }
        }
        return true;
    }

    // Validation against metadata captured on another replica.
    bool validate_writers(const WriterMap &readers) const
    {
        for (const auto &[key, writer] : readers) {
            if (cell(key).writer != writer) {
                return false;
            }
        }
        return true;
    }

    void apply_writeset(const WriteSet &ws, TxId txId)
    {
        if (ws.empty()) {
            return;
        }
        ++m_clock;
        for (const auto &[key, v] : ws) {
            m_cells[key] = VersionedCell{v, m_clock, txId};
        }
    }

    struct CanonicalCell {
        ItemId key;
        Value value;
        TxId writer;
        friend bool operator==(const CanonicalCell &, const CanonicalCell &) = default;
    };

    // Sorted (key, value, writer) snapshot. Local version numbers are left out:
    // replicas apply non-conflicting write-sets in different orders, so only the
    // writer identifies a version across replicas.
    std::vector<CanonicalCell> canonical() const
    {
        std::vector<CanonicalCell> out;
        out.reserve(m_cells.size());
        for (const auto &[k, c] : m_cells) {
            out.push_back(CanonicalCell{k, c.value, c.writer});
        }
        std::sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.key < b.key; });
        return out;
    }

    // key,value,version
    void dump(std::ostream &os) const
    {
        std::vector<ItemId> keys;
        keys.reserve(m_cells.size());
        for (const auto &[k, c] : m_cells) {
            keys.push_back(k);
        }
        std::sort(keys.begin(), keys.end());
        for (ItemId k : keys) {
            const auto &c = m_cells.at(k);
            os << k << ',' << c.value << ',' << c.version << '\n';
        }
    }

    template <class Fn>
    void for_each(Fn &&fn) const
    {
        for (const auto &[k, c] : m_cells) {
            fn(k, c);
        }
    }

private:
    NodeId m_replica;
    std::uint64_t m_clock = 0;
    std::unordered_map<ItemId, VersionedCell> m_cells;
};

// Binds a context to the store it executes against; this is what transactional
// workload logic receives.
class Transaction {
public:
    Transaction(const Store &store, TxContext &ctx) : m_store(store), m_ctx(ctx) {}

    Value read(ItemId key) { return m_store.read(m_ctx, key); }
    void write(ItemId key, Value v) { m_store.write(m_ctx, key, v); }
    bool exists(ItemId key) const { return m_ctx.writeSet.count(key) != 0 || m_store.contains(key); }
    const TxContext &context() const noexcept { return m_ctx; }

private:
    const Store &m_store;
    TxContext &m_ctx;
};

} // namespace lilac::stm
