// Lease manager: per-conflict-class FIFO queues of lease ownership records.
//
// Fine mode keeps one record per conflict class, so a transaction can be
// associated with any combination of records its node already owns. Coarse mode
// keeps one record per request covering the whole class set; it may only be
// reused by a transaction whose class set is a subset of that record.
//
// A node acquires a lease set by total-order broadcasting a request; every
// replica enqueues the request's records atomically, so queue contents agree
// everywhere. A record set is enabled once every record heads all its queues.
// Records are released by a single reliable broadcast per batch.

#pragma once

#include "types.hpp"

#include <algorithm>
#include <compare>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lilac::lease {

enum class Mode : std::uint8_t { Fine, Coarse };

// A coarse record's slot value; fine records use their conflict class.
inline constexpr ClassId kCoarseSlot = ~ClassId{0};

struct LeaseId {
    NodeId requester = 0;
    std::uint64_t request = 0;
    ClassId slot = 0;

    friend auto operator<=>(const LeaseId &, const LeaseId &) = default;
};

inline std::ostream &operator<<(std::ostream &os, const LeaseId &id)
{
    return os << 'l' << id.requester << '.' << id.request << '.' << id.slot;
}

struct LeaseRecord {
    LeaseId id;
    NodeId proc = 0;
    std::vector<ClassId> classes;
    int activeXacts = 1;
    bool blocked = false;
    // Set once a LeaseFreed naming this record has been broadcast.
    bool releasing = false;
};

struct LeaseRequest {
    NodeId requester = 0;
    std::uint64_t seq = 0;
    Mode mode = Mode::Fine;
    std::vector<ClassId> classes; // sorted, unique, non-empty
};

struct LeaseEvent {
    enum class Kind : std::uint8_t { Request, Reuse, Block, Free, Enable };
    NodeId node = 0;
    Kind kind = Kind::Request;
    ClassId cc = 0;
};

inline constexpr std::string_view to_string(LeaseEvent::Kind k) noexcept
{
    switch (k) {
    case LeaseEvent::Kind::Request: return "request";
    case LeaseEvent::Kind::Reuse: return "reuse";
    case LeaseEvent::Kind::Block: return "block";
    case LeaseEvent::Kind::Free: return "free";
    case LeaseEvent::Kind::Enable: return "enable";
    }
    return "?";
}

// Total, deterministic item -> conflict class mapping.
class ConflictClassMap {
public:
    using Fn = std::function<ClassId(ItemId)>;

    explicit ConflictClassMap(std::size_t numClasses) : m_num(numClasses), m_fn(default_fn(numClasses)) {}
    ConflictClassMap(std::size_t numClasses, Fn fn) : m_num(numClasses), m_fn(std::move(fn)) {}

    std::size_t size() const noexcept { return m_num; }
    ClassId operator()(ItemId item) const { return m_fn(item); }

    template <class Range>
    std::vector<ClassId> classes_of(const Range &items) const
    {
        std::vector<ClassId> out;
        for (ItemId it : items) {
            out.push_back(m_fn(it));
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    // splitmix64 finaliser; stable across platforms.
    static std::uint64_t mix(std::uint64_t x) noexcept
    {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    static Fn default_fn(std::size_t n)
    {
        return [n](ItemId item) { return static_cast<ClassId>(mix(item) % n); };
    }

    std::size_t m_num;
    Fn m_fn;
};

class LeaseManager {
public:
    using Handle = std::uint64_t;

    struct Hooks {
        std::function<void(const LeaseRequest &)> oaBroadcast;
        std::function<void(std::vector<LeaseId>)> urBroadcastFreed;
        std::function<void(const LeaseEvent &)> trace;
    };

    struct Acquisition {
        Handle handle = 0;
        bool reused = false;
    };

    struct Counters {
        std::uint64_t requests = 0;
        std::uint64_t reuses = 0;
        std::uint64_t freedMessages = 0;
    };

    LeaseManager(NodeId self, std::size_t numClasses, Mode mode, Hooks hooks, bool requestMissingOnly = false)
        : m_self(self), m_mode(mode), m_missingOnly(requestMissingOnly), m_hooks(std::move(hooks)),
          m_queues(numClasses), m_pendingRemote(numClasses)
    {
        if (numClasses == 0) {
            throw ConfigError("at least one conflict class is required");
        }
    }

    NodeId self() const noexcept { return m_self; }
    Mode mode() const noexcept { return m_mode; }
    std::size_t num_classes() const noexcept { return m_queues.size(); }
    const Counters &counters() const noexcept { return m_counters; }

    // Associates the caller with a record set covering `classes`; `onEnabled`
    // runs once every record in the set heads its queues (possibly before
    // get_lease returns).
    Acquisition get_lease(std::vector<ClassId> classes, std::function<void()> onEnabled)
    {
        normalise(classes);
        if (classes.empty()) {
            throw std::invalid_argument("get_lease needs a non-empty class set");
        }
        for (ClassId cc : classes) {
            check_class(cc);
        }

        HandleState h;
        h.onEnabled = std::move(onEnabled);
        bool reused = false;

        if (m_mode == Mode::Coarse) {
            if (auto r = reusable_coarse(classes)) {
                h.lors.push_back(*r);
                reused = true;
            }
        } else {
            std::vector<ClassId> missing;
            std::vector<LeaseId> found;
            for (ClassId cc : classes) {
                if (auto r = reusable_fine(cc)) {
                    found.push_back(*r);
                } else {
                    missing.push_back(cc);
                }
            }
            if (missing.empty()) {
                h.lors = std::move(found);
                reused = true;
            } else if (m_missingOnly) {
                h.lors = std::move(found);
                classes = std::move(missing);
            }
        }

        if (reused) {
            for (const LeaseId &id : h.lors) {
                ++m_records.at(id).activeXacts;
                for (ClassId cc : m_records.at(id).classes) {
                    trace(LeaseEvent::Kind::Reuse, cc);
                }
            }
            ++m_counters.reuses;
        } else {
            // Partially reused records (missing-only mode) join the set too.
            for (const LeaseId &id : h.lors) {
                ++m_records.at(id).activeXacts;
                trace(LeaseEvent::Kind::Reuse, id.slot);
            }
            LeaseRequest req{m_self, ++m_requestSeq, m_mode, classes};
            for (const LeaseId &id : ids_for(req)) {
                h.lors.push_back(id);
            }
            for (ClassId cc : classes) {
                trace(LeaseEvent::Kind::Request, cc);
            }
            ++m_counters.requests;
            if (m_hooks.oaBroadcast) {
                m_hooks.oaBroadcast(req);
            }
        }

        const Handle handle = ++m_nextHandle;
        m_handles.emplace(handle, std::move(h));
        resolve_ready();
        return Acquisition{handle, reused};
    }

    // Initial placement, applied identically on every replica before any
    // traffic: one idle record per class owned by `owner`. Sequence 0 never
    // clashes with real requests, which start at 1.
    void bootstrap(NodeId owner, std::span<const ClassId> classes)
    {
        for (ClassId cc : classes) {
            check_class(cc);
            if (!m_queues[cc].empty()) {
                throw ProtocolError("bootstrap on a non-empty queue");
            }
            LeaseRecord r;
            r.id = LeaseId{owner, 0, cc};
            r.proc = owner;
            r.classes = {cc};
            r.activeXacts = 0;
            enqueue(std::move(r));
        }
    }

    bool resolved(Handle h) const { return m_handles.at(h).resolved; }
    bool live(Handle h) const { return m_handles.count(h) != 0; }
    const std::vector<LeaseId> &lors(Handle h) const { return m_handles.at(h).lors; }

    void finished_xact(Handle handle)
    {
        auto it = m_handles.find(handle);
        if (it == m_handles.end()) {
            throw ProtocolError("finished_xact on unknown handle");
        }
        if (!it->second.resolved) {
            throw ProtocolError("finished_xact before the lease set was enabled");
        }
        std::vector<LeaseId> toFree;
        for (const LeaseId &id : it->second.lors) {
            LeaseRecord &r = record_mut(id);
            if (r.activeXacts <= 0) {
                throw UnderflowViolation("activeXacts would become negative");
            }
            --r.activeXacts;
            if (r.blocked && r.activeXacts == 0 && !r.releasing) {
                r.releasing = true;
                toFree.push_back(id);
            }
        }
        m_handles.erase(it);
        release(std::move(toFree));
    }

    void on_opt_deliver(const LeaseRequest &req)
    {
        if (req.requester == m_self) {
            return;
        }
        m_optSeen.emplace(key_of(req), req.classes);
        for (ClassId cc : req.classes) {
            ++m_pendingRemote[cc][req.requester];
        }
        free_local_leases(req.classes);
    }

    void on_to_deliver(const LeaseRequest &req)
    {
        if (auto it = m_optSeen.find(key_of(req)); it != m_optSeen.end()) {
            for (ClassId cc : it->second) {
                auto &pending = m_pendingRemote[cc];
                if (--pending[req.requester] == 0) {
                    pending.erase(req.requester);
                }
            }
            m_optSeen.erase(it);
        }
        // Every local record already queued on these classes now sits ahead of
        // the new request; block them so they drain. Own requests included:
        // otherwise a full-set re-request could wait forever behind the
        // requester's own idle, unblocked record.
        free_local_leases(req.classes);

        if (req.mode == Mode::Coarse) {
            LeaseRecord r;
            r.id = LeaseId{req.requester, req.seq, kCoarseSlot};
            r.proc = req.requester;
            r.classes = req.classes;
            enqueue(std::move(r));
        } else {
            for (ClassId cc : req.classes) {
                LeaseRecord r;
                r.id = LeaseId{req.requester, req.seq, cc};
                r.proc = req.requester;
                r.classes = {cc};
                enqueue(std::move(r));
            }
        }
        if (req.requester == m_self) {
            resolve_ready();
        }
    }

    void on_ur_deliver_freed(std::span<const LeaseId> freed)
    {
        for (const LeaseId &id : freed) {
            auto it = m_records.find(id);
            if (it == m_records.end()) {
                throw MissingLor("LeaseFreed names an unknown record");
            }
            for (ClassId cc : it->second.classes) {
                auto &q = m_queues[cc];
                auto pos = std::find(q.begin(), q.end(), id);
                if (pos == q.end()) {
                    throw MissingLor("LeaseFreed names a record absent from its queue");
                }
                q.erase(pos);
            }
            m_records.erase(it);
        }
        resolve_ready();
    }

    bool is_enabled(std::span<const LeaseId> set) const
    {
        for (const LeaseId &id : set) {
            auto it = m_records.find(id);
            if (it == m_records.end()) {
                return false;
            }
            if (!heads_all(it->second)) {
                return false;
            }
        }
        return true;
    }

    const std::deque<LeaseId> &queue(ClassId cc) const { return m_queues.at(cc); }
    bool has_record(const LeaseId &id) const { return m_records.count(id) != 0; }
    const LeaseRecord &record(const LeaseId &id) const
    {
        auto it = m_records.find(id);
        if (it == m_records.end()) {
            throw MissingLor("unknown record");
        }
        return it->second;
    }

    // Exact local ownership: a transaction touching `cc` could piggyback here.
    bool owns_unblocked(ClassId cc) const
    {
        if (m_mode == Mode::Coarse) {
            for (auto it = m_queues.at(cc).rbegin(); it != m_queues.at(cc).rend(); ++it) {
                const LeaseRecord &r = m_records.at(*it);
                if (r.proc == m_self && !r.blocked) {
                    return true;
                }
            }
            return false;
        }
        return reusable_fine(cc).has_value();
    }

    // Best local guess of which node currently holds `cc`, inferred from the
    // replicated queues: the requester of the newest queued record, unless a
    // request by someone else has been optimistically delivered since.
    std::optional<NodeId> believed_owner(ClassId cc) const
    {
        const auto &q = m_queues.at(cc);
        if (q.empty()) {
            return std::nullopt;
        }
        const LeaseRecord &tail = m_records.at(q.back());
        for (const auto &[node, count] : m_pendingRemote.at(cc)) {
            if (node != tail.proc && count > 0) {
                return std::nullopt;
            }
        }
        if (tail.proc == m_self && !owns_unblocked(cc)) {
            return std::nullopt;
        }
        return tail.proc;
    }

    std::size_t pending_handles() const
    {
        std::size_t n = 0;
        for (const auto &[h, s] : m_handles) {
            n += s.resolved ? 0 : 1;
        }
        return n;
    }
    std::size_t live_handles() const noexcept { return m_handles.size(); }

    std::vector<std::vector<LeaseId>> snapshot() const
    {
        std::vector<std::vector<LeaseId>> out;
        out.reserve(m_queues.size());
        for (const auto &q : m_queues) {
            out.emplace_back(q.begin(), q.end());
        }
        return out;
    }

    template <class Fn>
    void for_each_record(Fn &&fn) const
    {
        for (const auto &[id, r] : m_records) {
            fn(r);
        }
    }

private:
    struct HandleState {
        std::vector<LeaseId> lors;
        std::function<void()> onEnabled;
        bool resolved = false;
    };

    static void normalise(std::vector<ClassId> &cs)
    {
        std::sort(cs.begin(), cs.end());
        cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
    }

    static std::pair<NodeId, std::uint64_t> key_of(const LeaseRequest &r) { return {r.requester, r.seq}; }

    static std::vector<LeaseId> ids_for(const LeaseRequest &req)
    {
        std::vector<LeaseId> out;
        if (req.mode == Mode::Coarse) {
            out.push_back(LeaseId{req.requester, req.seq, kCoarseSlot});
        } else {
            for (ClassId cc : req.classes) {
                out.push_back(LeaseId{req.requester, req.seq, cc});
            }
        }
        return out;
    }

    void check_class(ClassId cc) const
    {
        if (cc >= m_queues.size()) {
            throw std::out_of_range("conflict class out of range");
        }
    }

    LeaseRecord &record_mut(const LeaseId &id)
    {
        auto it = m_records.find(id);
        if (it == m_records.end()) {
            throw MissingLor("unknown record");
        }
        return it->second;
    }

    bool heads_all(const LeaseRecord &r) const
    {
        for (ClassId cc : r.classes) {
            const auto &q = m_queues[cc];
            if (q.empty() || q.front() != r.id) {
                return false;
            }
        }
        return true;
    }

    std::optional<LeaseId> reusable_fine(ClassId cc) const
    {
        const auto &q = m_queues[cc];
        for (auto it = q.rbegin(); it != q.rend(); ++it) {
            const LeaseRecord &r = m_records.at(*it);
            if (r.proc == m_self && !r.blocked) {
                return r.id;
            }
        }
        return std::nullopt;
    }

    std::optional<LeaseId> reusable_coarse(const std::vector<ClassId> &classes) const
    {
        const auto &q = m_queues[classes.front()];
        for (auto it = q.rbegin(); it != q.rend(); ++it) {
            const LeaseRecord &r = m_records.at(*it);
            if (r.proc != m_self || r.blocked) {
                continue;
            }
            if (std::includes(r.classes.begin(), r.classes.end(), classes.begin(), classes.end())) {
                return r.id;
            }
        }
        return std::nullopt;
    }

    void enqueue(LeaseRecord r)
    {
        for (ClassId cc : r.classes) {
            check_class(cc);
            m_queues[cc].push_back(r.id);
        }
        m_records.emplace(r.id, std::move(r));
    }

    void free_local_leases(const std::vector<ClassId> &classes)
    {
        std::vector<LeaseId> toFree;
        for (ClassId cc : classes) {
            for (const LeaseId &id : m_queues.at(cc)) {
                LeaseRecord &r = m_records.at(id);
                if (r.proc != m_self) {
                    continue;
                }
                if (!r.blocked) {
                    r.blocked = true;
                    trace(LeaseEvent::Kind::Block, cc);
                }
                if (!r.releasing && r.activeXacts == 0 && heads_all(r)) {
                    r.releasing = true;
                    toFree.push_back(id);
                }
            }
        }
        release(std::move(toFree));
    }

    void release(std::vector<LeaseId> toFree)
    {
        if (toFree.empty()) {
            return;
        }
        for (const LeaseId &id : toFree) {
            for (ClassId cc : m_records.at(id).classes) {
                trace(LeaseEvent::Kind::Free, cc);
            }
        }
        ++m_counters.freedMessages;
        if (m_hooks.urBroadcastFreed) {
            m_hooks.urBroadcastFreed(std::move(toFree));
        }
    }

    void resolve_ready()
    {
        std::vector<Handle> ready;
        for (auto &[h, s] : m_handles) {
            if (!s.resolved && is_enabled(s.lors)) {
                s.resolved = true;
                ready.push_back(h);
                for (const LeaseId &id : s.lors) {
                    for (ClassId cc : m_records.at(id).classes) {
                        trace(LeaseEvent::Kind::Enable, cc);
                    }
                }
            }
        }
        for (Handle h : ready) {
            auto it = m_handles.find(h);
            if (it != m_handles.end() && it->second.onEnabled) {
                auto cb = std::move(it->second.onEnabled);
                it->second.onEnabled = nullptr;
                cb();
            }
        }
    }

    void trace(LeaseEvent::Kind k, ClassId cc) const
    {
        if (m_hooks.trace) {
            m_hooks.trace(LeaseEvent{m_self, k, cc});
        }
    }

    NodeId m_self;
    Mode m_mode;
    bool m_missingOnly;
    Hooks m_hooks;
    std::vector<std::deque<LeaseId>> m_queues;
    std::map<LeaseId, LeaseRecord> m_records;
    std::map<Handle, HandleState> m_handles;
    std::map<std::pair<NodeId, std::uint64_t>, std::vector<ClassId>> m_optSeen;
    std::vector<std::map<NodeId, int>> m_pendingRemote;
    Handle m_nextHandle = 0;
    std::uint64_t m_requestSeq = 0;
    Counters m_counters;
};

} // namespace lilac::lease
