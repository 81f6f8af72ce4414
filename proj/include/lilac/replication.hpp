// Replication manager: runs the commit phase of transactions at one replica.
//
// A read-write transaction executes locally, asks the dispatcher where its
// commit phase should run, and either stays (lease acquisition, validation,
// commit broadcast) or is handed to the forwarder. Validation failures are
// retried by re-executing under the leases already held.
//
// The committer applies its write-set as soon as it broadcasts the commit;
// every other replica applies it on delivery. The origin's application task
// resumes when the commit is delivered back to it.

#pragma once

#include "dtd.hpp"
#include "lease.hpp"
#include "protocol.hpp"
#include "sim.hpp"
#include "stm.hpp"
#include "types.hpp"
#include "workload.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

namespace lilac {

struct TxOutcome {
    TxId txId = 0;
    bool committed = false;
    Value result = 0;
    bool readOnly = false;
    bool reused = false;
    bool forwarded = false;
    NodeId committer = 0;
    std::uint32_t nClasses = 0;
};

using Completion = std::function<void(const TxOutcome &)>;

// What the committer saw: the writer of every item read, and the items written.
struct CommitRecord {
    TxId txId = 0;
    NodeId committer = 0;
    stm::WriterMap reads;
    std::vector<ItemId> writes;
};

// Services a node's managers need from the simulation around them.
class Runtime {
public:
    virtual ~Runtime() = default;
    virtual Tick now() const = 0;
    virtual void at(Tick t, std::function<void()> fn) = 0;
    virtual TxId next_tx_id() = 0;
    virtual void ur_broadcast(NodeId from, Wire msg) = 0;
    virtual void send_p2p(NodeId from, NodeId to, Wire msg) = 0;

    virtual void on_commit(const CommitRecord &) {}
    virtual void on_decision(NodeId /*origin*/, const dtd::Decision &) {}
    virtual void on_forward(TxId, NodeId /*origin*/, NodeId /*target*/) {}
    virtual void on_forward_abort(TxId, NodeId /*origin*/) {}
};

struct NodeStack {
    NodeId id;
    stm::Store store;
    lease::LeaseManager lease;
    dtd::Dispatcher dtd;
    sim::Cpu cpu;
};

struct ReplicationConfig {
    dtd::Policy policy = dtd::Policy::None;
    bool cpuControl = true;
    int maxRetries = 3;
    bool reExecuteAlways = false;
    Tick execBaseTicks = 1;
    double execTicksPerOp = 0.1;
    Tick validateTicks = 1;
    // CPU spent applying a write-set committed elsewhere.
    Tick applyTicks = 1;
};

inline Tick exec_ticks(const ReplicationConfig &cfg, const workload::WorkloadJob &job)
{
    const double t = static_cast<double>(cfg.execBaseTicks) + cfg.execTicksPerOp * static_cast<double>(workload::op_count(job));
    return std::max<Tick>(1, static_cast<Tick>(std::llround(t)));
}

template <class Range>
std::vector<ItemId> keys_of(const Range &r)
{
    std::vector<ItemId> out;
    out.reserve(r.size());
    for (const auto &kv : r) {
        out.push_back(kv.first);
    }
    return out;
}

// Conflict classes of everything a transaction read or wrote.
inline std::vector<ClassId> classes_of(const lease::ConflictClassMap &map, const stm::TxContext &ctx)
{
    std::vector<ItemId> items = keys_of(ctx.readSet);
    for (const auto &[k, v] : ctx.writeSet) {
        items.push_back(k);
    }
    return map.classes_of(items);
}

// Commit-phase state of one transaction at the node handling it.
struct CommitTask {
    TxId id = 0;
    NodeId origin = 0;
    workload::WorkloadJob job;
    stm::TxContext ctx;
    Value result = 0;
    int retriesLeft = 0;
    bool reused = true;
    bool forwarded = false;
    bool reExecuteFirst = false;
    // Writer map captured at the origin; validated instead of ctx.readSet
    // until the first local re-execution.
    std::optional<stm::WriterMap> remoteMeta;
    std::vector<ClassId> held;
    std::optional<lease::LeaseManager::Handle> handle;
};

using TaskPtr = std::shared_ptr<CommitTask>;

class ReplicationManager {
public:
    using ForwardFn = std::function<void(const TaskPtr &, NodeId)>;

    ReplicationManager(NodeStack &node, Runtime &rt, const workload::Registry &registry,
                       const lease::ConflictClassMap &classes, ReplicationConfig cfg)
        : m_node(node), m_rt(rt), m_registry(registry), m_classes(classes), m_cfg(cfg)
    {
    }

    const ReplicationConfig &config() const noexcept { return m_cfg; }
    NodeStack &node() noexcept { return m_node; }
    const lease::ConflictClassMap &class_map() const noexcept { return m_classes; }
    std::size_t waiting() const noexcept { return m_waiting.size(); }
    std::size_t active_tasks() const noexcept { return m_active; }

    void set_forwarder(ForwardFn fn) { m_forward = std::move(fn); }

    // Executes `job` on the local CPU and drives it to commit or abort.
    void run_transaction(workload::WorkloadJob job, Completion done)
    {
        const TxId id = m_rt.next_tx_id();
        const Tick finish = m_node.cpu.submit(m_rt.now(), exec_ticks(m_cfg, job));
        m_rt.at(finish, [this, id, job = std::move(job), done = std::move(done)]() mutable {
            auto task = std::make_shared<CommitTask>();
            task->id = id;
            task->origin = m_node.id;
            task->job = std::move(job);
            task->retriesLeft = m_cfg.maxRetries;
            execute(*task);
            if (task->job.readOnly) {
                // Executed atomically against the local snapshot, so validation
                // cannot fail here; it is kept as the commit-time check.
                TxOutcome out;
                out.txId = id;
                out.readOnly = true;
                out.committed = m_node.store.validate(task->ctx.readSet);
                out.result = task->result;
                out.committer = m_node.id;
                done(out);
                return;
            }
            m_waiting.emplace(id, std::move(done));
            commit_local(task);
        });
    }

    void commit_local(const TaskPtr &task)
    {
        const auto classes = classes_of(m_classes, task->ctx);
        m_node.dtd.record_access(classes);
        refresh_cpu();
        const NodeId self = m_node.id;
        const auto owns = [this, self](NodeId i, ClassId x) {
            if (i == self) {
                return m_node.lease.owns_unblocked(x);
            }
            const auto owner = m_node.lease.believed_owner(x);
            return owner && *owner == i;
        };
        const dtd::Decision d =
            m_node.dtd.decide(self, classes, m_cfg.policy, task->job.home, owns, m_cfg.cpuControl);
        m_rt.on_decision(self, d);
        if (d.node != self && m_forward) {
            m_forward(task, d.node);
            return;
        }
        acquire(task, classes);
    }

    // Entry point for forwarded transactions as well as local ones.
    void acquire(const TaskPtr &task, std::vector<ClassId> classes)
    {
        ++m_active;
        task->held = classes;
        const auto acq = m_node.lease.get_lease(std::move(classes), [this, task] {
            // Resolution may happen inside get_lease; defer so the handle is set.
            m_rt.at(m_rt.now(), [this, task] { on_enabled(task); });
        });
        task->handle = acq.handle;
        if (!acq.reused) {
            task->reused = false;
        }
    }

    void on_commit_delivered(const CommitMsg &cm)
    {
        if (cm.committer != m_node.id) {
            m_node.store.apply_writeset(cm.writeSet, cm.txId);
            if (!cm.writeSet.empty()) {
                (void)m_node.cpu.submit(m_rt.now(), m_cfg.applyTicks);
            }
        }
        if (cm.stats) {
            m_node.dtd.gossip_in(*cm.stats);
        }
        if (cm.origin == m_node.id) {
            TxOutcome out;
            out.txId = cm.txId;
            out.committed = true;
            out.result = cm.result.value_or(0);
            out.reused = cm.reused;
            out.forwarded = cm.forwarded;
            out.committer = cm.committer;
            out.nClasses = cm.nClasses;
            complete(cm.txId, out);
        }
    }

    // Origin side: a forwarded transaction was aborted by its target.
    void on_remote_abort(TxId id)
    {
        TxOutcome out;
        out.txId = id;
        out.committed = false;
        out.forwarded = true;
        complete(id, out);
    }

    void refresh_cpu() { m_node.dtd.set_local_cpu(m_node.cpu.utilization(m_rt.now())); }

    std::shared_ptr<const dtd::StatsGossip> stats_out()
    {
        refresh_cpu();
        return std::make_shared<const dtd::StatsGossip>(m_node.dtd.gossip_out());
    }

private:
    void execute(CommitTask &task)
    {
        task.ctx = m_node.store.begin(task.id, task.origin, task.job.readOnly, task.retriesLeft);
        stm::Transaction tx(m_node.store, task.ctx);
        task.result = m_registry.run(task.job, tx);
    }

    void on_enabled(const TaskPtr &task)
    {
        const Tick t = m_node.cpu.submit(m_rt.now(), m_cfg.validateTicks);
        m_rt.at(t, [this, task] { validate_step(task); });
    }

    void validate_step(const TaskPtr &task)
    {
        if (task->reExecuteFirst) {
            task->reExecuteFirst = false;
            re_execute(task);
            return;
        }
        const bool valid = task->remoteMeta ? m_node.store.validate_writers(*task->remoteMeta)
                                            : m_node.store.validate(task->ctx.readSet);
        if (valid) {
            commit(task);
        } else if (task->retriesLeft <= 0) {
            abort(task);
        } else {
            --task->retriesLeft;
            re_execute(task);
        }
    }

    // Leases stay held across re-execution; a re-execution touching classes
    // outside the held set swaps the whole set rather than waiting while
    // holding, which could deadlock against another node's queued request.
    void re_execute(const TaskPtr &task)
    {
        const Tick t = m_node.cpu.submit(m_rt.now(), exec_ticks(m_cfg, task->job));
        m_rt.at(t, [this, task] {
            execute(*task);
            task->remoteMeta.reset();
            auto classes = classes_of(m_classes, task->ctx);
            if (std::includes(task->held.begin(), task->held.end(), classes.begin(), classes.end())) {
                validate_step(task);
                return;
            }
            release(task);
            acquire(task, std::move(classes));
        });
    }

    void commit(const TaskPtr &task)
    {
        if (!m_node.lease.is_enabled(m_node.lease.lors(*task->handle))) {
            throw ProtocolError("commit without an enabled lease set");
        }
        m_node.store.apply_writeset(task->ctx.writeSet, task->id);

        CommitRecord rec;
        rec.txId = task->id;
        rec.committer = m_node.id;
        rec.reads = task->remoteMeta ? *task->remoteMeta : stm::writers_of(task->ctx.readSet);
        rec.writes = keys_of(task->ctx.writeSet);
        m_rt.on_commit(rec);

        CommitMsg cm;
        cm.txId = task->id;
        cm.origin = task->origin;
        cm.committer = m_node.id;
        cm.writeSet = task->ctx.writeSet;
        cm.result = task->result;
        cm.nClasses = static_cast<std::uint32_t>(task->held.size());
        cm.reused = task->reused;
        cm.forwarded = task->forwarded;
        cm.stats = stats_out();
        m_rt.ur_broadcast(m_node.id, std::move(cm));
        release(task);
    }

    void abort(const TaskPtr &task)
    {
        release(task);
        if (task->origin == m_node.id) {
            TxOutcome out;
            out.txId = task->id;
            out.committed = false;
            out.forwarded = task->forwarded;
            complete(task->id, out);
        } else {
            m_rt.on_forward_abort(task->id, task->origin);
            m_rt.send_p2p(m_node.id, task->origin, ForwardReplyMsg{task->id, true});
        }
    }

    void release(const TaskPtr &task)
    {
        if (task->handle) {
            m_node.lease.finished_xact(*task->handle);
            task->handle.reset();
            --m_active;
        }
    }

    void complete(TxId id, const TxOutcome &out)
    {
        auto it = m_waiting.find(id);
        if (it == m_waiting.end()) {
            throw ProtocolError("transaction outcome delivered twice or to the wrong node");
        }
        Completion done = std::move(it->second);
        m_waiting.erase(it);
        done(out);
    }

    NodeStack &m_node;
    Runtime &m_rt;
    const workload::Registry &m_registry;
    const lease::ConflictClassMap &m_classes;
    ReplicationConfig m_cfg;
    ForwardFn m_forward;
    std::map<TxId, Completion> m_waiting;
    std::size_t m_active = 0;
};

} // namespace lilac
