// A simulated cluster: one protocol stack per replica over the shared group
// communication layer, closed-loop application threads, per-second metrics and
// the safety bookkeeping needed to audit a finished run.

#pragma once

#include "dtd.hpp"
#include "forwarder.hpp"
#include "gcs.hpp"
#include "lease.hpp"
#include "protocol.hpp"
#include "replication.hpp"
#include "sim.hpp"
#include "stm.hpp"
#include "types.hpp"
#include "workload.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace lilac {

struct ClusterConfig {
    std::size_t nodes = 4;
    std::size_t threadsPerNode = 2;
    std::size_t coresPerNode = 4;
    lease::Mode leaseMode = lease::Mode::Fine;
    bool requestMissingOnly = false;
    ReplicationConfig replication;
    dtd::DispatcherConfig dispatcher;
    gcs::LatencyConfig latency{10, 20, 10, 30, 0.0, 0};
    Tick ticksPerSecond = 1000;
    Tick gossipIntervalTicks = 100;
    Tick cpuWindowTicks = 100;
    double durationSeconds = 10.0;
    // Upper bound on the drain phase after the workload stops.
    Tick drainLimitTicks = 120000;
    std::uint64_t seed = 1;
    bool recordHistory = true;
    bool recordTraces = false;
    bool recordNetLog = false;
};

// Everything workload-specific the cluster needs.
struct WorkloadBinding {
    std::shared_ptr<const lease::ConflictClassMap> classes;
    workload::Registry registry;
    std::function<void(stm::Store &)> load;
    std::function<workload::WorkloadJob(NodeId, workload::Rng &)> next;
    // Initial lease placement: node -> classes it starts out owning.
    std::vector<std::pair<NodeId, std::vector<ClassId>>> initialLeases;
    std::optional<workload::OverloadSchedule> overload;
    // Application invariant checked on every replica at quiescence.
    std::string invariantName;
    std::function<bool(const stm::Store &)> invariant;
};

struct MetricsRow {
    std::uint64_t second = 0;
    double throughput = 0.0;
    double leaseReuseRate = 0.0;
    double leaseReqRate = 0.0;
    double forwards = 0.0;
    double aborts = 0.0;
    std::vector<double> cpu;
};

struct CommitLogEntry {
    Tick tick = 0;
    TxId txId = 0;
    NodeId origin = 0;
    NodeId committer = 0;
    std::uint32_t nClasses = 0;
    bool reused = false;
    bool forwarded = false;
};

struct LeaseTraceEntry {
    Tick tick = 0;
    lease::LeaseEvent event;
};

struct ForwardTraceEntry {
    Tick tick = 0;
    TxId txId = 0;
    NodeId origin = 0;
    NodeId target = 0;
    bool abort = false;
};

struct SafetyReport {
    bool converged = true;
    bool invariantHolds = true;
    bool cqAgreement = true;
    bool atMostOneForward = true;
    bool noUnderflow = true;
    bool blockedMonotone = true;
    bool historyConsistent = true;
    bool accounting = true;
    bool live = true;
    std::vector<std::string> problems;

    bool ok() const noexcept
    {
        return converged && invariantHolds && cqAgreement && atMostOneForward && noUnderflow && blockedMonotone &&
               historyConsistent && accounting && live;
    }
};

struct RunTotals {
    std::uint64_t generated = 0;
    std::uint64_t committed = 0;
    std::uint64_t aborted = 0;
    std::uint64_t inFlightAtEnd = 0;
    std::uint64_t rwCommitted = 0;
    std::uint64_t rwReused = 0;
    std::uint64_t leaseRequests = 0;
    std::uint64_t forwards = 0;
    std::uint64_t fallbacks = 0;
    std::uint64_t drained = 0;
};

struct RunResult {
    std::vector<MetricsRow> rows;
    RunTotals totals;
    SafetyReport safety;
    std::vector<CommitLogEntry> commitLog;
    std::vector<CommitRecord> history;
    std::vector<LeaseTraceEntry> leaseTrace;
    std::vector<ForwardTraceEntry> forwardTrace;
    std::vector<gcs::LogEntry> netLog;
    Tick endTick = 0;
    Tick stopTick = 0;
};

class Cluster final : public Runtime {
public:
    Cluster(ClusterConfig cfg, WorkloadBinding wl)
        : m_cfg(std::move(cfg)), m_wl(std::move(wl)), m_net(m_cfg.nodes, m_cfg.latency, m_cfg.seed ^ 0x5eedULL)
    {
        if (m_cfg.nodes == 0 || m_cfg.threadsPerNode == 0 || m_cfg.ticksPerSecond == 0) {
            throw ConfigError("nodes, threads and ticks per second must be positive");
        }
        if (!m_wl.classes || !m_wl.next || !m_wl.load) {
            throw ConfigError("incomplete workload binding");
        }
        if (m_cfg.durationSeconds <= 0.0) {
            throw ConfigError("duration must be positive");
        }
        if (m_cfg.replication.maxRetries < 0) {
            throw ConfigError("maxRetries must be non-negative");
        }
        m_net.set_logging(m_cfg.recordNetLog);
        m_stopTick = static_cast<Tick>(m_cfg.durationSeconds * static_cast<double>(m_cfg.ticksPerSecond));
        m_result.stopTick = m_stopTick;

        const std::size_t numClasses = m_wl.classes->size();
        for (NodeId id = 0; id < m_cfg.nodes; ++id) {
            auto node = std::make_unique<Node>();
            lease::LeaseManager::Hooks hooks;
            hooks.oaBroadcast = [this, id](const lease::LeaseRequest &req) {
                if (!m_stopped) {
                    ++m_second.leaseRequests;
                    ++m_result.totals.leaseRequests;
                }
                m_net.oa_broadcast(id, gcs::MessageKind::LeaseRequest,
                                   LeaseRequestMsg{req, m_nodes[id]->rm->stats_out()});
            };
            hooks.urBroadcastFreed = [this, id](std::vector<lease::LeaseId> ids) {
                m_net.ur_broadcast(id, gcs::MessageKind::LeaseFreed, LeaseFreedMsg{std::move(ids)});
            };
            if (m_cfg.recordTraces) {
                hooks.trace = [this](const lease::LeaseEvent &e) { m_result.leaseTrace.push_back({now(), e}); };
            }
            node->stack = std::make_unique<NodeStack>(NodeStack{
                id, stm::Store(id),
                lease::LeaseManager(id, numClasses, m_cfg.leaseMode, std::move(hooks), m_cfg.requestMissingOnly),
                dtd::Dispatcher(id, m_cfg.nodes, numClasses, m_cfg.dispatcher),
                sim::Cpu(m_cfg.coresPerNode, m_cfg.cpuWindowTicks)});
            m_wl.load(node->stack->store);
            node->rm = std::make_unique<ReplicationManager>(*node->stack, *this, m_wl.registry, *m_wl.classes,
                                                            m_cfg.replication);
            node->tf = std::make_unique<TransactionForwarder>(*node->rm, *this);
            node->rng.seed(m_cfg.seed * 0x9e3779b97f4a7c15ULL + id + 1);
            node->busy.assign(m_cfg.threadsPerNode, false);
            node->qhash.assign(numClasses, 0);
            m_nodes.push_back(std::move(node));
        }
        for (const auto &[owner, classes] : m_wl.initialLeases) {
            if (owner >= m_cfg.nodes) {
                throw ConfigError("initial lease owner outside the cluster");
            }
            for (auto &n : m_nodes) {
                n->stack->lease.bootstrap(owner, classes);
            }
        }
        for (auto &n : m_nodes) {
            for (ClassId cc = 0; cc < numClasses; ++cc) {
                n->qhash[cc] = queue_hash(n->stack->lease.queue(cc));
                n->cqDigest ^= n->qhash[cc];
            }
        }
        if (m_wl.overload) {
            const auto &o = *m_wl.overload;
            if (o.hotNode >= m_cfg.nodes) {
                throw ConfigError("overloaded node outside the cluster");
            }
            const auto from = static_cast<Tick>(o.injectSecond * static_cast<double>(m_cfg.ticksPerSecond));
            m_nodes[o.hotNode]->stack->cpu.inject_external_load(from, o.externalLoad);
        }
    }

    Cluster(const Cluster &) = delete;
    Cluster &operator=(const Cluster &) = delete;

    // --- Runtime
    Tick now() const override { return m_net.now(); }
    void at(Tick t, std::function<void()> fn) override { m_timers.at(t, std::move(fn)); }
    TxId next_tx_id() override { return ++m_nextTx; }

    void ur_broadcast(NodeId from, Wire msg) override
    {
        m_net.ur_broadcast(from, kind_of(msg), std::move(msg));
    }

    void send_p2p(NodeId from, NodeId to, Wire msg) override
    {
        m_net.send_p2p(from, to, kind_of(msg), std::move(msg));
    }

    void on_commit(const CommitRecord &rec) override
    {
        if (m_cfg.recordHistory) {
            m_result.history.push_back(rec);
        }
    }

    void on_decision(NodeId, const dtd::Decision &d) override
    {
        if (d.fallback && !m_stopped) {
            ++m_result.totals.fallbacks;
        }
    }

    void on_forward(TxId id, NodeId origin, NodeId target) override
    {
        if (!m_stopped) {
            ++m_second.forwards;
            ++m_result.totals.forwards;
        }
        if (m_cfg.recordTraces) {
            m_result.forwardTrace.push_back({now(), id, origin, target, false});
        }
    }

    void on_forward_abort(TxId id, NodeId origin) override
    {
        if (m_cfg.recordTraces) {
            m_result.forwardTrace.push_back({now(), id, origin, origin, true});
        }
    }

    // --- Inspection
    std::size_t size() const noexcept { return m_nodes.size(); }
    const NodeStack &node(NodeId id) const { return *m_nodes.at(id)->stack; }
    const ClusterConfig &config() const noexcept { return m_cfg; }

    RunResult run()
    {
        if (m_ran) {
            throw ProtocolError("a cluster runs once");
        }
        m_ran = true;
        for (NodeId id = 0; id < m_nodes.size(); ++id) {
            for (std::size_t t = 0; t < m_cfg.threadsPerNode; ++t) {
                at(0, [this, id, t] { start_next(id, t); });
            }
            if (m_cfg.gossipIntervalTicks > 0) {
                at(m_cfg.gossipIntervalTicks, [this, id] { gossip(id); });
            }
        }
        at(m_cfg.ticksPerSecond, [this] { on_second(); });

        try {
            loop();
            audit();
        } catch (const UnderflowViolation &e) {
            m_result.safety.noUnderflow = false;
            m_result.safety.problems.emplace_back(e.what());
        } catch (const ProtocolError &e) {
            m_result.safety.live = false;
            m_result.safety.problems.emplace_back(std::string("protocol error: ") + e.what());
        }
        m_result.endTick = now();
        if (m_cfg.recordNetLog) {
            m_result.netLog = m_net.log();
        }
        return std::move(m_result);
    }

private:
    struct Node {
        std::unique_ptr<NodeStack> stack;
        std::unique_ptr<ReplicationManager> rm;
        std::unique_ptr<TransactionForwarder> tf;
        workload::Rng rng;
        std::vector<bool> busy;
        // Incremental digest of the conflict queues plus a hash chain over the
        // queue-changing events, for prefix-wise agreement checks.
        std::vector<std::uint64_t> qhash;
        std::uint64_t cqDigest = 0;
        std::uint64_t chain = 0;
        std::vector<std::pair<std::uint64_t, std::uint64_t>> cqLog;
        std::set<lease::LeaseId> seenBlocked;
        Tick busyMark = 0;
    };

    struct SecondCounters {
        std::uint64_t commits = 0;
        std::uint64_t rwCommits = 0;
        std::uint64_t rwReused = 0;
        std::uint64_t leaseRequests = 0;
        std::uint64_t forwards = 0;
        std::uint64_t aborts = 0;
    };

    static std::uint64_t mix(std::uint64_t x) noexcept { return lease::ConflictClassMap::mix(x); }

    static std::uint64_t hash_id(const lease::LeaseId &id) noexcept
    {
        return mix(mix(mix(id.requester) ^ id.request) ^ id.slot);
    }

    static std::uint64_t queue_hash(const std::deque<lease::LeaseId> &q) noexcept
    {
        std::uint64_t h = 0x51ed270b27a3ULL;
        for (const auto &id : q) {
            h = mix(h ^ hash_id(id));
        }
        return h;
    }

    void loop()
    {
        const Tick hardEnd = m_stopTick + m_cfg.drainLimitTicks;
        for (;;) {
            const auto tn = m_net.next_tick();
            const auto ts = m_timers.next_tick();
            if (!tn && !ts) {
                break;
            }
            const Tick t = std::min(tn.value_or(~Tick{0}), ts.value_or(~Tick{0}));
            if (t > hardEnd) {
                m_result.safety.live = false;
                m_result.safety.problems.emplace_back("drain limit reached with events pending");
                break;
            }
            if (tn && *tn == t) {
                for (const auto &d : m_net.step()) {
                    deliver(d);
                }
            } else {
                m_net.advance_to(t);
            }
            m_timers.run_due(t);
        }
    }

    void deliver(const gcs::Delivery<Wire> &d)
    {
        Node &n = *m_nodes[d.node];
        const Wire &w = d.msg->payload;
        switch (d.kind) {
        case gcs::DeliveryKind::OptDeliver:
            n.stack->lease.on_opt_deliver(std::get<LeaseRequestMsg>(w).req);
            break;
        case gcs::DeliveryKind::ToDeliver: {
            const auto &m = std::get<LeaseRequestMsg>(w);
            n.stack->lease.on_to_deliver(m.req);
            if (m.stats) {
                n.stack->dtd.gossip_in(*m.stats);
            }
            cq_event(n, mix(0x70ULL ^ mix(m.req.requester) ^ m.req.seq), m.req.classes);
            break;
        }
        case gcs::DeliveryKind::UrDeliver:
            if (const auto *f = std::get_if<LeaseFreedMsg>(&w)) {
                std::vector<ClassId> touched;
                std::uint64_t h = 0xf4ULL;
                for (const auto &id : f->lors) {
                    const auto &cs = n.stack->lease.record(id).classes;
                    touched.insert(touched.end(), cs.begin(), cs.end());
                    h = mix(h ^ hash_id(id));
                }
                n.stack->lease.on_ur_deliver_freed(f->lors);
                cq_event(n, h, touched);
            } else if (const auto *c = std::get_if<CommitMsg>(&w)) {
                n.rm->on_commit_delivered(*c);
            }
            break;
        case gcs::DeliveryKind::P2pDeliver:
            if (const auto *fm = std::get_if<ForwardMsg>(&w)) {
                n.tf->handle_forwarded(*fm);
            } else if (const auto *r = std::get_if<ForwardReplyMsg>(&w)) {
                n.tf->on_reply(*r);
            } else if (const auto *g = std::get_if<dtd::StatsGossip>(&w)) {
                n.stack->dtd.gossip_in(*g);
            }
            break;
        }
    }

    void cq_event(Node &n, std::uint64_t eventHash, std::vector<ClassId> touched)
    {
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        for (ClassId cc : touched) {
            n.cqDigest ^= n.qhash[cc];
            n.qhash[cc] = queue_hash(n.stack->lease.queue(cc));
            n.cqDigest ^= n.qhash[cc];
        }
        n.chain = mix(n.chain ^ eventHash);
        n.cqLog.emplace_back(n.chain, n.cqDigest);
    }

    void start_next(NodeId id, std::size_t thread)
    {
        Node &n = *m_nodes[id];
        if (m_stopped) {
            n.busy[thread] = false;
            return;
        }
        n.busy[thread] = true;
        ++m_result.totals.generated;
        workload::WorkloadJob job = m_wl.next(id, n.rng);
        n.rm->run_transaction(std::move(job), [this, id, thread](const TxOutcome &out) { finished(id, thread, out); });
    }

    void finished(NodeId id, std::size_t thread, const TxOutcome &out)
    {
        if (m_stopped) {
            ++m_result.totals.drained;
        } else if (out.committed) {
            ++m_result.totals.committed;
            ++m_second.commits;
            if (!out.readOnly) {
                ++m_result.totals.rwCommitted;
                ++m_second.rwCommits;
                if (out.reused) {
                    ++m_result.totals.rwReused;
                    ++m_second.rwReused;
                }
                if (m_cfg.recordTraces) {
                    m_result.commitLog.push_back(
                        {now(), out.txId, id, out.committer, out.nClasses, out.reused, out.forwarded});
                }
            }
        } else {
            ++m_result.totals.aborted;
            ++m_second.aborts;
        }
        m_nodes[id]->busy[thread] = false;
        start_next(id, thread);
    }

    void gossip(NodeId id)
    {
        if (m_stopped) {
            return;
        }
        Node &n = *m_nodes[id];
        const auto stats = n.rm->stats_out();
        for (NodeId j = 0; j < m_nodes.size(); ++j) {
            if (j != id) {
                send_p2p(id, j, *stats);
            }
        }
        at(now() + m_cfg.gossipIntervalTicks, [this, id] { gossip(id); });
    }

    void on_second()
    {
        const Tick t = now();
        MetricsRow row;
        row.second = t / m_cfg.ticksPerSecond - 1;
        row.throughput = static_cast<double>(m_second.commits);
        row.leaseReuseRate =
            m_second.rwCommits ? static_cast<double>(m_second.rwReused) / static_cast<double>(m_second.rwCommits) : 0.0;
        row.leaseReqRate = static_cast<double>(m_second.leaseRequests);
        row.forwards = static_cast<double>(m_second.forwards);
        row.aborts = static_cast<double>(m_second.aborts);
        for (auto &n : m_nodes) {
            auto &cpu = n->stack->cpu;
            (void)cpu.utilization(t);
            const Tick busy = cpu.busy_until(t);
            const double frac = static_cast<double>(busy - n->busyMark) /
                                (static_cast<double>(m_cfg.ticksPerSecond) * static_cast<double>(cpu.cores()));
            n->busyMark = busy;
            row.cpu.push_back(std::min(1.0, frac + cpu.external_load(t)));
            n->stack->dtd.decay();
            sample_records(*n);
        }
        m_result.rows.push_back(std::move(row));
        m_second = {};

        if (t >= m_stopTick) {
            stop();
        } else {
            at(std::min(t + m_cfg.ticksPerSecond, m_stopTick), [this] { on_second(); });
        }
    }

    void stop()
    {
        m_stopped = true;
        for (auto &n : m_nodes) {
            m_result.totals.inFlightAtEnd += static_cast<std::uint64_t>(std::count(n->busy.begin(), n->busy.end(), true));
        }
    }

    void sample_records(Node &n)
    {
        n.stack->lease.for_each_record([&](const lease::LeaseRecord &r) {
            if (r.activeXacts < 0) {
                m_result.safety.noUnderflow = false;
            }
            if (r.blocked) {
                n.seenBlocked.insert(r.id);
            } else if (n.seenBlocked.count(r.id)) {
                m_result.safety.blockedMonotone = false;
            }
        });
    }

    void fail(bool SafetyReport::*flag, std::string why)
    {
        m_result.safety.*flag = false;
        m_result.safety.problems.push_back(std::move(why));
    }

    void audit()
    {
        auto &s = m_result.safety;
        auto &tot = m_result.totals;

        for (auto &n : m_nodes) {
            sample_records(*n);
        }
        if (!s.noUnderflow) {
            s.problems.emplace_back("a record's activeXacts went negative");
        }
        if (!s.blockedMonotone) {
            s.problems.emplace_back("a blocked record became unblocked");
        }

        // Liveness: nothing may still be waiting once the queues drained.
        for (auto &n : m_nodes) {
            const auto &lm = n->stack->lease;
            if (lm.live_handles() != 0 || n->rm->waiting() != 0 || n->rm->active_tasks() != 0 ||
                std::count(n->busy.begin(), n->busy.end(), true) != 0) {
                fail(&SafetyReport::live, "node " + std::to_string(n->stack->id) + " did not quiesce (" +
                                              std::to_string(lm.pending_handles()) + " unresolved lease handles)");
            }
        }

        if (tot.committed + tot.aborted + tot.inFlightAtEnd != tot.generated) {
            fail(&SafetyReport::accounting, "committed != generated - aborted - in-flight");
        }

        // Replica convergence and the application invariant.
        const auto ref = m_nodes[0]->stack->store.canonical();
        for (auto &n : m_nodes) {
            if (n->stack->store.canonical() != ref) {
                fail(&SafetyReport::converged, "replica " + std::to_string(n->stack->id) + " diverged");
            }
            if (m_wl.invariant && !m_wl.invariant(n->stack->store)) {
                fail(&SafetyReport::invariantHolds,
                     m_wl.invariantName + " violated on replica " + std::to_string(n->stack->id));
            }
        }

        // Conflict queues agree on every common prefix of queue events, and
        // everywhere once all events are delivered.
        const auto &base = m_nodes[0]->cqLog;
        for (auto &n : m_nodes) {
            const auto &log = n->cqLog;
            const std::size_t k = std::min(base.size(), log.size());
            for (std::size_t i = 0; i < k && base[i].first == log[i].first; ++i) {
                if (base[i].second != log[i].second) {
                    fail(&SafetyReport::cqAgreement, "queue contents differ after a common event prefix");
                    break;
                }
            }
            if (n->stack->lease.snapshot() != m_nodes[0]->stack->lease.snapshot()) {
                fail(&SafetyReport::cqAgreement, "final queue contents differ");
            }
        }

        for (auto &n : m_nodes) {
            for (const auto &[id, count] : n->tf->sent()) {
                if (count > 1) {
                    fail(&SafetyReport::atMostOneForward, "transaction " + std::to_string(id) + " forwarded twice");
                    break;
                }
            }
        }

        // The commit order recorded at committers must explain the final store.
        if (m_cfg.recordHistory) {
            std::map<ItemId, TxId> last;
            for (const auto &rec : m_result.history) {
                for (ItemId k : rec.writes) {
                    last[k] = rec.txId;
                }
            }
            for (const auto &[k, writer] : last) {
                if (m_nodes[0]->stack->store.cell(k).writer != writer) {
                    fail(&SafetyReport::historyConsistent, "final writer disagrees with the commit order");
                    break;
                }
            }
        }
    }

    ClusterConfig m_cfg;
    WorkloadBinding m_wl;
    gcs::GroupComm<Wire> m_net;
    sim::Scheduler m_timers;
    std::vector<std::unique_ptr<Node>> m_nodes;
    RunResult m_result;
    SecondCounters m_second;
    Tick m_stopTick = 0;
    TxId m_nextTx = 0;
    bool m_stopped = false;
    bool m_ran = false;
};

} // namespace lilac
