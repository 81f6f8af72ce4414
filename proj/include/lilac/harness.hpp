// Experiment configuration, workload wiring, CSV output and sweeps.

#pragma once

#include "cluster.hpp"
#include "serializability.hpp"
#include "workload.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace lilac {

enum class Variant : std::uint8_t { Alc, Fgl, MgAlc, LilacSt, LilacLt, LilacOpt };
enum class WorkloadKind : std::uint8_t { Bank, Tpcc, Overload };

inline std::string_view to_string(Variant v) noexcept
{
    switch (v) {
    case Variant::Alc: return "alc";
    case Variant::Fgl: return "fgl";
    case Variant::MgAlc: return "mg-alc";
    case Variant::LilacSt: return "lilac-st";
    case Variant::LilacLt: return "lilac-lt";
    case Variant::LilacOpt: return "lilac-opt";
    }
    return "?";
}

inline std::string_view to_string(WorkloadKind w) noexcept
{
    switch (w) {
    case WorkloadKind::Bank: return "bank";
    case WorkloadKind::Tpcc: return "tpcc";
    case WorkloadKind::Overload: return "overload";
    }
    return "?";
}

inline Variant parse_variant(std::string_view s)
{
    for (Variant v : {Variant::Alc, Variant::Fgl, Variant::MgAlc, Variant::LilacSt, Variant::LilacLt, Variant::LilacOpt}) {
        if (s == to_string(v)) {
            return v;
        }
    }
    throw ConfigError("unknown variant '" + std::string(s) + "'");
}

inline WorkloadKind parse_workload(std::string_view s)
{
    for (WorkloadKind w : {WorkloadKind::Bank, WorkloadKind::Tpcc, WorkloadKind::Overload}) {
        if (s == to_string(w)) {
            return w;
        }
    }
    throw ConfigError("unknown workload '" + std::string(s) + "'");
}

inline lease::Mode lease_mode(Variant v) noexcept
{
    return (v == Variant::Alc || v == Variant::MgAlc) ? lease::Mode::Coarse : lease::Mode::Fine;
}

inline dtd::Policy policy_of(Variant v) noexcept
{
    switch (v) {
    case Variant::Alc:
    case Variant::Fgl: return dtd::Policy::None;
    case Variant::MgAlc:
    case Variant::LilacOpt: return dtd::Policy::Optimal;
    case Variant::LilacSt: return dtd::Policy::ShortTerm;
    case Variant::LilacLt: return dtd::Policy::LongTerm;
    }
    return dtd::Policy::None;
}

struct ExperimentConfig {
    Variant variant = Variant::Fgl;
    WorkloadKind workload = WorkloadKind::Bank;
    std::size_t nodes = 4;
    std::size_t threads = 2;
    double locality = 1.0;
    double duration = 10.0;
    std::uint64_t seed = 1;
    int maxRetries = 3;
    bool cpuControl = true;
    bool reExecuteAlways = false;
    bool requestMissingOnly = false;
    // Each partition (warehouse) starts with its classes leased to its node.
    bool initialLeases = true;

    // Time model: communication steps are scaled to ticks.
    Tick ticksPerSecond = 1000;
    Tick stepTicks = 10;
    Tick p2pSteps = 1;
    Tick urbSteps = 2;
    Tick oabOptSteps = 1;
    Tick oabTotalSteps = 3;
    std::size_t cores = 4;
    Tick execBaseTicks = 1;
    double execTicksPerOp = 0.1;
    Tick validateTicks = 1;
    Tick applyTicks = 1;
    Tick gossipTicks = 100;
    Tick cpuWindowTicks = 100;

    double costP2p = 1.0;
    double costUrb = 2.0;
    double costAb = 3.0;
    double maxCpu = 0.85;
    double halfLife = 10.0;

    // Bank
    std::size_t partitionsPerNode = 2;
    std::size_t accountsPerPartition = 1000;
    std::size_t classesPerPartition = 16;
    double readWriteRatio = 0.5;

    // TPC-C
    double mistakeProb = 0.2;
    double paymentFraction = 0.95;

    // Overload scenario
    double injectSecond = 40.0;
    double externalLoad = 0.97;
    double hotProb = 0.2;

    bool recordTraces = false;
    bool recordHistory = true;

    void validate() const
    {
        if ((variant == Variant::LilacOpt || variant == Variant::MgAlc) && workload == WorkloadKind::Tpcc) {
            throw ConfigError("the optimal migration policy is defined for the bank workload only");
        }
        if (nodes == 0 || threads == 0 || cores == 0 || ticksPerSecond == 0 || stepTicks == 0) {
            throw ConfigError("nodes, threads, cores and tick sizes must be positive");
        }
        if (duration <= 0.0) {
            throw ConfigError("duration must be positive");
        }
        if (locality < 0.0 || locality > 1.0) {
            throw ConfigError("locality must lie in [0,1]");
        }
        if (maxCpu <= 0.0 || maxCpu > 1.0) {
            throw ConfigError("maxCpu must lie in (0,1]");
        }
        if (maxRetries < 0) {
            throw ConfigError("maxRetries must be non-negative");
        }
        if (workload == WorkloadKind::Overload && injectSecond >= duration) {
            throw ConfigError("overload injection must happen before the run ends");
        }
    }

    // Variant name as it appears in CSV output.
    std::string label() const
    {
        std::string s(to_string(variant));
        if (!cpuControl && policy_of(variant) != dtd::Policy::None) {
            s += "-noctrl";
        }
        return s;
    }
};

inline ClusterConfig cluster_config(const ExperimentConfig &e)
{
    ClusterConfig c;
    c.nodes = e.nodes;
    c.threadsPerNode = e.threads;
    c.coresPerNode = e.cores;
    c.leaseMode = lease_mode(e.variant);
    c.requestMissingOnly = e.requestMissingOnly;
    c.replication.policy = policy_of(e.variant);
    c.replication.cpuControl = e.cpuControl;
    c.replication.maxRetries = e.maxRetries;
    c.replication.reExecuteAlways = e.reExecuteAlways;
    c.replication.execBaseTicks = e.execBaseTicks;
    c.replication.execTicksPerOp = e.execTicksPerOp;
    c.replication.validateTicks = e.validateTicks;
    c.replication.applyTicks = e.applyTicks;
    c.dispatcher.costs = dtd::CostConstants{e.costP2p, e.costUrb, e.costAb};
    c.dispatcher.maxCpu = e.maxCpu;
    c.dispatcher.halfLifeSeconds = e.halfLife;
    c.latency = gcs::LatencyConfig{e.p2pSteps * e.stepTicks, e.urbSteps * e.stepTicks, e.oabOptSteps * e.stepTicks,
                                   e.oabTotalSteps * e.stepTicks, 0.0, 0};
    c.ticksPerSecond = e.ticksPerSecond;
    c.gossipIntervalTicks = e.gossipTicks;
    c.cpuWindowTicks = e.cpuWindowTicks;
    c.durationSeconds = e.duration;
    c.seed = e.seed;
    c.recordTraces = e.recordTraces;
    c.recordHistory = e.recordHistory;
    return c;
}

inline workload::BankConfig bank_config(const ExperimentConfig &e)
{
    workload::BankConfig b;
    b.nodes = e.nodes;
    b.partitionsPerNode = e.partitionsPerNode;
    b.accountsPerPartition = e.accountsPerPartition;
    b.classesPerPartition = e.classesPerPartition;
    b.locality = e.locality;
    b.readWriteRatio = e.readWriteRatio;
    if (e.workload == WorkloadKind::Overload) {
        auto o = workload::overload_scenario(b, 0);
        o.injectSecond = e.injectSecond;
        o.externalLoad = e.externalLoad;
        o.hotProb = e.hotProb;
        b.overload = o;
    }
    b.validate();
    return b;
}

inline workload::TpccConfig tpcc_config(const ExperimentConfig &e)
{
    workload::TpccConfig t;
    t.nodes = e.nodes;
    t.balancerMistakeProb = e.mistakeProb;
    t.paymentFraction = e.paymentFraction;
    t.newOrderFraction = 1.0 - e.paymentFraction;
    t.validate();
    return t;
}

inline WorkloadBinding bind_workload(const ExperimentConfig &e)
{
    WorkloadBinding w;
    w.registry = workload::standard_registry();
    if (e.workload == WorkloadKind::Tpcc) {
        const auto t = tpcc_config(e);
        w.classes = std::make_shared<const lease::ConflictClassMap>(t.class_map());
        w.load = [t](stm::Store &s) { t.load(s); };
        w.next = [t](NodeId n, workload::Rng &rng) { return workload::tpcc_next_tx(t, n, rng).second; };
        w.invariantName = "warehouse/district ytd consistency";
        w.invariant = [t](const stm::Store &s) { return t.ytd_consistent(s); };
        if (e.initialLeases) {
            const std::size_t per = t.classes_per_warehouse();
            for (std::size_t wh = 0; wh < t.num_warehouses(); ++wh) {
                std::vector<ClassId> cs(per);
                std::iota(cs.begin(), cs.end(), static_cast<ClassId>(wh * per));
                w.initialLeases.emplace_back(t.region_of(wh), std::move(cs));
            }
        }
        return w;
    }
    const auto b = bank_config(e);
    w.classes = std::make_shared<const lease::ConflictClassMap>(b.class_map());
    w.load = [b](stm::Store &s) { b.load(s); };
    w.next = [b](NodeId n, workload::Rng &rng) { return workload::bank_next_tx(b, n, rng); };
    const Value total = b.initialBalance * static_cast<Value>(b.num_accounts());
    w.invariantName = "bank balance conservation";
    w.invariant = [b, total](const stm::Store &s) { return b.total_balance(s) == total; };
    w.overload = b.overload;
    if (e.initialLeases) {
        for (std::uint32_t p = 0; p < b.num_partitions(); ++p) {
            std::vector<ClassId> cs(b.classesPerPartition);
            std::iota(cs.begin(), cs.end(), static_cast<ClassId>(p * b.classesPerPartition));
            w.initialLeases.emplace_back(b.partition_home(p), std::move(cs));
        }
    }
    return w;
}

struct ExperimentResult {
    ExperimentConfig config;
    RunResult run;
    SerializabilityVerdict verdict;

    bool safe() const noexcept { return run.safety.ok() && verdict.serializable; }

    // Mean committed transactions per second over [from, to) seconds.
    double throughput(double from = 0.0, double to = 1e18) const
    {
        double sum = 0.0;
        std::size_t k = 0;
        for (const auto &r : run.rows) {
            const auto s = static_cast<double>(r.second);
            if (s >= from && s < to) {
                sum += r.throughput;
                ++k;
            }
        }
        return k ? sum / static_cast<double>(k) : 0.0;
    }

    double reuse_rate() const noexcept
    {
        const auto &t = run.totals;
        return t.rwCommitted ? static_cast<double>(t.rwReused) / static_cast<double>(t.rwCommitted) : 0.0;
    }

    double lease_request_rate() const noexcept
    {
        return static_cast<double>(run.totals.leaseRequests) / config.duration;
    }
};

inline ExperimentResult run_experiment(const ExperimentConfig &e)
{
    e.validate();
    ExperimentResult r;
    r.config = e;
    Cluster cluster(cluster_config(e), bind_workload(e));
    r.run = cluster.run();
    if (e.recordHistory) {
        r.verdict = check_serializability(r.run.history);
    }
    return r;
}

// --- CSV

inline void write_csv_header(std::ostream &os, std::size_t nodes)
{
    os << "second,variant,throughput,lease_reuse_rate,lease_req_rate,forwards,aborts";
    for (std::size_t i = 0; i < nodes; ++i) {
        os << ",cpu_" << i;
    }
    os << '\n';
}

inline void write_csv_rows(std::ostream &os, const std::string &variant, const std::vector<MetricsRow> &rows)
{
    const auto flags = os.flags();
    const auto prec = os.precision();
    os << std::fixed << std::setprecision(4);
    for (const auto &r : rows) {
        os << r.second << ',' << variant << ',' << r.throughput << ',' << r.leaseReuseRate << ',' << r.leaseReqRate
           << ',' << r.forwards << ',' << r.aborts;
        for (double c : r.cpu) {
            os << ',' << c;
        }
        os << '\n';
    }
    os.flags(flags);
    os.precision(prec);
}

inline void write_commit_log(std::ostream &os, const std::vector<CommitLogEntry> &log)
{
    for (const auto &c : log) {
        os << c.tick << ',' << c.txId << ',' << c.origin << ',' << c.committer << ',' << c.nClasses << ','
           << (c.reused ? 1 : 0) << ',' << (c.forwarded ? 1 : 0) << '\n';
    }
}

inline void write_lease_trace(std::ostream &os, const std::vector<LeaseTraceEntry> &trace)
{
    for (const auto &t : trace) {
        os << t.tick << ',' << t.event.node << ',' << lease::to_string(t.event.kind) << ',' << t.event.cc << '\n';
    }
}

inline void write_forward_trace(std::ostream &os, const std::vector<ForwardTraceEntry> &trace)
{
    for (const auto &f : trace) {
        if (f.abort) {
            os << f.tick << ',' << f.txId << ",forward_abort\n";
        } else {
            os << f.tick << ',' << f.txId << ",forward," << f.origin << ',' << f.target << '\n';
        }
    }
}

// --- flat "key = value" configuration

namespace detail {

inline std::string trim(std::string_view s)
{
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string &key, const std::string &v)
{
    T out{};
    const auto *first = v.data();
    const auto *last = v.data() + v.size();
    const auto res = std::from_chars(first, last, out);
    if (res.ec != std::errc() || res.ptr != last) {
        throw ConfigError("invalid value '" + v + "' for " + key);
    }
    return out;
}

inline bool parse_bool(const std::string &key, const std::string &v)
{
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    throw ConfigError("invalid boolean '" + v + "' for " + key);
}

} // namespace detail

inline void apply_setting(ExperimentConfig &c, const std::string &key, const std::string &value)
{
    using detail::parse_bool;
    using detail::parse_number;
    const std::map<std::string, std::function<void(const std::string &)>> setters = {
        {"variant", [&](const std::string &v) { c.variant = parse_variant(v); }},
        {"policy",
         [&](const std::string &v) {
             // Policy shorthand over fine-grained leases; "alc"/"none" keep coarse ALC.
             if (v == "none" || v == "alc") {
                 c.variant = Variant::Alc;
             } else if (v == "st") {
                 c.variant = Variant::LilacSt;
             } else if (v == "lt") {
                 c.variant = Variant::LilacLt;
             } else if (v == "opt") {
                 c.variant = Variant::LilacOpt;
             } else {
                 throw ConfigError("unknown policy '" + v + "'");
             }
         }},
        {"workload", [&](const std::string &v) { c.workload = parse_workload(v); }},
        {"nodes", [&](const std::string &v) { c.nodes = parse_number<std::size_t>(key, v); }},
        {"threads", [&](const std::string &v) { c.threads = parse_number<std::size_t>(key, v); }},
        {"locality", [&](const std::string &v) { c.locality = parse_number<double>(key, v); }},
        {"duration", [&](const std::string &v) { c.duration = parse_number<double>(key, v); }},
        {"seed", [&](const std::string &v) { c.seed = parse_number<std::uint64_t>(key, v); }},
        {"max_retries", [&](const std::string &v) { c.maxRetries = parse_number<int>(key, v); }},
        {"cpu_control", [&](const std::string &v) { c.cpuControl = parse_bool(key, v); }},
        {"re_execute_always", [&](const std::string &v) { c.reExecuteAlways = parse_bool(key, v); }},
        {"request_missing_only", [&](const std::string &v) { c.requestMissingOnly = parse_bool(key, v); }},
        {"initial_leases", [&](const std::string &v) { c.initialLeases = parse_bool(key, v); }},
        {"ticks_per_second", [&](const std::string &v) { c.ticksPerSecond = parse_number<Tick>(key, v); }},
        {"step_ticks", [&](const std::string &v) { c.stepTicks = parse_number<Tick>(key, v); }},
        {"p2p_steps", [&](const std::string &v) { c.p2pSteps = parse_number<Tick>(key, v); }},
        {"urb_steps", [&](const std::string &v) { c.urbSteps = parse_number<Tick>(key, v); }},
        {"oab_opt_steps", [&](const std::string &v) { c.oabOptSteps = parse_number<Tick>(key, v); }},
        {"oab_total_steps", [&](const std::string &v) { c.oabTotalSteps = parse_number<Tick>(key, v); }},
        {"cores", [&](const std::string &v) { c.cores = parse_number<std::size_t>(key, v); }},
        {"exec_base_ticks", [&](const std::string &v) { c.execBaseTicks = parse_number<Tick>(key, v); }},
        {"exec_ticks_per_op", [&](const std::string &v) { c.execTicksPerOp = parse_number<double>(key, v); }},
        {"validate_ticks", [&](const std::string &v) { c.validateTicks = parse_number<Tick>(key, v); }},
        {"apply_ticks", [&](const std::string &v) { c.applyTicks = parse_number<Tick>(key, v); }},
        {"gossip_ticks", [&](const std::string &v) { c.gossipTicks = parse_number<Tick>(key, v); }},
        {"cpu_window_ticks", [&](const std::string &v) { c.cpuWindowTicks = parse_number<Tick>(key, v); }},
        {"cost_p2p", [&](const std::string &v) { c.costP2p = parse_number<double>(key, v); }},
        {"cost_urb", [&](const std::string &v) { c.costUrb = parse_number<double>(key, v); }},
        {"cost_ab", [&](const std::string &v) { c.costAb = parse_number<double>(key, v); }},
        {"max_cpu", [&](const std::string &v) { c.maxCpu = parse_number<double>(key, v); }},
        {"half_life", [&](const std::string &v) { c.halfLife = parse_number<double>(key, v); }},
        {"partitions_per_node", [&](const std::string &v) { c.partitionsPerNode = parse_number<std::size_t>(key, v); }},
        {"accounts_per_partition",
         [&](const std::string &v) { c.accountsPerPartition = parse_number<std::size_t>(key, v); }},
        {"classes_per_partition",
         [&](const std::string &v) { c.classesPerPartition = parse_number<std::size_t>(key, v); }},
        {"read_write_ratio", [&](const std::string &v) { c.readWriteRatio = parse_number<double>(key, v); }},
        {"mistake_prob", [&](const std::string &v) { c.mistakeProb = parse_number<double>(key, v); }},
        {"payment_fraction", [&](const std::string &v) { c.paymentFraction = parse_number<double>(key, v); }},
        {"inject_second", [&](const std::string &v) { c.injectSecond = parse_number<double>(key, v); }},
        {"external_load", [&](const std::string &v) { c.externalLoad = parse_number<double>(key, v); }},
        {"hot_prob", [&](const std::string &v) { c.hotProb = parse_number<double>(key, v); }},
        {"record_traces", [&](const std::string &v) { c.recordTraces = parse_bool(key, v); }},
        {"record_history", [&](const std::string &v) { c.recordHistory = parse_bool(key, v); }},
    };
    auto it = setters.find(key);
    if (it == setters.end()) {
        throw ConfigError("unknown configuration key '" + key + "'");
    }
    it->second(value);
}

inline ExperimentConfig parse_config(std::istream &in, ExperimentConfig base = {})
{
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        const std::string t = detail::trim(line);
        if (t.empty()) {
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineNo) + ": expected key = value");
        }
        apply_setting(base, detail::trim(std::string_view(t).substr(0, eq)),
                      detail::trim(std::string_view(t).substr(eq + 1)));
    }
    return base;
}

inline ExperimentConfig load_config(const std::string &path, ExperimentConfig base = {})
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path);
    }
    return parse_config(in, std::move(base));
}

// One experiment per value of `param`, same seed discipline for all.
inline std::vector<ExperimentResult> sweep(const ExperimentConfig &base, const std::string &param,
                                           const std::vector<std::string> &values)
{
    std::vector<ExperimentResult> out;
    out.reserve(values.size());
    for (const auto &v : values) {
        ExperimentConfig c = base;
        apply_setting(c, param, v);
        out.push_back(run_experiment(c));
    }
    return out;
}

inline void write_sweep_csv(std::ostream &os, const std::string &param, const std::vector<std::string> &values,
                            const std::vector<ExperimentResult> &results)
{
    if (results.empty()) {
        return;
    }
    write_csv_header(os, results.front().config.nodes);
    for (std::size_t i = 0; i < results.size(); ++i) {
        write_csv_rows(os, results[i].config.label() + ":" + param + "=" + values[i], results[i].run.rows);
    }
}

} // namespace lilac
