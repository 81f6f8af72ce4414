// Distributed transaction dispatcher: chooses which node runs the commit phase
// of a transaction touching conflict classes S.
//
//   minimise   sum_i N_i * C(i, S)
//   subject to sum_i N_i = 1,   CPU_i * N_i < maxCPU
//
// N is one-hot, so the problem is an argmin over the nodes that satisfy the CPU
// cap. Ties go to the lower cost, then to the origin, then to the lowest id.
// If every node is over the cap the origin keeps its own transaction and the
// decision is flagged as a constraint fallback.

#pragma once

#include "types.hpp"

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace lilac::dtd {

enum class Policy : std::uint8_t { None, ShortTerm, LongTerm, Optimal };

inline constexpr std::string_view to_string(Policy p) noexcept
{
    switch (p) {
    case Policy::None: return "none";
    case Policy::ShortTerm: return "st";
    case Policy::LongTerm: return "lt";
    case Policy::Optimal: return "opt";
    }
    return "?";
}

// Communication-step cost of each GCS primitive.
struct CostConstants {
    double p2p = 1.0;
    double urb = 2.0;
    double ab = 3.0;
};

template <class V>
concept DispatchView = requires(const V &v, NodeId i, ClassId x) {
    { v.nodes() } -> std::convertible_to<std::size_t>;
    { v.freq(i, x) } -> std::convertible_to<double>;
    { v.owns(i, x) } -> std::convertible_to<bool>;
    { v.cpu(i) } -> std::convertible_to<double>;
};

// Immediate GCS cost of letting node i commit a transaction originated at `origin`.
template <DispatchView V>
double sc_cost(const V &view, const CostConstants &c, NodeId i, std::span<const ClassId> S, NodeId origin)
{
    bool ownsAll = true;
    for (ClassId x : S) {
        if (!view.owns(i, x)) {
            ownsAll = false;
            break;
        }
    }
    if (i == origin) {
        return ownsAll ? c.urb : c.ab + 2.0 * c.urb;
    }
    return ownsAll ? c.p2p + c.urb : c.p2p + c.ab + 2.0 * c.urb;
}

// Long-term cost: how often every other node touches the classes in S.
template <DispatchView V>
double lc_cost(const V &view, NodeId i, std::span<const ClassId> S)
{
    double sum = 0.0;
    for (ClassId x : S) {
        for (NodeId j = 0; j < view.nodes(); ++j) {
            if (j != i) {
                sum += view.freq(j, x);
            }
        }
    }
    return sum;
}

struct Decision {
    NodeId node = 0;
    double cost = 0.0;
    bool fallback = false;
};

template <DispatchView V>
double policy_cost(const V &view, const CostConstants &c, Policy p, NodeId i, std::span<const ClassId> S,
                   NodeId origin, std::optional<NodeId> home)
{
    switch (p) {
    case Policy::ShortTerm: return sc_cost(view, c, i, S, origin);
    case Policy::LongTerm: return lc_cost(view, i, S);
    case Policy::Optimal: return (home && i == *home) ? 0.0 : 1.0;
    case Policy::None: return i == origin ? 0.0 : 1.0;
    }
    return 0.0;
}

template <DispatchView V>
Decision decide(const V &view, const CostConstants &c, double maxCpu, NodeId origin, std::span<const ClassId> S,
                Policy policy, std::optional<NodeId> home = std::nullopt)
{
    if (policy == Policy::None) {
        return Decision{origin, 0.0, false};
    }
    std::optional<Decision> best;
    for (NodeId i = 0; i < view.nodes(); ++i) {
        if (!(view.cpu(i) < maxCpu)) {
            continue;
        }
        const double cost = policy_cost(view, c, policy, i, S, origin, home);
        if (!best || cost < best->cost || (cost == best->cost && i == origin && best->node != origin)) {
            best = Decision{i, cost, false};
        }
    }
    if (!best) {
        return Decision{origin, policy_cost(view, c, policy, origin, S, origin, home), true};
    }
    return *best;
}

// Plain matrices; handy for tests and offline evaluation.
struct MatrixView {
    std::size_t n = 0;
    std::size_t classes = 0;
    std::vector<double> F;   // n x classes
    std::vector<char> L;     // n x classes
    std::vector<double> CPU; // n

    MatrixView(std::size_t nodes, std::size_t numClasses)
        : n(nodes), classes(numClasses), F(nodes * numClasses, 0.0), L(nodes * numClasses, 0), CPU(nodes, 0.0)
    {
    }

    std::size_t nodes() const noexcept { return n; }
    double freq(NodeId i, ClassId x) const { return F[i * classes + x]; }
    bool owns(NodeId i, ClassId x) const { return L[i * classes + x] != 0; }
    double cpu(NodeId i) const { return CPU[i]; }
    double &freq_at(NodeId i, ClassId x) { return F[i * classes + x]; }
    void set_owns(NodeId i, ClassId x, bool v) { L[i * classes + x] = v ? 1 : 0; }
};

struct StatsGossip {
    NodeId sender = 0;
    std::uint64_t seq = 0;
    std::vector<double> freq; // decayed access counts, one per conflict class
    double cpu = 0.0;
};

struct DispatcherConfig {
    CostConstants costs;
    double maxCpu = 0.85;
    double halfLifeSeconds = 10.0;
};

// Node-local dispatcher state: the local row of F is exact, remote rows and
// CPU figures arrive through gossip. Lease ownership is supplied by the caller.
class Dispatcher {
public:
    using OwnsFn = std::function<bool(NodeId, ClassId)>;

    Dispatcher(NodeId self, std::size_t nodes, std::size_t classes, DispatcherConfig cfg = {})
        : m_self(self), m_cfg(cfg), m_rows(nodes, std::vector<double>(classes, 0.0)), m_cpu(nodes, 0.0),
          m_lastSeq(nodes, 0)
    {
        if (m_cfg.halfLifeSeconds <= 0.0) {
            throw ConfigError("statistics half-life must be positive");
        }
        m_alpha = std::pow(0.5, 1.0 / m_cfg.halfLifeSeconds);
    }

    NodeId self() const noexcept { return m_self; }
    const DispatcherConfig &config() const noexcept { return m_cfg; }
    std::size_t nodes() const noexcept { return m_rows.size(); }

    void record_access(std::span<const ClassId> S)
    {
        for (ClassId x : S) {
            m_rows[m_self].at(x) += 1.0;
        }
    }

    // Called once per simulated second.
    void decay()
    {
        for (auto &row : m_rows) {
            for (double &f : row) {
                f *= m_alpha;
            }
        }
    }

    // Per-second access rate estimate F(i,x).
    double freq(NodeId i, ClassId x) const { return m_rows[i][x] * (1.0 - m_alpha); }
    double cpu(NodeId i) const { return m_cpu[i]; }
    void set_local_cpu(double u) { m_cpu[m_self] = u; }

    StatsGossip gossip_out()
    {
        return StatsGossip{m_self, ++m_seq, m_rows[m_self], m_cpu[m_self]};
    }

    void gossip_in(const StatsGossip &g)
    {
        if (g.sender == m_self || g.sender >= m_rows.size() || g.seq <= m_lastSeq[g.sender]) {
            return;
        }
        m_lastSeq[g.sender] = g.seq;
        m_rows[g.sender] = g.freq;
        m_cpu[g.sender] = g.cpu;
    }

    Decision decide(NodeId origin, std::span<const ClassId> S, Policy policy, std::optional<NodeId> home,
                    const OwnsFn &owns, bool cpuControl = true) const
    {
        const LiveView view{*this, owns};
        const double cap = cpuControl ? m_cfg.maxCpu : std::numeric_limits<double>::infinity();
        return dtd::decide(view, m_cfg.costs, cap, origin, S, policy, home);
    }

private:
    struct LiveView {
        const Dispatcher &d;
        const OwnsFn &ownsFn;
        std::size_t nodes() const noexcept { return d.nodes(); }
        double freq(NodeId i, ClassId x) const { return d.freq(i, x); }
        bool owns(NodeId i, ClassId x) const { return ownsFn(i, x); }
        double cpu(NodeId i) const { return d.cpu(i); }
    };

    NodeId m_self;
    DispatcherConfig m_cfg;
    double m_alpha = 1.0;
    std::vector<std::vector<double>> m_rows;
    std::vector<double> m_cpu;
    std::vector<std::uint64_t> m_lastSeq;
    std::uint64_t m_seq = 0;
};

} // namespace lilac::dtd
