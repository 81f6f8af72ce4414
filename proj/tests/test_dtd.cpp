#include <lilac/dtd.hpp>

#include <gtest/gtest.h>

#include <limits>
#include <random>
#include <vector>

using namespace lilac;
using namespace lilac::dtd;

namespace {

const CostConstants kSteps{};

// Exhaustive reference minimiser, written against the cost tables rather than
// the library's helpers.
Decision brute_force(const MatrixView &v, double maxCpu, NodeId origin, const std::vector<ClassId> &S, Policy p)
{
    auto cost = [&](NodeId i) {
        if (p == Policy::LongTerm) {
            double sum = 0.0;
            for (ClassId x : S) {
                for (NodeId j = 0; j < v.n; ++j) {
                    sum += j == i ? 0.0 : v.F[j * v.classes + x];
                }
            }
            return sum;
        }
        bool all = true;
        for (ClassId x : S) {
            all = all && v.L[i * v.classes + x];
        }
        static const double table[2][2] = {{3.0 + 4.0 + 1.0, 1.0 + 2.0}, {3.0 + 4.0, 2.0}};
        return table[i == origin][all];
    };
    std::vector<NodeId> eligible;
    for (NodeId i = 0; i < v.n; ++i) {
        if (v.CPU[i] < maxCpu) {
            eligible.push_back(i);
        }
    }
    if (eligible.empty()) {
        return Decision{origin, cost(origin), true};
    }
    double best = std::numeric_limits<double>::infinity();
    for (NodeId i : eligible) {
        best = std::min(best, cost(i));
    }
    for (NodeId i : eligible) {
        if (i == origin && cost(i) == best) {
            return Decision{i, best, false};
        }
    }
    for (NodeId i : eligible) {
        if (cost(i) == best) {
            return Decision{i, best, false};
        }
    }
    return {};
}

MatrixView random_view(std::mt19937_64 &rng, std::size_t n, std::size_t classes, bool integerF)
{
    MatrixView v(n, classes);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto &f : v.F) {
        f = integerF ? static_cast<double>(rng() % 4) : u(rng) * 50.0;
    }
    for (auto &l : v.L) {
        l = (rng() % 3 == 0) ? 1 : 0;
    }
    for (auto &c : v.CPU) {
        c = u(rng);
    }
    return v;
}

} // namespace

TEST(Dtd, ShortTermCaseValues)
{
    MatrixView v(3, 2);
    const std::vector<ClassId> S{0, 1};
    v.set_owns(0, 0, true);
    v.set_owns(0, 1, true);
    v.set_owns(1, 0, true);
    EXPECT_EQ(sc_cost(v, kSteps, 0, S, 0), 2.0);
    EXPECT_EQ(sc_cost(v, kSteps, 1, S, 1), 7.0);
    EXPECT_EQ(sc_cost(v, kSteps, 1, S, 0), 8.0);
    EXPECT_EQ(sc_cost(v, kSteps, 0, S, 2), 3.0);
}

TEST(Dtd, OriginOwningEverythingKeepsTheTransaction)
{
    MatrixView v(4, 3);
    for (NodeId i = 0; i < 4; ++i) {
        v.set_owns(i, 1, true);
    }
    const std::vector<ClassId> S{1};
    const auto d = decide(v, kSteps, 0.85, 2, S, Policy::ShortTerm);
    EXPECT_EQ(d.node, 2u);
    EXPECT_EQ(d.cost, 2.0);
}

TEST(Dtd, ShortTermForwardsToTheOwner)
{
    MatrixView v(4, 3);
    v.set_owns(2, 0, true);
    v.set_owns(2, 1, true);
    const std::vector<ClassId> S{0, 1};
    const auto d = decide(v, kSteps, 0.85, 0, S, Policy::ShortTerm);
    EXPECT_EQ(d.node, 2u);
    EXPECT_EQ(d.cost, 3.0);

    v.CPU[2] = 0.9;
    const auto capped = decide(v, kSteps, 0.85, 0, S, Policy::ShortTerm);
    EXPECT_NE(capped.node, 2u);
    EXPECT_EQ(capped.node, 0u);
    EXPECT_EQ(capped.cost, 7.0);
    EXPECT_FALSE(capped.fallback);
}

TEST(Dtd, AllNodesOverCapFallBackToOrigin)
{
    MatrixView v(3, 1);
    v.CPU = {0.9, 0.95, 1.0};
    v.set_owns(1, 0, true);
    const std::vector<ClassId> S{0};
    const auto d = decide(v, kSteps, 0.85, 2, S, Policy::ShortTerm);
    EXPECT_EQ(d.node, 2u);
    EXPECT_TRUE(d.fallback);
}

TEST(Dtd, LongTermExamples)
{
    MatrixView one(1, 1);
    one.freq_at(0, 0) = 5.0;
    const std::vector<ClassId> S{0};
    EXPECT_EQ(lc_cost(one, 0, S), 0.0);

    MatrixView v(4, 2);
    v.freq_at(1, 0) = 10.0;
    EXPECT_EQ(lc_cost(v, 1, S), 0.0);
    EXPECT_EQ(lc_cost(v, 0, S), 10.0);
    EXPECT_EQ(lc_cost(v, 3, S), 10.0);
    EXPECT_EQ(decide(v, kSteps, 0.85, 0, S, Policy::LongTerm).node, 1u);

    MatrixView uniform(4, 2);
    for (auto &f : uniform.F) {
        f = 3.0;
    }
    EXPECT_EQ(decide(uniform, kSteps, 0.85, 2, S, Policy::LongTerm).node, 2u);
}

TEST(Dtd, NonePolicyAlwaysStaysHome)
{
    MatrixView v(3, 1);
    v.set_owns(1, 0, true);
    v.CPU[0] = 1.0;
    const std::vector<ClassId> S{0};
    EXPECT_EQ(decide(v, kSteps, 0.85, 0, S, Policy::None).node, 0u);
}

TEST(Dtd, OptimalPolicyGoesToPartitionHome)
{
    MatrixView v(4, 1);
    const std::vector<ClassId> S{0};
    EXPECT_EQ(decide(v, kSteps, 0.85, 0, S, Policy::Optimal, NodeId{3}).node, 3u);
    v.CPU[3] = 0.99;
    EXPECT_EQ(decide(v, kSteps, 0.85, 0, S, Policy::Optimal, NodeId{3}).node, 0u);
}

TEST(Dtd, MatchesBruteForceOnRandomInstances)
{
    std::mt19937_64 rng(2024);
    for (int k = 0; k < 10000; ++k) {
        const std::size_t n = 1 + rng() % 6;
        const std::size_t classes = 1 + rng() % 5;
        auto v = random_view(rng, n, classes, k % 2 == 0);
        std::vector<ClassId> S;
        const std::size_t len = 1 + rng() % classes;
        for (std::size_t j = 0; j < len; ++j) {
            S.push_back(static_cast<ClassId>(rng() % classes));
        }
        std::sort(S.begin(), S.end());
        S.erase(std::unique(S.begin(), S.end()), S.end());
        const auto origin = static_cast<NodeId>(rng() % n);
        for (Policy p : {Policy::ShortTerm, Policy::LongTerm}) {
            const auto got = decide(v, kSteps, 0.85, origin, S, p);
            const auto want = brute_force(v, 0.85, origin, S, p);
            ASSERT_EQ(got.node, want.node) << "instance " << k << " policy " << to_string(p);
            ASSERT_EQ(got.fallback, want.fallback);
            ASSERT_DOUBLE_EQ(got.cost, want.cost);
            ASSERT_TRUE(got.fallback || v.CPU[got.node] < 0.85);
        }
    }
}

TEST(Dtd, LongTermArgminIsScaleInvariant)
{
    std::mt19937_64 rng(7);
    for (int k = 0; k < 2000; ++k) {
        auto v = random_view(rng, 4, 3, true);
        const std::vector<ClassId> S{static_cast<ClassId>(rng() % 3)};
        const auto origin = static_cast<NodeId>(rng() % 4);
        const auto before = decide(v, kSteps, 0.85, origin, S, Policy::LongTerm).node;
        for (auto &f : v.F) {
            f *= 8.0;
        }
        EXPECT_EQ(decide(v, kSteps, 0.85, origin, S, Policy::LongTerm).node, before);
    }
}

TEST(Dtd, ShortTermNeverPicksANonOwnerWhenAnOwnerIsEligible)
{
    std::mt19937_64 rng(8);
    for (int k = 0; k < 5000; ++k) {
        auto v = random_view(rng, 4, 2, true);
        const std::vector<ClassId> S{0, 1};
        const auto origin = static_cast<NodeId>(rng() % 4);
        bool ownerEligible = false;
        for (NodeId i = 0; i < 4; ++i) {
            ownerEligible = ownerEligible || (v.owns(i, 0) && v.owns(i, 1) && v.cpu(i) < 0.85);
        }
        if (!ownerEligible) {
            continue;
        }
        const auto d = decide(v, kSteps, 0.85, origin, S, Policy::ShortTerm);
        EXPECT_TRUE(v.owns(d.node, 0) || v.owns(d.node, 1));
    }
}

TEST(Dtd, GossipIsLastWriterWinsPerSender)
{
    Dispatcher a(0, 3, 2), b(1, 3, 2);
    const std::vector<ClassId> S{1};
    b.record_access(S);
    b.set_local_cpu(0.4);
    auto g1 = b.gossip_out();
    b.record_access(S);
    b.set_local_cpu(0.6);
    auto g2 = b.gossip_out();
    a.gossip_in(g2);
    a.gossip_in(g1);
    EXPECT_DOUBLE_EQ(a.cpu(1), 0.6);
    EXPECT_DOUBLE_EQ(a.freq(1, 1), b.freq(1, 1));
    a.gossip_in(g2);
    EXPECT_DOUBLE_EQ(a.cpu(1), 0.6);
}

TEST(Dtd, DecayHalvesAfterOneHalfLife)
{
    Dispatcher d(0, 1, 1, DispatcherConfig{{}, 0.85, 4.0});
    const std::vector<ClassId> S{0};
    d.record_access(S);
    const double f0 = d.freq(0, 0);
    for (int i = 0; i < 4; ++i) {
        d.decay();
    }
    EXPECT_NEAR(d.freq(0, 0), f0 / 2.0, 1e-12);
    EXPECT_THROW(Dispatcher(0, 1, 1, DispatcherConfig{{}, 0.85, 0.0}), ConfigError);
}

TEST(Dtd, DispatcherWithoutCpuControlIgnoresTheCap)
{
    Dispatcher d(0, 2, 1);
    StatsGossip g{1, 1, {0.0}, 0.99};
    d.gossip_in(g);
    const std::vector<ClassId> S{0};
    auto owns = [](NodeId i, ClassId) { return i == 1; };
    EXPECT_EQ(d.decide(0, S, Policy::ShortTerm, std::nullopt, owns, true).node, 0u);
    EXPECT_EQ(d.decide(0, S, Policy::ShortTerm, std::nullopt, owns, false).node, 1u);
}
