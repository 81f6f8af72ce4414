#include <lilac/harness.hpp>

#include <gtest/gtest.h>

#include <map>
#include <sstream>
#include <string>

using namespace lilac;

namespace {

std::string csv_of(const ExperimentResult &r)
{
    std::ostringstream os;
    write_csv_header(os, r.config.nodes);
    write_csv_rows(os, r.config.label(), r.run.rows);
    write_commit_log(os, r.run.commitLog);
    write_lease_trace(os, r.run.leaseTrace);
    write_forward_trace(os, r.run.forwardTrace);
    return os.str();
}

ExperimentConfig bank(Variant v, double p, std::uint64_t seed, double seconds = 2.0)
{
    ExperimentConfig c;
    c.variant = v;
    c.locality = p;
    c.seed = seed;
    c.duration = seconds;
    return c;
}

void expect_safe(const ExperimentResult &r)
{
    for (const auto &p : r.run.safety.problems) {
        ADD_FAILURE() << r.config.label() << " seed " << r.config.seed << ": " << p;
    }
    EXPECT_TRUE(r.run.safety.ok());
    EXPECT_TRUE(r.verdict.serializable) << r.verdict.reason;
}

} // namespace

TEST(Harness, SameSeedSameBytes)
{
    for (Variant v : {Variant::Alc, Variant::LilacSt, Variant::LilacLt}) {
        auto c = bank(v, 0.4, 17);
        c.recordTraces = true;
        const auto a = csv_of(run_experiment(c));
        const auto b = csv_of(run_experiment(c));
        EXPECT_EQ(a, b) << to_string(v);
        EXPECT_GT(a.size(), 100u);
        c.seed = 18;
        EXPECT_NE(csv_of(run_experiment(c)), a);
    }
}

TEST(Harness, CsvHeaderFollowsNodeCount)
{
    std::ostringstream os;
    write_csv_header(os, 3);
    EXPECT_EQ(os.str(), "second,variant,throughput,lease_reuse_rate,lease_req_rate,forwards,aborts,cpu_0,cpu_1,cpu_2\n");
}

TEST(Harness, ConfigFileParsing)
{
    std::istringstream in("# comment line\n"
                          "variant = lilac-lt\n"
                          "  locality=0.25   # trailing comment\n"
                          "\n"
                          "nodes = 3\n"
                          "cpu_control = false\n"
                          "seed = 99\n");
    const auto c = parse_config(in);
    EXPECT_EQ(c.variant, Variant::LilacLt);
    EXPECT_DOUBLE_EQ(c.locality, 0.25);
    EXPECT_EQ(c.nodes, 3u);
    EXPECT_FALSE(c.cpuControl);
    EXPECT_EQ(c.seed, 99u);
    EXPECT_EQ(c.label(), "lilac-lt-noctrl");

    std::istringstream bad1("nodes 3\n");
    EXPECT_THROW(parse_config(bad1), ConfigError);
    std::istringstream bad2("bogus_key = 1\n");
    EXPECT_THROW(parse_config(bad2), ConfigError);
    std::istringstream bad3("nodes = three\n");
    EXPECT_THROW(parse_config(bad3), ConfigError);
    std::istringstream bad4("variant = mvcc\n");
    EXPECT_THROW(parse_config(bad4), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/lilac.conf"), ConfigError);
}

TEST(Harness, PolicyShorthand)
{
    ExperimentConfig c;
    apply_setting(c, "policy", "st");
    EXPECT_EQ(c.variant, Variant::LilacSt);
    apply_setting(c, "policy", "alc");
    EXPECT_EQ(c.variant, Variant::Alc);
    EXPECT_THROW(apply_setting(c, "policy", "random"), ConfigError);
}

TEST(Harness, VariantsMapToModeAndPolicy)
{
    EXPECT_EQ(lease_mode(Variant::Alc), lease::Mode::Coarse);
    EXPECT_EQ(lease_mode(Variant::MgAlc), lease::Mode::Coarse);
    EXPECT_EQ(lease_mode(Variant::Fgl), lease::Mode::Fine);
    EXPECT_EQ(policy_of(Variant::MgAlc), dtd::Policy::Optimal);
    EXPECT_EQ(policy_of(Variant::LilacSt), dtd::Policy::ShortTerm);
    EXPECT_EQ(policy_of(Variant::LilacLt), dtd::Policy::LongTerm);
    EXPECT_EQ(policy_of(Variant::Fgl), dtd::Policy::None);
}

TEST(Harness, ContradictorySettingsAreRejected)
{
    ExperimentConfig c;
    c.workload = WorkloadKind::Tpcc;
    c.variant = Variant::LilacOpt;
    EXPECT_THROW(run_experiment(c), ConfigError);
    c.variant = Variant::MgAlc;
    EXPECT_THROW(c.validate(), ConfigError);
    c.variant = Variant::LilacLt;
    EXPECT_NO_THROW(c.validate());

    ExperimentConfig d;
    d.locality = 1.5;
    EXPECT_THROW(d.validate(), ConfigError);
    d.locality = 0.5;
    d.workload = WorkloadKind::Overload;
    d.duration = 10;
    EXPECT_THROW(d.validate(), ConfigError);
}

TEST(Harness, BankHalfLocalityIsSerializableAcrossSeeds)
{
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        for (Variant v : {Variant::Fgl, Variant::LilacSt}) {
            const auto r = run_experiment(bank(v, 0.5, seed));
            expect_safe(r);
            EXPECT_GT(r.run.totals.rwCommitted, 0u);
        }
    }
}

TEST(Harness, AccountingIdentityHolds)
{
    for (Variant v : {Variant::Alc, Variant::Fgl, Variant::MgAlc, Variant::LilacSt, Variant::LilacLt,
                      Variant::LilacOpt}) {
        const auto r = run_experiment(bank(v, 0.3, 5));
        const auto &t = r.run.totals;
        EXPECT_EQ(t.committed, t.generated - t.aborted - t.inFlightAtEnd) << to_string(v);
        EXPECT_GE(r.reuse_rate(), 0.0);
        EXPECT_LE(r.reuse_rate(), 1.0);
        expect_safe(r);
    }
}

TEST(Harness, TpccRunsAreSafe)
{
    for (Variant v : {Variant::Alc, Variant::Fgl, Variant::LilacSt, Variant::LilacLt}) {
        ExperimentConfig c;
        c.workload = WorkloadKind::Tpcc;
        c.variant = v;
        c.duration = 2.0;
        expect_safe(run_experiment(c));
    }
}

TEST(Harness, ForcedReExecutionStaysSafe)
{
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto c = bank(Variant::LilacSt, 0.2, seed);
        c.reExecuteAlways = true;
        const auto r = run_experiment(c);
        expect_safe(r);
        EXPECT_GT(r.run.totals.forwards, 0u);
    }
}

TEST(Harness, MissingOnlyRequestsStaySafe)
{
    auto c = bank(Variant::LilacLt, 0.5, 4);
    c.requestMissingOnly = true;
    expect_safe(run_experiment(c));
}

TEST(Harness, NoInitialLeasesStillLive)
{
    for (Variant v : {Variant::Alc, Variant::LilacSt}) {
        auto c = bank(v, 0.0, 2);
        c.initialLeases = false;
        expect_safe(run_experiment(c));
    }
}

TEST(Harness, ForwardsNeverRepeatPerTransaction)
{
    auto c = bank(Variant::LilacSt, 0.0, 9, 3.0);
    c.recordTraces = true;
    const auto r = run_experiment(c);
    std::map<TxId, int> count;
    for (const auto &f : r.run.forwardTrace) {
        if (!f.abort) {
            EXPECT_EQ(++count[f.txId], 1);
            EXPECT_NE(f.origin, f.target);
        }
    }
    EXPECT_FALSE(count.empty());
}

TEST(Harness, ShortTermOnOneNodeMatchesPlainFineLeases)
{
    auto st = bank(Variant::LilacSt, 1.0, 3);
    st.nodes = 1;
    auto fgl = st;
    fgl.variant = Variant::Fgl;
    st.recordTraces = fgl.recordTraces = true;
    const auto a = run_experiment(st);
    const auto b = run_experiment(fgl);
    std::ostringstream x, y;
    write_csv_rows(x, "v", a.run.rows);
    write_csv_rows(y, "v", b.run.rows);
    EXPECT_EQ(x.str(), y.str());
    EXPECT_EQ(a.run.totals.forwards, 0u);
}

TEST(Harness, SweepLabelsEachValue)
{
    auto base = bank(Variant::Fgl, 0.0, 1, 1.0);
    const std::vector<std::string> values{"0", "1"};
    const auto rs = sweep(base, "locality", values);
    ASSERT_EQ(rs.size(), 2u);
    EXPECT_DOUBLE_EQ(rs[1].config.locality, 1.0);
    std::ostringstream os;
    write_sweep_csv(os, "locality", values, rs);
    EXPECT_NE(os.str().find(",fgl:locality=0,"), std::string::npos);
    EXPECT_NE(os.str().find(",fgl:locality=1,"), std::string::npos);
}

TEST(Harness, MetricsRowsCoverTheRun)
{
    const auto r = run_experiment(bank(Variant::Fgl, 1.0, 1, 5.0));
    ASSERT_EQ(r.run.rows.size(), 5u);
    for (std::size_t i = 0; i < r.run.rows.size(); ++i) {
        EXPECT_EQ(r.run.rows[i].second, i);
        EXPECT_EQ(r.run.rows[i].cpu.size(), 4u);
        EXPECT_GE(r.run.rows[i].leaseReuseRate, 0.0);
        EXPECT_LE(r.run.rows[i].leaseReuseRate, 1.0);
    }
    EXPECT_GT(r.throughput(), 0.0);
}
