// Command-line front end: run one experiment, sweep a parameter, or check safety.
//
// Exit codes: 0 ok, 1 configuration error, 2 safety or serializability violation.

#include <lilac/harness.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Options {
    std::string config;
    std::optional<std::string> variant;
    std::optional<std::string> workload;
    std::optional<double> locality;
    std::optional<std::size_t> nodes;
    std::optional<std::size_t> threads;
    std::optional<double> duration;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> set;
    std::string out = "out";
    bool noCpuControl = false;
    bool traces = false;
};

void add_common(CLI::App &cmd, Options &o)
{
    cmd.add_option("--config", o.config, "flat key = value configuration file");
    cmd.add_option("--variant", o.variant, "alc | fgl | mg-alc | lilac-st | lilac-lt | lilac-opt");
    cmd.add_option("--workload", o.workload, "bank | tpcc | overload");
    cmd.add_option("--locality", o.locality, "bank locality P in [0,1]");
    cmd.add_option("--nodes", o.nodes, "number of replicas");
    cmd.add_option("--threads", o.threads, "application threads per replica");
    cmd.add_option("--duration", o.duration, "simulated seconds");
    cmd.add_option("--seed", o.seed, "random seed");
    cmd.add_option("--set", o.set, "extra key=value setting (repeatable)");
    cmd.add_option("--out", o.out, "output directory");
    cmd.add_flag("--no-cpu-control", o.noCpuControl, "disable the CPU cap in the dispatcher");
}

lilac::ExperimentConfig build_config(const Options &o)
{
    lilac::ExperimentConfig c;
    if (!o.config.empty()) {
        c = lilac::load_config(o.config, c);
    }
    if (o.variant) {
        lilac::apply_setting(c, "variant", *o.variant);
    }
    if (o.workload) {
        lilac::apply_setting(c, "workload", *o.workload);
    }
    if (o.locality) {
        c.locality = *o.locality;
    }
    if (o.nodes) {
        c.nodes = *o.nodes;
    }
    if (o.threads) {
        c.threads = *o.threads;
    }
    if (o.duration) {
        c.duration = *o.duration;
    }
    if (o.seed) {
        c.seed = *o.seed;
    }
    for (const auto &kv : o.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw lilac::ConfigError("--set expects key=value, got '" + kv + "'");
        }
        lilac::apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.noCpuControl) {
        c.cpuControl = false;
    }
    c.recordTraces = c.recordTraces || o.traces;
    c.validate();
    return c;
}

std::ofstream open_out(const std::filesystem::path &p)
{
    std::ofstream f(p);
    if (!f) {
        throw lilac::ConfigError("cannot write " + p.string());
    }
    return f;
}

int report(const lilac::ExperimentResult &r)
{
    const auto &t = r.run.totals;
    std::cout << r.config.label() << " workload=" << lilac::to_string(r.config.workload)
              << " locality=" << r.config.locality << " seed=" << r.config.seed << '\n'
              << "  throughput " << r.throughput() << " tx/s, reuse " << r.reuse_rate() << ", lease requests "
              << r.lease_request_rate() << "/s, forwards " << t.forwards << ", aborts " << t.aborted << '\n';
    bool ok = r.safe();
    if (!r.verdict.serializable) {
        std::cout << "  serializability violation: " << r.verdict.reason;
        for (auto id : r.verdict.cycle) {
            std::cout << ' ' << id;
        }
        std::cout << '\n';
    }
    for (const auto &p : r.run.safety.problems) {
        std::cout << "  safety: " << p << '\n';
    }
    std::cout << "  " << (ok ? "safe" : "UNSAFE") << '\n';
    return ok ? 0 : 2;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Replicated STM simulator with fine-grained leases and transaction migration"};
    app.require_subcommand(1);

    Options runOpt;
    auto *run = app.add_subcommand("run", "run one experiment and write CSV output");
    add_common(*run, runOpt);
    run->add_flag("--traces", runOpt.traces, "also write commit, lease and forward traces");

    Options sweepOpt;
    std::string param = "locality";
    std::vector<std::string> values{"0", "0.2", "0.4", "0.6", "0.8", "0.9", "1.0"};
    auto *sw = app.add_subcommand("sweep", "run one experiment per parameter value");
    add_common(*sw, sweepOpt);
    sw->add_option("--param", param, "configuration key to sweep");
    sw->add_option("--values", values, "values to sweep")->delimiter(',');

    Options checkOpt;
    auto *check = app.add_subcommand("check", "run an experiment and audit safety only");
    add_common(*check, checkOpt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*run) {
            const auto cfg = build_config(runOpt);
            const auto r = lilac::run_experiment(cfg);
            std::filesystem::create_directories(runOpt.out);
            const std::filesystem::path dir(runOpt.out);
            auto m = open_out(dir / "metrics.csv");
            lilac::write_csv_header(m, cfg.nodes);
            lilac::write_csv_rows(m, cfg.label(), r.run.rows);
            if (cfg.recordTraces) {
                auto c = open_out(dir / "commit_log.csv");
                lilac::write_commit_log(c, r.run.commitLog);
                auto l = open_out(dir / "lease_trace.csv");
                lilac::write_lease_trace(l, r.run.leaseTrace);
                auto f = open_out(dir / "forward_trace.csv");
                lilac::write_forward_trace(f, r.run.forwardTrace);
            }
            return report(r);
        }
        if (*sw) {
            const auto cfg = build_config(sweepOpt);
            const auto results = lilac::sweep(cfg, param, values);
            std::filesystem::create_directories(sweepOpt.out);
            auto f = open_out(std::filesystem::path(sweepOpt.out) / "sweep.csv");
            lilac::write_sweep_csv(f, param, values, results);
            int rc = 0;
            for (const auto &r : results) {
                rc = std::max(rc, report(r));
            }
            return rc;
        }
        const auto cfg = build_config(checkOpt);
        return report(lilac::run_experiment(cfg));
    } catch (const lilac::ConfigError &e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 1;
    }
}
