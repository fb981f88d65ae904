// dqkit command line: simulate, estimate, test, verify-theory, sweep, power, misspec.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dqkit/dataset_io.hpp"
#include "dqkit/error.hpp"
#include "dqkit/estimators.hpp"
#include "dqkit/format.hpp"
#include "dqkit/harness.hpp"
#include "dqkit/taylor.hpp"
#include "dqkit/variance.hpp"

namespace fs = std::filesystem;
using namespace dqkit;

namespace {

struct Common {
    std::string config;
    std::string out;
    int threads = 1;
    std::optional<std::uint64_t> seed;
    bool plot = false;
    bool print_config = false;
};

void add_common(CLI::App* app, Common& c, bool with_config, bool with_plot) {
    if (with_config) app->add_option("--config", c.config, "JSON configuration file");
    app->add_option("--out", c.out, "Output path");
    app->add_option("--seed", c.seed, "Override the configured seed");
    app->add_option("--threads", c.threads, "Worker threads (0 = all cores); results do not depend on it")
        ->check(CLI::NonNegativeNumber);
    if (with_plot) {
        app->add_flag("--emit-plot-data", c.plot, "Also write long-format plot data CSV");
        app->add_flag("--print-config", c.print_config, "Print the effective configuration as JSON and exit");
    }
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

// --out given as a.csv or a.json names the pair a.csv / a.json.
std::pair<fs::path, fs::path> report_paths(const std::string& out, const std::string& fallback) {
    std::string base = out.empty() ? fallback : out;
    for (const char* ext : {".csv", ".json"}) {
        const std::string e = ext;
        if (base.size() > e.size() && base.compare(base.size() - e.size(), e.size(), e) == 0)
            base = base.substr(0, base.size() - e.size());
    }
    return {base + ".csv", base + ".json"};
}

int cmd_simulate(const Common& c, double oracle_sessions) {
    SimConfig cfg = c.config.empty() ? SimConfig{} : sim_config_from_json(slurp(c.config));
    if (c.seed) cfg.seed = *c.seed;
    const std::string base = c.out.empty() ? "dataset" : c.out;
    const auto ds = generate_dataset(cfg, c.threads);
    write_dataset(ds, base);
    if (oracle_sessions > 0) {
        const auto o = ground_truth_ate(cfg, static_cast<std::int64_t>(oracle_sessions), c.threads);
        nlohmann::ordered_json j;
        j["ate"] = o.ate;
        j["standard_error"] = o.standard_error;
        j["baseline"] = o.baseline;
        j["baseline_se"] = o.baseline_se;
        j["percent_of_baseline"] = o.percent_of_baseline();
        j["n_sessions"] = o.n_sessions;
        const std::string header = DatasetPaths::from_base(base).header.string();
        write_file(header.substr(0, header.size() - 5) + ".oracle.json", j.dump(2) + "\n");
    }
    std::cerr << "wrote " << ds.sessions.size() << " sessions (" << ds.n_steps() << " steps) to " << base
              << ".{json,ndjson,holdout.ndjson}\n";
    return 0;
}

struct EstimateOpts {
    std::string data;
    std::vector<std::string> estimators{"naive", "naive_dr", "ope", "ope_dr", "dq", "dq_dr", "dq_general"};
    std::optional<double> p;
    bool per_session = false;
};

int cmd_estimate(const Common& c, const EstimateOpts& o) {
    const auto ds = read_dataset(o.data);
    const double p = o.p.value_or(ds.p_nominal);
    ZeroModel zero;
    QRegressionModel q, rm;
    const QModel* qm = &zero;
    const QModel* rmp = &zero;
    std::vector<std::string> model_flags;
    if (!ds.holdout_sessions.empty()) {
        q = fit_q_regression(ds.holdout_sessions, p, RegressionTarget::suffix_sum);
        rm = fit_q_regression(ds.holdout_sessions, p, RegressionTarget::reward);
        qm = &q;
        rmp = &rm;
        for (const auto& f : q.arms)
            if (f.intercept_only) model_flags.push_back("intercept-only Q regression");
    } else {
        model_flags.push_back("no holdout; zero outcome model");
    }
    std::vector<EstimateReport> reports;
    for (const auto& name : o.estimators) {
        EstimateReport r;
        if (name == "naive") r = naive(ds, p);
        else if (name == "naive_dr") r = naive_dr(ds, *rmp, p);
        else if (name == "ope") r = ope_stepwise(ds, p);
        else if (name == "ope_dr") r = ope_dr(ds, *qm, p);
        else if (name == "dq") r = dq_mc(ds, p);
        else if (name == "dq_dr") r = dq_dr(ds, *qm, p);
        else if (name == "dq_general") {
            const auto t = dq_general(ds, PolicySpec::mix(p), PolicySpec::treatment());
            const auto u = dq_general(ds, PolicySpec::mix(p), PolicySpec::control());
            r = t;
            r.estimator = "dq_general";
            r.point = t.point - u.point;
            std::vector<double> diff(t.per_session_values->size());
            double s = 0.0, ss = 0.0;
            for (size_t i = 0; i < diff.size(); ++i) {
                diff[i] = (*t.per_session_values)[i] - (*u.per_session_values)[i];
                s += diff[i];
                ss += diff[i] * diff[i];
            }
            const double n = static_cast<double>(diff.size());
            r.iid_variance = n > 1 ? std::max(0.0, (ss - s * s / n) / (n - 1.0)) / n : 0.0;
            r.per_session_values = std::move(diff);
        } else {
            throw ConfigError("unknown estimator: " + name);
        }
        if (name == "dq_dr" || name == "ope_dr" || name == "naive_dr")
            r.flags.insert(r.flags.end(), model_flags.begin(), model_flags.end());
        reports.push_back(std::move(r));
    }
    std::ostringstream csv;
    csv << EstimateReport::csv_header() << '\n';
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (auto& r : reports) {
        csv << r.csv_row() << '\n';
        auto j = nlohmann::ordered_json::parse(r.to_json());
        if (o.per_session && r.per_session_values) j["per_session_values"] = *r.per_session_values;
        arr.push_back(j);
    }
    const auto [csv_path, json_path] = report_paths(c.out, "estimates");
    write_file(csv_path, csv.str());
    write_file(json_path, arr.dump(2) + "\n");
    std::cout << csv.str();
    return 0;
}

struct TestOpts {
    std::string data;
    std::string method = "closed_form";
    std::string estimator = "dq";
    std::int64_t draws = 10000;
    double level = 0.9;
    std::optional<double> p;
};

int cmd_test(const Common& c, const TestOpts& o) {
    const auto ds = read_dataset(o.data);
    const double p = o.p.value_or(ds.p_nominal);
    const TestMethod method = test_method_from_string(o.method);
    if (o.estimator != "dq" && o.estimator != "dq_dr") throw ConfigError("test estimator must be dq or dq_dr");
    const bool dr = o.estimator == "dq_dr";
    QRegressionModel q;
    ZeroModel zero;
    const QModel* qm = &zero;
    if (dr && !ds.holdout_sessions.empty()) {
        q = fit_q_regression(ds.holdout_sessions, p);
        qm = &q;
    }
    AggregateOptions ao;
    ao.model = dr ? qm : nullptr;
    ao.pairs = method == TestMethod::exact_m2 || method == TestMethod::approx_m;
    ao.threads = c.threads;
    if (dr && ao.pairs) throw ConfigError("exact_m2 and approx_m apply to the dq statistic");
    ExperimentDataset scaled = ds;
    scaled.p_nominal = p;
    const StreamerTable table = aggregate_streamers(scaled, ao);

    double statistic = dr ? table.dq_dr(table.assignments, p) : table.dq(table.assignments, p);
    double variance = 0.0;
    std::vector<std::string> warnings;
    std::optional<std::int64_t> draws;
    switch (method) {
        case TestMethod::closed_form:
            variance = dr ? null_variance_dr(table.creators, p) : null_variance_closed_form(table.creators, p);
            break;
        case TestMethod::exact_m2:
        case TestMethod::approx_m: {
            statistic = table.dq_general(table.assignments, p);
            const auto v = null_variance_general_p(
                table, p, method == TestMethod::exact_m2 ? VarianceMode::exact_m2 : VarianceMode::approx_m);
            variance = v.variance;
            warnings = v.warnings;
            break;
        }
        case TestMethod::rerandomization: {
            const auto sample = rerandomize(table, p, o.draws, dr ? RerandStatistic::dq_dr : RerandStatistic::dq_mc,
                                            c.seed.value_or(1), c.threads);
            double m = 0.0;
            for (double x : sample) m += x;
            m /= static_cast<double>(sample.size());
            double ss = 0.0;
            for (double x : sample) ss += (x - m) * (x - m);
            variance = sample.size() > 1 ? ss / static_cast<double>(sample.size() - 1) : 0.0;
            draws = o.draws;
            break;
        }
    }
    TestReport r = hypothesis_test(statistic, variance, o.level);
    r.method = method;
    r.estimator = o.estimator;
    r.n_rerandomizations = draws;
    r.warnings = warnings;
    const auto [csv_path, json_path] = report_paths(c.out, "test");
    const std::string csv = r.csv_header() + "\n" + r.csv_row() + "\n";
    write_file(csv_path, csv);
    write_file(json_path, r.to_json() + "\n");
    std::cout << csv;
    return 0;
}

struct TheoryOpts {
    int instances = 125;
    int min_states = 3;
    int max_states = 10;
    std::vector<int> orders{0, 1, 2, 3};
    std::string mdp;
    std::string setting = "discounted:0.9";
    double p = 0.5;
};

int cmd_verify_theory(const Common& c, const TheoryOpts& o) {
    TheorySweepConfig cfg;
    if (!c.config.empty()) {
        const auto j = nlohmann::json::parse(slurp(c.config));
        cfg.seed = j.value("seed", cfg.seed);
        cfg.instances_per_setting = j.value("instances_per_setting", o.instances);
        cfg.min_states = j.value("min_states", o.min_states);
        cfg.max_states = j.value("max_states", o.max_states);
        cfg.orders = j.value("orders", o.orders);
    } else {
        cfg.instances_per_setting = o.instances;
        cfg.min_states = o.min_states;
        cfg.max_states = o.max_states;
        cfg.orders = o.orders;
    }
    if (c.seed) cfg.seed = *c.seed;
    std::vector<TheoryRow> rows;
    if (!o.mdp.empty()) {
        // User instance: expand the p-mixture towards treatment (id 0) and control (id 1).
        const auto mdp = mdp_from_json(slurp(o.mdp));
        const auto setting = parse_setting(o.setting);
        const auto pi = PolicySpec::mix(o.p);
        const PolicySpec targets[] = {PolicySpec::treatment(), PolicySpec::control()};
        for (int id = 0; id < 2; ++id)
            for (int K : cfg.orders) rows.push_back(theory_row(expand(mdp, pi, targets[id], setting, K), id));
    } else {
        rows = verify_theory_sweep(cfg);
    }
    int kmax = 0;
    for (int k : cfg.orders) kmax = std::max(kmax, k);
    std::ostringstream os;
    os << "instance_id,setting,K,delta,h_eff,exact_value";
    for (int k = 0; k <= kmax; ++k) os << ",term_" << k;
    os << ",remainder,bound,identity_residual,estimated_constants,pass\n";
    std::size_t failures = 0;
    for (const auto& r : rows) {
        os << r.instance_id << ',' << r.setting << ',' << r.K << ',' << fmt_double(r.delta) << ','
           << fmt_double(r.h_eff) << ',' << fmt_double(r.exact_value);
        for (int k = 0; k <= kmax; ++k)
            os << ',' << (k < static_cast<int>(r.terms.size()) ? fmt_double(r.terms[static_cast<size_t>(k)]) : "");
        const bool pass = r.identity_ok && r.bound_ok;
        failures += pass ? 0 : 1;
        os << ',' << fmt_double(r.remainder) << ',' << fmt_double(r.bound) << ',' << fmt_double(r.identity_residual)
           << ',' << (r.estimated_constants ? 1 : 0) << ',' << (pass ? 1 : 0) << '\n';
    }
    write_file(c.out.empty() ? "theory.csv" : c.out, os.str());
    std::cerr << rows.size() << " rows, " << failures << " failing\n";
    return failures == 0 ? 0 : 2;
}

SweepConfig load_sweep(const Common& c, SweepConfig fallback) {
    SweepConfig cfg = c.config.empty() ? fallback : sweep_config_from_json(slurp(c.config));
    if (c.seed) cfg.base.seed = *c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    return cfg;
}

int print_config(const SweepConfig& cfg) {
    std::cout << sweep_config_to_json(cfg) << '\n';
    return 0;
}

int cmd_study(const Common& c, const std::string& which) {
    if (which == "sweep") {
        const auto cfg = load_sweep(c, SweepConfig{});
        if (c.print_config) return print_config(cfg);
        const auto r = run_sweep(cfg, c.threads);
        write_file(fs::path(cfg.output_dir) / "sweep.csv", r.to_csv());
        if (c.plot) write_file(fs::path(cfg.output_dir) / "sweep_plot.csv", r.plot_csv());
        std::cout << r.to_csv();
    } else if (which == "power") {
        const auto cfg = load_sweep(c, preset_power());
        if (c.print_config) return print_config(cfg);
        const auto r = run_power_study(cfg, c.threads);
        write_file(fs::path(cfg.output_dir) / "power.csv", r.to_csv());
        if (c.plot) write_file(fs::path(cfg.output_dir) / "power_plot.csv", r.plot_csv());
        std::cout << r.to_csv();
    } else {
        const auto cfg = load_sweep(c, preset_misspec());
        if (c.print_config) return print_config(cfg);
        const auto r = run_misspecification_study(cfg, c.threads);
        write_file(fs::path(cfg.output_dir) / "misspec.csv", r.to_csv());
        if (c.plot) write_file(fs::path(cfg.output_dir) / "misspec_plot.csv", r.plot_csv());
        std::cout << r.to_csv();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dqkit: treatment effects under Markovian interference"};
    app.require_subcommand(1);

    Common sim_c, est_c, test_c, theory_c, sweep_c, power_c, mis_c;
    double oracle_sessions = 0;
    auto* sim = app.add_subcommand("simulate", "Simulate an experiment and write the dataset");
    add_common(sim, sim_c, true, false);
    sim->add_option("--oracle-sessions", oracle_sessions, "Also write a ground-truth ATE from this many paired sessions");

    EstimateOpts eo;
    auto* est = app.add_subcommand("estimate", "Run estimators on a dataset");
    add_common(est, est_c, false, false);
    est->add_option("--data", eo.data, "Dataset header or base path")->required();
    est->add_option("--estimators", eo.estimators, "Subset of naive naive_dr ope ope_dr dq dq_dr dq_general");
    est->add_option("--p", eo.p, "Treatment probability the estimators assume (default: p_nominal)");
    est->add_flag("--per-session", eo.per_session, "Include per-session values in the JSON report");

    TestOpts to;
    auto* test = app.add_subcommand("test", "Sharp-null test of the DQ statistic");
    add_common(test, test_c, false, false);
    test->add_option("--data", to.data, "Dataset header or base path")->required();
    test->add_option("--method", to.method, "closed_form | exact_m2 | approx_m | rerandomization");
    test->add_option("--estimator", to.estimator, "dq | dq_dr");
    test->add_option("--draws", to.draws, "Rerandomization draws")->check(CLI::PositiveNumber);
    test->add_option("--level", to.level, "Confidence level");
    test->add_option("--p", to.p, "Treatment probability (default: p_nominal)");

    TheoryOpts th;
    auto* theory = app.add_subcommand("verify-theory", "Exact expansion checks on random tabular MDPs");
    add_common(theory, theory_c, true, false);
    theory->add_option("--instances", th.instances, "Instances per setting");
    theory->add_option("--min-states", th.min_states);
    theory->add_option("--max-states", th.max_states);
    theory->add_option("--orders", th.orders, "Expansion orders K");
    theory->add_option("--mdp", th.mdp, "Expand this JSON MDP instead of random instances");
    theory->add_option("--setting", th.setting, "With --mdp: discounted:G | finite:H | absorbing | average");
    theory->add_option("--p", th.p, "With --mdp: treatment probability of the data policy")
        ->check(CLI::Range(0.0, 1.0));

    auto* sweep = app.add_subcommand("sweep", "Bias / SD / relative RMSE over effects and N");
    add_common(sweep, sweep_c, true, true);
    auto* power = app.add_subcommand("power", "Rejection rates of the null-variance tests");
    add_common(power, power_c, true, true);
    auto* mis = app.add_subcommand("misspec", "Bias under a misspecified treatment probability");
    add_common(mis, mis_c, true, true);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*sim) return cmd_simulate(sim_c, oracle_sessions);
        if (*est) return cmd_estimate(est_c, eo);
        if (*test) return cmd_test(test_c, to);
        if (*theory) return cmd_verify_theory(theory_c, th);
        if (*sweep) return cmd_study(sweep_c, "sweep");
        if (*power) return cmd_study(power_c, "power");
        if (*mis) return cmd_study(mis_c, "misspec");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
