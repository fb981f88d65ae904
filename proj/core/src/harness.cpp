#include "dqkit/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "dqkit/dataset_io.hpp"
#include "dqkit/error.hpp"
#include "dqkit/format.hpp"
#include "dqkit/parallel.hpp"

namespace dqkit {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Summary {
    int n = 0;
    double mean = 0.0, sd = 0.0, bias = 0.0, bias_se = 0.0, rmse = 0.0, rmse_se = 0.0, opposite = 0.0;
};

Summary summarize(const std::vector<double>& xs, double truth) {
    Summary s;
    double sum = 0.0;
    for (double x : xs)
        if (!std::isnan(x)) {
            sum += x;
            ++s.n;
        }
    if (s.n == 0) return s;
    const double n = s.n;
    s.mean = sum / n;
    double ss = 0.0, e2 = 0.0, opp = 0.0;
    for (double x : xs) {
        if (std::isnan(x)) continue;
        ss += (x - s.mean) * (x - s.mean);
        e2 += (x - truth) * (x - truth);
        if (x * truth < 0.0) opp += 1.0;
    }
    s.sd = s.n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    s.bias = s.mean - truth;
    s.bias_se = s.sd / std::sqrt(n);
    const double mse = e2 / n;
    s.rmse = std::sqrt(mse);
    if (s.n > 1 && s.rmse > 0.0) {
        double v = 0.0;
        for (double x : xs) {
            if (std::isnan(x)) continue;
            const double d = (x - truth) * (x - truth) - mse;
            v += d * d;
        }
        s.rmse_se = std::sqrt(v / (n - 1.0) / n) / (2.0 * s.rmse);
    }
    s.opposite = opp / n;
    return s;
}

std::vector<EffectOracle> compute_oracles(const SweepConfig& sc, const std::vector<double>& effects, int threads) {
    std::vector<EffectOracle> out;
    for (double tau : effects) {
        const SimConfig cfg = replicate_config(sc, tau, 0, 0);
        EffectOracle e;
        e.tau = tau;
        e.oracle = ground_truth_ate(cfg, sc.oracle_sessions, threads);
        e.label = effect_label(e.oracle);
        out.push_back(e);
    }
    return out;
}

// Smallest non-zero swept effect; oracle SEs above 10% of it are flagged.
double oracle_threshold(const std::vector<EffectOracle>& oracles) {
    double m = HUGE_VAL;
    for (const auto& o : oracles)
        if (o.tau != 0.0) m = std::min(m, std::abs(o.oracle.ate));
    return m == HUGE_VAL ? HUGE_VAL : 0.1 * m;
}

std::string join_csv(std::initializer_list<std::string> xs) {
    std::string s;
    for (const auto& x : xs) {
        if (!s.empty()) s += ',';
        s += x;
    }
    return s;
}

std::string fmt_tau(double t) { return fmt_double(t); }

void check_p(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("treatment probability must lie in (0,1)");
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace

void SweepConfig::validate() const {
    base.validate();
    if (effect_sizes.empty()) throw ConfigError("effect_sizes must be non-empty");
    if (n_viewers_grid.empty()) throw ConfigError("n_viewers_grid must be non-empty");
    for (auto n : n_viewers_grid)
        if (n < 1) throw ConfigError("n_viewers_grid entries must be >= 1");
    if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
    if (null_seeds < 0) throw ConfigError("null_seeds must be >= 0");
    for (const auto& e : estimators) estimator_index(e);
    if (!(confidence_level > 0.0 && confidence_level < 1.0)) throw ConfigError("confidence_level must lie in (0,1)");
    if (oracle_sessions < 1) throw ConfigError("oracle_sessions must be >= 1");
    if (misspecification) {
        check_p(misspecification->p_nominal);
        if (misspecification->p_actual.empty()) throw ConfigError("misspecification.p_actual must be non-empty");
        for (double p : misspecification->p_actual)
            if (!(p > 0.0 && p < 1.0)) throw ConfigError("misspecification.p_actual must lie in (0,1)");
    }
}

SweepConfig sweep_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed sweep config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("sweep config must be a JSON object");
    static const char* known[] = {"base",      "effect_sizes",     "n_viewers_grid",   "n_seeds",     "null_seeds",
                                  "estimators", "misspecification", "confidence_level", "output_dir", "oracle_sessions"};
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* name : known) ok = ok || k == name;
        if (!ok) throw ConfigError("unknown sweep config key: " + k);
    }
    SweepConfig c;
    try {
        if (j.contains("base")) c.base = sim_config_from_json(j["base"].dump());
        read_opt(j, "effect_sizes", c.effect_sizes);
        read_opt(j, "n_viewers_grid", c.n_viewers_grid);
        read_opt(j, "n_seeds", c.n_seeds);
        read_opt(j, "null_seeds", c.null_seeds);
        read_opt(j, "estimators", c.estimators);
        read_opt(j, "confidence_level", c.confidence_level);
        read_opt(j, "output_dir", c.output_dir);
        read_opt(j, "oracle_sessions", c.oracle_sessions);
        if (j.contains("misspecification") && !j["misspecification"].is_null()) {
            const auto& m = j["misspecification"];
            Misspecification ms;
            read_opt(m, "p_nominal", ms.p_nominal);
            if (m.contains("p_actual")) {
                if (m["p_actual"].is_array())
                    ms.p_actual = m["p_actual"].get<std::vector<double>>();
                else
                    ms.p_actual = {m["p_actual"].get<double>()};
            }
            c.misspecification = ms;
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad sweep config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string sweep_config_to_json(const SweepConfig& c) {
    nlohmann::ordered_json j;
    j["base"] = nlohmann::ordered_json::parse(sim_config_to_json(c.base));
    j["effect_sizes"] = c.effect_sizes;
    j["n_viewers_grid"] = c.n_viewers_grid;
    j["n_seeds"] = c.n_seeds;
    j["null_seeds"] = c.null_seeds;
    j["estimators"] = c.estimators;
    if (c.misspecification)
        j["misspecification"] = {{"p_nominal", c.misspecification->p_nominal},
                                 {"p_actual", c.misspecification->p_actual}};
    else
        j["misspecification"] = nullptr;
    j["confidence_level"] = c.confidence_level;
    j["output_dir"] = c.output_dir;
    j["oracle_sessions"] = c.oracle_sessions;
    return j.dump(2);
}

SweepConfig preset_ranking() {
    SweepConfig c;
    c.base.n_creators = 10000;
    c.effect_sizes = {0.05};
    c.n_viewers_grid = {1000000};
    c.n_seeds = 50;
    c.output_dir = "out/ranking";
    return c;
}

SweepConfig preset_power() {
    SweepConfig c;
    c.base.n_creators = 10000;
    c.effect_sizes = {0.0, 0.002, 0.005, 0.01};
    c.n_viewers_grid = {10000, 100000, 1000000};
    c.n_seeds = 50;
    c.null_seeds = 200;
    c.estimators = {"dq", "dq_dr"};
    c.output_dir = "out/power";
    return c;
}

SweepConfig preset_misspec() {
    SweepConfig c;
    c.base.n_creators = 100000;
    c.effect_sizes = {0.007};
    c.n_viewers_grid = {1000000};
    c.n_seeds = 50;
    c.misspecification = Misspecification{0.5, {0.501, 0.52}};
    c.output_dir = "out/misspec";
    return c;
}

SimConfig replicate_config(const SweepConfig& sc, double effect, std::int64_t n_viewers, int seed_index,
                           std::optional<double> p_actual) {
    SimConfig c = sc.base;
    c.creator_pool_seed = sc.base.pool_seed();
    c.seed = sc.base.seed + static_cast<std::uint64_t>(seed_index);
    c.tau_star = effect;
    c.n_viewers = n_viewers;
    if (sc.misspecification) c.p_treat = sc.misspecification->p_nominal;
    if (p_actual) c.p_actual = *p_actual;
    return c;
}

int estimator_index(const std::string& name) {
    for (size_t i = 0; i < kEstimatorNames.size(); ++i)
        if (name == kEstimatorNames[i]) return static_cast<int>(i);
    throw ConfigError("unknown estimator: " + name);
}

std::string effect_label(const OracleResult& o) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "effect %+.2f%%", o.percent_of_baseline());
    return buf;
}

ReplicateResult run_replicate(const SimConfig& cfg, double p_nominal, bool with_tests, double level, int threads) {
    cfg.validate();
    check_p(p_nominal);
    if (cfg.n_viewers < 1) throw EmptyDatasetError();
    const CreatorPool pool = draw_creators(cfg);
    const auto d = static_cast<size_t>(cfg.latent_dim);

    std::vector<SessionLog> holdout(static_cast<size_t>(cfg.n_holdout));
    parallel_for_blocks(block_count(cfg.n_holdout), threads, [&](std::int64_t b) {
        std::vector<double> u(d);
        const std::int64_t lo = b * kSessionBlock, hi = std::min<std::int64_t>(cfg.n_holdout, lo + kSessionBlock);
        for (std::int64_t i = lo; i < hi; ++i) {
            const auto id = static_cast<std::uint64_t>(i);
            draw_viewer_latent(cfg, id, domain::viewer_latent, u);
            holdout[static_cast<size_t>(i)] = simulate_session(cfg, pool, id, u, Mode::experiment);
        }
    });

    ReplicateResult res;
    ZeroModel zero;
    QRegressionModel reward_model;
    const QModel* qm = &zero;
    const QModel* rm = &zero;
    if (!holdout.empty()) {
        res.q_model = fit_q_regression(holdout, p_nominal, RegressionTarget::suffix_sum);
        reward_model = fit_q_regression(holdout, p_nominal, RegressionTarget::reward);
        res.q_from_holdout = true;
        qm = &res.q_model;
        rm = &reward_model;
    }
    const SessionContext ctx{p_nominal, qm, rm};
    const int M = pool.size();

    struct Part {
        std::array<double, 6> sum{};
        std::int64_t n = 0, steps = 0, truncated = 0;
        StreamerAccumulator acc;
    };
    auto make = [&] {
        Part p;
        if (with_tests) p.acc = StreamerAccumulator(M, qm, false);
        return p;
    };
    auto body = [&](std::int64_t b, Part& part) {
        std::vector<double> u(d), suffix;
        const std::int64_t lo = b * kSessionBlock, hi = std::min(cfg.n_viewers, lo + kSessionBlock);
        for (std::int64_t i = lo; i < hi; ++i) {
            const std::uint64_t id = main_viewer_id(cfg, i);
            draw_viewer_latent(cfg, id, domain::viewer_latent, u);
            const SessionLog log = simulate_session(cfg, pool, id, u, Mode::experiment);
            const SessionTerms t = session_terms(log, ctx, suffix);
            part.sum[0] += t.naive;
            part.sum[1] += t.naive_dr;
            part.sum[2] += t.ope;
            part.sum[3] += t.ope_dr;
            part.sum[4] += t.dq;
            part.sum[5] += t.dq_dr;
            ++part.n;
            part.steps += static_cast<std::int64_t>(log.steps.size());
            part.truncated += log.truncated ? 1 : 0;
            if (with_tests) part.acc.add(log);
        }
    };
    auto combine = [&](Part& a, const Part& b) {
        for (size_t k = 0; k < a.sum.size(); ++k) a.sum[k] += b.sum[k];
        a.n += b.n;
        a.steps += b.steps;
        a.truncated += b.truncated;
        if (with_tests) a.acc.merge(b.acc);
    };
    const Part all = blocked_reduce<Part>(block_count(cfg.n_viewers), threads, make, body, combine);

    const double n = static_cast<double>(all.n);
    for (size_t k = 0; k < res.estimates.size(); ++k) res.estimates[k] = all.sum[k] / n;
    res.n_sessions = all.n;
    res.n_steps = all.steps;
    res.truncated = all.truncated;
    if (with_tests) {
        const StreamerTable table = all.acc.finish(pool.assignment);
        TestReport dq = hypothesis_test(res.estimates[4], null_variance_closed_form(table.creators, p_nominal), level);
        dq.estimator = "dq";
        dq.method = TestMethod::closed_form;
        TestReport dr = hypothesis_test(res.estimates[5], null_variance_dr(table.creators, p_nominal), level);
        dr.estimator = "dq_dr";
        dr.method = TestMethod::closed_form;
        res.dq_test = dq;
        res.dq_dr_test = dr;
    }
    return res;
}

const SweepCell* SweepResult::find(double tau, std::int64_t n_viewers, const std::string& estimator) const {
    for (const auto& c : cells)
        if (c.tau == tau && c.n_viewers == n_viewers && c.estimator == estimator) return &c;
    return nullptr;
}

SweepResult run_sweep(const SweepConfig& cfg, int threads) {
    cfg.validate();
    SweepResult out;
    out.oracles = compute_oracles(cfg, cfg.effect_sizes, threads);
    const double threshold = oracle_threshold(out.oracles);
    const double p_nominal = cfg.misspecification ? cfg.misspecification->p_nominal : cfg.base.p_treat;
    std::optional<double> p_actual;
    if (cfg.misspecification) p_actual = cfg.misspecification->p_actual.front();

    for (const auto& eo : out.oracles) {
        for (auto N : cfg.n_viewers_grid) {
            std::vector<std::vector<double>> est(cfg.estimators.size(),
                                                 std::vector<double>(static_cast<size_t>(cfg.n_seeds), kNaN));
            std::vector<std::string> errors(cfg.estimators.size());
            for (int s = 0; s < cfg.n_seeds; ++s) {
                try {
                    const auto r = run_replicate(replicate_config(cfg, eo.tau, N, s, p_actual), p_nominal, false,
                                                 cfg.confidence_level, threads);
                    for (size_t e = 0; e < cfg.estimators.size(); ++e) {
                        const double v = r.estimates[static_cast<size_t>(estimator_index(cfg.estimators[e]))];
                        if (std::isfinite(v))
                            est[e][static_cast<size_t>(s)] = v;
                        else if (errors[e].empty())
                            errors[e] = "non-finite estimate";
                    }
                } catch (const std::exception& ex) {
                    for (auto& err : errors)
                        if (err.empty()) err = ex.what();
                }
            }
            for (size_t e = 0; e < cfg.estimators.size(); ++e) {
                SweepCell c;
                c.tau = eo.tau;
                c.label = eo.label;
                c.ate = eo.oracle.ate;
                c.ate_se = eo.oracle.standard_error;
                c.n_viewers = N;
                c.estimator = cfg.estimators[e];
                const Summary s = summarize(est[e], c.ate);
                c.n_ok = s.n;
                c.n_failed = cfg.n_seeds - s.n;
                c.mean = s.mean;
                c.sd = s.sd;
                c.bias = s.bias;
                c.bias_se = s.bias_se;
                c.rmse = s.rmse;
                c.rmse_se = s.rmse_se;
                c.relative = eo.tau != 0.0 && c.ate != 0.0;
                c.rel_rmse = c.relative ? s.rmse / std::abs(c.ate) : s.rmse;
                c.rel_rmse_se = c.relative ? s.rmse_se / std::abs(c.ate) : s.rmse_se;
                c.opposite_sign_fraction = s.opposite;
                c.oracle_limited = c.ate_se > threshold;
                c.first_error = errors[e];
                c.estimates = std::move(est[e]);
                out.cells.push_back(std::move(c));
            }
        }
    }
    return out;
}

std::string SweepResult::to_csv() const {
    std::ostringstream os;
    os << "tau,effect_label,ate,ate_se,oracle_limited,n_viewers,estimator,n_seeds,n_failed,mean,sd,bias,bias_se,"
          "rmse,rmse_se,rel_rmse,rel_rmse_se,rmse_kind,opposite_sign_fraction,error\n";
    for (const auto& c : cells)
        os << join_csv({fmt_tau(c.tau), csv_quote(c.label), fmt_double(c.ate), fmt_double(c.ate_se),
                        c.oracle_limited ? "oracle-limited" : "", std::to_string(c.n_viewers), c.estimator,
                        std::to_string(c.n_ok), std::to_string(c.n_failed), fmt_double(c.mean), fmt_double(c.sd),
                        fmt_double(c.bias), fmt_double(c.bias_se), fmt_double(c.rmse), fmt_double(c.rmse_se),
                        fmt_double(c.rel_rmse), fmt_double(c.rel_rmse_se), c.relative ? "relative" : "absolute",
                        fmt_double(c.opposite_sign_fraction), csv_quote(c.first_error)})
           << '\n';
    return os.str();
}

std::string SweepResult::plot_csv() const {
    std::ostringstream os;
    os << "study,tau,effect_label,n_viewers,estimator,seed,estimate,ate\n";
    for (const auto& c : cells)
        for (size_t s = 0; s < c.estimates.size(); ++s) {
            if (std::isnan(c.estimates[s])) continue;
            os << join_csv({"sweep", fmt_tau(c.tau), csv_quote(c.label), std::to_string(c.n_viewers), c.estimator,
                            std::to_string(s), fmt_double(c.estimates[s]), fmt_double(c.ate)})
               << '\n';
        }
    return os.str();
}

const PowerCell* PowerResult::find(double tau, std::int64_t n_viewers, const std::string& estimator) const {
    for (const auto& c : cells)
        if (c.tau == tau && c.n_viewers == n_viewers && c.estimator == estimator) return &c;
    return nullptr;
}

PowerResult run_power_study(const SweepConfig& cfg, int threads) {
    cfg.validate();
    std::vector<std::string> tests;
    for (const auto& e : cfg.estimators)
        if (e == "dq" || e == "dq_dr") tests.push_back(e);
    if (tests.empty()) tests = {"dq", "dq_dr"};
    const double p_nominal = cfg.misspecification ? cfg.misspecification->p_nominal : cfg.base.p_treat;

    PowerResult out;
    out.level = cfg.confidence_level;
    out.oracles = compute_oracles(cfg, cfg.effect_sizes, threads);
    for (const auto& eo : out.oracles) {
        const int seeds = eo.tau == 0.0 && cfg.null_seeds > 0 ? cfg.null_seeds : cfg.n_seeds;
        for (auto N : cfg.n_viewers_grid) {
            std::vector<PowerCell> row(tests.size());
            for (size_t k = 0; k < tests.size(); ++k) {
                row[k].tau = eo.tau;
                row[k].label = eo.label;
                row[k].ate = eo.oracle.ate;
                row[k].ate_se = eo.oracle.standard_error;
                row[k].n_viewers = N;
                row[k].estimator = tests[k];
            }
            for (int s = 0; s < seeds; ++s) {
                try {
                    const auto r =
                        run_replicate(replicate_config(cfg, eo.tau, N, s), p_nominal, true, cfg.confidence_level, threads);
                    for (size_t k = 0; k < tests.size(); ++k) {
                        const TestReport& t = tests[k] == "dq" ? *r.dq_test : *r.dq_dr_test;
                        PowerCell& c = row[k];
                        ++c.n_seeds;
                        c.rejections += t.reject_normal ? 1 : 0;
                        c.mean_statistic += t.statistic;
                        c.mean_variance += t.variance;
                        c.mean_z += std::isfinite(t.z) ? t.z : 0.0;
                        c.z_values.push_back(t.z);
                    }
                } catch (const std::exception&) {
                    for (auto& c : row) ++c.n_failed;
                }
            }
            for (auto& c : row) {
                if (c.n_seeds > 0) {
                    const double n = c.n_seeds;
                    c.power = c.rejections / n;
                    c.power_se = std::sqrt(c.power * (1.0 - c.power) / n);
                    c.mean_statistic /= n;
                    c.mean_variance /= n;
                    c.mean_z /= n;
                }
                out.cells.push_back(std::move(c));
            }
        }
    }
    return out;
}

std::string PowerResult::to_csv() const {
    std::ostringstream os;
    os << "tau,effect_label,ate,ate_se,n_viewers,estimator,method,level,n_seeds,n_failed,rejections,power,power_se,"
          "mean_statistic,mean_variance,mean_z\n";
    for (const auto& c : cells)
        os << join_csv({fmt_tau(c.tau), csv_quote(c.label), fmt_double(c.ate), fmt_double(c.ate_se),
                        std::to_string(c.n_viewers), c.estimator, "closed_form", fmt_double(level),
                        std::to_string(c.n_seeds), std::to_string(c.n_failed), std::to_string(c.rejections),
                        fmt_double(c.power), fmt_double(c.power_se), fmt_double(c.mean_statistic),
                        fmt_double(c.mean_variance), fmt_double(c.mean_z)})
           << '\n';
    return os.str();
}

std::string PowerResult::plot_csv() const {
    std::ostringstream os;
    os << "study,tau,effect_label,n_viewers,estimator,seed,z\n";
    for (const auto& c : cells)
        for (size_t s = 0; s < c.z_values.size(); ++s)
            os << join_csv({"power", fmt_tau(c.tau), csv_quote(c.label), std::to_string(c.n_viewers), c.estimator,
                            std::to_string(s), fmt_double(c.z_values[s])})
               << '\n';
    return os.str();
}

const MisspecRow* MisspecResult::find(double p_actual, const std::string& estimator) const {
    for (const auto& r : rows)
        if (r.p_actual == p_actual && r.estimator == estimator) return &r;
    return nullptr;
}

MisspecResult run_misspecification_study(const SweepConfig& cfg, int threads) {
    cfg.validate();
    if (!cfg.misspecification) throw ConfigError("misspecification study needs a misspecification block");
    const auto& ms = *cfg.misspecification;
    MisspecResult out;
    out.tau = cfg.effect_sizes.front();
    out.n_viewers = *std::max_element(cfg.n_viewers_grid.begin(), cfg.n_viewers_grid.end());
    out.oracle = compute_oracles(cfg, {out.tau}, threads).front();
    const double ate = out.oracle.oracle.ate;

    std::vector<double> ps{ms.p_nominal};
    for (double p : ms.p_actual)
        if (p != ms.p_nominal) ps.push_back(p);
    for (double pa : ps) {
        std::vector<std::vector<double>> est(cfg.estimators.size(),
                                             std::vector<double>(static_cast<size_t>(cfg.n_seeds), kNaN));
        for (int s = 0; s < cfg.n_seeds; ++s) {
            try {
                const auto r = run_replicate(replicate_config(cfg, out.tau, out.n_viewers, s, pa), ms.p_nominal, false,
                                             cfg.confidence_level, threads);
                for (size_t e = 0; e < cfg.estimators.size(); ++e)
                    est[e][static_cast<size_t>(s)] = r.estimates[static_cast<size_t>(estimator_index(cfg.estimators[e]))];
            } catch (const std::exception&) {
            }
        }
        for (size_t e = 0; e < cfg.estimators.size(); ++e) {
            MisspecRow r;
            r.p_nominal = ms.p_nominal;
            r.p_actual = pa;
            r.estimator = cfg.estimators[e];
            const Summary s = summarize(est[e], ate);
            r.n_ok = s.n;
            r.n_failed = cfg.n_seeds - s.n;
            r.mean = s.mean;
            r.sd = s.sd;
            r.bias = s.bias;
            r.bias_se = s.bias_se;
            r.sign_flipped = s.n > 0 && r.mean * ate < 0.0;
            r.estimates = std::move(est[e]);
            out.rows.push_back(std::move(r));
        }
    }
    return out;
}

std::string MisspecResult::to_csv() const {
    std::ostringstream os;
    os << "tau,effect_label,ate,ate_se,n_viewers,p_nominal,p_actual,estimator,n_seeds,n_failed,mean,sd,bias,bias_se,"
          "sign_flipped\n";
    for (const auto& r : rows)
        os << join_csv({fmt_tau(tau), csv_quote(oracle.label), fmt_double(oracle.oracle.ate),
                        fmt_double(oracle.oracle.standard_error), std::to_string(n_viewers), fmt_double(r.p_nominal),
                        fmt_double(r.p_actual), r.estimator, std::to_string(r.n_ok), std::to_string(r.n_failed),
                        fmt_double(r.mean), fmt_double(r.sd), fmt_double(r.bias), fmt_double(r.bias_se),
                        r.sign_flipped ? "1" : "0"})
           << '\n';
    return os.str();
}

std::string MisspecResult::plot_csv() const {
    std::ostringstream os;
    os << "study,tau,n_viewers,p_actual,estimator,seed,estimate,ate\n";
    for (const auto& r : rows)
        for (size_t s = 0; s < r.estimates.size(); ++s) {
            if (std::isnan(r.estimates[s])) continue;
            os << join_csv({"misspec", fmt_tau(tau), std::to_string(n_viewers), fmt_double(r.p_actual), r.estimator,
                            std::to_string(s), fmt_double(r.estimates[s]), fmt_double(oracle.oracle.ate)})
               << '\n';
        }
    return os.str();
}

}  // namespace dqkit
