#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dqkit/estimators.hpp"
#include "dqkit/simulator.hpp"
#include "dqkit/variance.hpp"

namespace dqkit {

inline constexpr std::array<const char*, 6> kEstimatorNames = {"naive", "naive_dr", "ope", "ope_dr", "dq", "dq_dr"};

struct Misspecification {
    double p_nominal = 0.5;
    std::vector<double> p_actual{0.501};
};

struct SweepConfig {
    SimConfig base;
    std::vector<double> effect_sizes{0.05};
    std::vector<std::int64_t> n_viewers_grid{10000, 100000, 1000000};
    int n_seeds = 50;
    // Seeds for effect 0 rows of the power study; 0 means n_seeds.
    int null_seeds = 0;
    std::vector<std::string> estimators{kEstimatorNames.begin(), kEstimatorNames.end()};
    std::optional<Misspecification> misspecification;
    double confidence_level = 0.9;
    std::string output_dir = "out";
    std::int64_t oracle_sessions = 1000000;

    void validate() const;
};

SweepConfig sweep_config_from_json(const std::string& text);
std::string sweep_config_to_json(const SweepConfig& cfg);

// Named configurations used by the acceptance suite and shipped under configs/.
SweepConfig preset_ranking();
SweepConfig preset_power();
SweepConfig preset_misspec();

// Replicate seed s runs with base.seed + s; the creator latents stay fixed at
// base.pool_seed() so one oracle per effect serves every replicate.
SimConfig replicate_config(const SweepConfig& sc, double effect, std::int64_t n_viewers, int seed_index,
                           std::optional<double> p_actual = std::nullopt);

struct ReplicateResult {
    std::array<double, 6> estimates{};  // indexed like kEstimatorNames
    std::int64_t n_sessions = 0;
    std::int64_t n_steps = 0;
    std::int64_t truncated = 0;
    QRegressionModel q_model;
    bool q_from_holdout = false;
    std::optional<TestReport> dq_test;     // closed form
    std::optional<TestReport> dq_dr_test;  // frozen outcome model
};

// Streams one experiment: holdout first (model fit), then the main sessions in
// fixed blocks. Nothing is materialized beyond one block of sessions.
ReplicateResult run_replicate(const SimConfig& cfg, double p_nominal, bool with_tests, double level, int threads);

int estimator_index(const std::string& name);

struct EffectOracle {
    double tau = 0.0;
    OracleResult oracle;
    std::string label;  // "effect -0.50%"
};
std::string effect_label(const OracleResult& o);

struct SweepCell {
    double tau = 0.0;
    std::string label;
    double ate = 0.0;
    double ate_se = 0.0;
    std::int64_t n_viewers = 0;
    std::string estimator;
    int n_ok = 0;
    int n_failed = 0;
    double mean = 0.0;
    double sd = 0.0;
    double bias = 0.0;
    double bias_se = 0.0;
    double rmse = 0.0;
    double rmse_se = 0.0;
    // rmse / |ate|; absolute rmse when the oracle effect is zero.
    double rel_rmse = 0.0;
    double rel_rmse_se = 0.0;
    bool relative = true;
    double opposite_sign_fraction = 0.0;
    bool oracle_limited = false;
    std::string first_error;
    std::vector<double> estimates;  // by seed, NaN for failed replicates
};

struct SweepResult {
    std::vector<EffectOracle> oracles;
    std::vector<SweepCell> cells;

    const SweepCell* find(double tau, std::int64_t n_viewers, const std::string& estimator) const;
    std::string to_csv() const;
    std::string plot_csv() const;
};

SweepResult run_sweep(const SweepConfig& cfg, int threads = 1);

struct PowerCell {
    double tau = 0.0;
    std::string label;
    double ate = 0.0;
    double ate_se = 0.0;
    std::int64_t n_viewers = 0;
    std::string estimator;  // test statistic, dq or dq_dr
    int n_seeds = 0;
    int n_failed = 0;
    int rejections = 0;
    double power = 0.0;
    double power_se = 0.0;
    double mean_statistic = 0.0;
    double mean_variance = 0.0;
    double mean_z = 0.0;
    std::vector<double> z_values;
};

struct PowerResult {
    std::vector<EffectOracle> oracles;
    std::vector<PowerCell> cells;
    double level = 0.9;

    const PowerCell* find(double tau, std::int64_t n_viewers, const std::string& estimator) const;
    std::string to_csv() const;
    std::string plot_csv() const;
};

PowerResult run_power_study(const SweepConfig& cfg, int threads = 1);

struct MisspecRow {
    double p_nominal = 0.5;
    double p_actual = 0.5;
    std::string estimator;
    int n_ok = 0;
    int n_failed = 0;
    double mean = 0.0;
    double sd = 0.0;
    double bias = 0.0;
    double bias_se = 0.0;
    bool sign_flipped = false;  // sign(mean) differs from sign(ate)
    std::vector<double> estimates;
};

struct MisspecResult {
    double tau = 0.0;
    std::int64_t n_viewers = 0;
    EffectOracle oracle;
    std::vector<MisspecRow> rows;  // the correctly specified rows come first

    const MisspecRow* find(double p_actual, const std::string& estimator) const;
    std::string to_csv() const;
    std::string plot_csv() const;
};

// Uses the first effect size and the largest N of the grid.
MisspecResult run_misspecification_study(const SweepConfig& cfg, int threads = 1);

}  // namespace dqkit
