#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dqkit/rng.hpp"

namespace dqkit {

struct SimConfig {
    std::int64_t n_viewers = 10000;
    int n_creators = 1000;
    int latent_dim = 5;
    double tau_star = 0.0;
    double k_scale = 0.3;
    double alpha = 1000.0;
    // Extra attention-budget use per treated minute, as a multiple of tau_star.
    // 0 gives the plain cumulative-watch state.
    double budget_drain = 2.0;
    // > 0 replaces the logistic leave rule by a hard wall at this budget.
    double hard_budget = 0.0;
    double p_treat = 0.5;
    std::optional<double> p_actual;
    int max_steps = 10000;
    std::uint64_t seed = 1;
    std::optional<std::uint64_t> creator_pool_seed;
    int n_holdout = 1000;
    double latent_lo = 0.1;
    double latent_hi = 1.1;

    double p_executed() const { return p_actual.value_or(p_treat); }
    std::uint64_t pool_seed() const { return creator_pool_seed.value_or(seed); }
    void validate() const;
};

enum class Mode { experiment, global_treatment, global_control };

struct Step {
    std::int32_t creator = 0;
    std::uint8_t action = 0;
    double reward = 0.0;
    double watch = 0.0;      // cumulative watch before this step
    std::int32_t state = -1;  // tabular state when logs come from a tabular MDP
};

struct SessionLog {
    std::uint64_t viewer_id = 0;
    std::vector<Step> steps;
    bool terminated = false;
    bool truncated = false;

    double total_reward() const;
};

struct CreatorPool {
    int dim = 0;
    std::vector<double> latents;  // n_creators x dim, row-major
    std::vector<std::uint8_t> assignment;

    int size() const { return static_cast<int>(assignment.size()); }
    std::span<const double> latent(int j) const {
        return {latents.data() + static_cast<size_t>(j) * static_cast<size_t>(dim), static_cast<size_t>(dim)};
    }
};

struct Population {
    std::vector<double> viewers;          // n_viewers x dim, main viewers
    std::vector<double> holdout_viewers;  // n_holdout x dim
    CreatorPool creators;
};

struct ExperimentDataset {
    std::vector<SessionLog> sessions;
    std::vector<SessionLog> holdout_sessions;
    std::vector<std::uint8_t> assignments;
    double p_nominal = 0.5;
    double p_actual = 0.5;
    std::optional<SimConfig> config;

    std::size_t n_steps() const;
};

// Holdout viewers take ids [0, n_holdout); main viewers follow.
inline std::uint64_t main_viewer_id(const SimConfig& cfg, std::int64_t i) {
    return static_cast<std::uint64_t>(cfg.n_holdout + i);
}

CreatorPool draw_creators(const SimConfig& cfg);
void draw_viewer_latent(const SimConfig& cfg, std::uint64_t viewer_id, std::uint64_t stream, std::span<double> out);
Population draw_population(const SimConfig& cfg);

SessionLog simulate_session(const SimConfig& cfg, const CreatorPool& pool, std::uint64_t viewer_id,
                            std::span<const double> u, Mode mode,
                            std::uint64_t stream = domain::session);

struct OracleResult {
    double ate = 0.0;
    double standard_error = 0.0;
    double baseline = 0.0;  // mean total reward under global control
    double baseline_se = 0.0;
    double treated = 0.0;
    std::int64_t n_sessions = 0;

    double percent_of_baseline() const { return baseline != 0.0 ? 100.0 * ate / baseline : 0.0; }
};

// Paired sessions under global treatment and global control with common
// random numbers; independent of the experiment's viewers.
OracleResult ground_truth_ate(const SimConfig& cfg, std::int64_t n_oracle_sessions, int threads = 1);

ExperimentDataset generate_dataset(const SimConfig& cfg, int threads = 1);

struct SessionStats {
    double mean_videos = 0.0;
    double se_videos = 0.0;
    double mean_watch_per_video = 0.0;
    double se_watch_per_video = 0.0;
    double median_videos = 0.0;
    double mean_total = 0.0;
    std::int64_t truncated = 0;
};
// Summary of n sessions under `mode` (oracle viewer stream).
SessionStats session_stats(const SimConfig& cfg, std::int64_t n, Mode mode, int threads = 1);

}  // namespace dqkit
