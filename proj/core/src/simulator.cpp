#include "dqkit/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "dqkit/error.hpp"
#include "dqkit/parallel.hpp"

namespace dqkit {

namespace {

constexpr int kAffinityRetries = 16;

// Probability of leaving after a step taken at budget b: e^b / (alpha + e^b).
double leave_probability(double alpha, double b) {
    const double x = std::log(alpha) - b;
    if (x > 700.0) return 0.0;
    return 1.0 / (1.0 + std::exp(x));
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

struct Moments {
    double n = 0.0, sum = 0.0, sumsq = 0.0;
    void add(double x) {
        n += 1.0;
        sum += x;
        sumsq += x * x;
    }
    void merge(const Moments& o) {
        n += o.n;
        sum += o.sum;
        sumsq += o.sumsq;
    }
    double mean() const { return n > 0 ? sum / n : 0.0; }
    double se() const {
        if (n < 2) return 0.0;
        const double m = mean();
        return std::sqrt(std::max(0.0, (sumsq / n - m * m)) / (n - 1.0));
    }
};

}  // namespace

void SimConfig::validate() const {
    if (n_viewers < 0) throw ConfigError("n_viewers must be >= 0");
    if (n_creators < 1) throw ConfigError("n_creators must be >= 1");
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (!(k_scale > 0.0)) throw ConfigError("k_scale must be positive");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (!(p_treat > 0.0 && p_treat < 1.0)) throw ConfigError("p_treat must lie in (0,1)");
    if (p_actual && !(*p_actual >= 0.0 && *p_actual <= 1.0)) throw ConfigError("p_actual must lie in [0,1]");
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (n_holdout < 0) throw ConfigError("n_holdout must be >= 0");
    if (hard_budget < 0.0) throw ConfigError("hard_budget must be >= 0");
    if (tau_star <= -1.0) throw ConfigError("tau_star must exceed -1");
    if (!(latent_hi > latent_lo)) throw ConfigError("latent range is empty");
}

double SessionLog::total_reward() const {
    double s = 0.0;
    for (const auto& st : steps) s += st.reward;
    return s;
}

std::size_t ExperimentDataset::n_steps() const {
    std::size_t n = 0;
    for (const auto& s : sessions) n += s.steps.size();
    return n;
}

CreatorPool draw_creators(const SimConfig& cfg) {
    CreatorPool pool;
    pool.dim = cfg.latent_dim;
    pool.latents.resize(static_cast<size_t>(cfg.n_creators) * static_cast<size_t>(cfg.latent_dim));
    pool.assignment.resize(static_cast<size_t>(cfg.n_creators));
    const double p = cfg.p_executed();
    for (int j = 0; j < cfg.n_creators; ++j) {
        RngStream lat(cfg.pool_seed(), domain::creator_latent, static_cast<std::uint64_t>(j));
        for (int k = 0; k < cfg.latent_dim; ++k)
            pool.latents[static_cast<size_t>(j) * static_cast<size_t>(cfg.latent_dim) + static_cast<size_t>(k)] =
                lat.uniform(cfg.latent_lo, cfg.latent_hi);
        RngStream asg(cfg.seed, domain::assignment, static_cast<std::uint64_t>(j));
        pool.assignment[static_cast<size_t>(j)] = asg.uniform() < p ? 1 : 0;
    }
    return pool;
}

void draw_viewer_latent(const SimConfig& cfg, std::uint64_t viewer_id, std::uint64_t stream, std::span<double> out) {
    RngStream rng(cfg.seed, stream, viewer_id);
    for (auto& x : out) x = rng.uniform(cfg.latent_lo, cfg.latent_hi);
}

Population draw_population(const SimConfig& cfg) {
    cfg.validate();
    Population pop;
    pop.creators = draw_creators(cfg);
    const auto d = static_cast<size_t>(cfg.latent_dim);
    pop.viewers.resize(static_cast<size_t>(cfg.n_viewers) * d);
    pop.holdout_viewers.resize(static_cast<size_t>(cfg.n_holdout) * d);
    for (int i = 0; i < cfg.n_holdout; ++i)
        draw_viewer_latent(cfg, static_cast<std::uint64_t>(i), domain::viewer_latent,
                           {pop.holdout_viewers.data() + static_cast<size_t>(i) * d, d});
    for (std::int64_t i = 0; i < cfg.n_viewers; ++i)
        draw_viewer_latent(cfg, main_viewer_id(cfg, i), domain::viewer_latent,
                           {pop.viewers.data() + static_cast<size_t>(i) * d, d});
    return pop;
}

SessionLog simulate_session(const SimConfig& cfg, const CreatorPool& pool, std::uint64_t viewer_id,
                            std::span<const double> u, Mode mode, std::uint64_t stream) {
    const auto key = derive_key(cfg.seed, stream);
    const auto id_lo = static_cast<std::uint32_t>(viewer_id);
    const auto id_hi = static_cast<std::uint32_t>(viewer_id >> 32);
    const auto M = static_cast<std::uint64_t>(pool.size());

    SessionLog log;
    log.viewer_id = viewer_id;
    double budget = 0.0;
    double watched = 0.0;
    for (int t = 0; t < cfg.max_steps; ++t) {
        Philox4x32::Counter w{};
        int j = -1;
        double affinity = 0.0;
        for (std::uint32_t attempt = 0; attempt < kAffinityRetries; ++attempt) {
            w = Philox4x32::block({static_cast<std::uint32_t>(t), attempt, id_lo, id_hi}, key);
            j = static_cast<int>(reduce_below(join_words(w[0], 0u), M));
            affinity = dot(u, pool.latent(j));
            if (affinity > 0.0 && std::isfinite(affinity)) break;
            j = -1;
        }
        if (j < 0) throw Error("non-positive affinity after repeated creator draws");

        std::uint8_t a = 0;
        switch (mode) {
            case Mode::experiment: a = pool.assignment[static_cast<size_t>(j)]; break;
            case Mode::global_treatment: a = 1; break;
            case Mode::global_control: a = 0; break;
        }
        const double base = -cfg.k_scale * affinity * std::log1p(-u64_to_unit(join_words(w[1], w[2])));
        const double lift = 1.0 + cfg.tau_star * a;
        double reward = base * lift;
        double use = reward * (1.0 + cfg.budget_drain * cfg.tau_star * a);

        bool stop = false;
        if (cfg.hard_budget > 0.0) {
            if (budget + use >= cfg.hard_budget) {
                reward *= (cfg.hard_budget - budget) / use;
                use = cfg.hard_budget - budget;
                stop = true;
            }
        } else {
            stop = u32_to_open_unit(w[3]) < leave_probability(cfg.alpha, budget);
        }
        log.steps.push_back(Step{j, a, reward, watched, -1});
        watched += reward;
        budget += use;
        if (stop) {
            log.terminated = true;
            break;
        }
    }
    log.truncated = !log.terminated;
    return log;
}

OracleResult ground_truth_ate(const SimConfig& cfg, std::int64_t n_oracle_sessions, int threads) {
    cfg.validate();
    const CreatorPool pool = draw_creators(cfg);
    struct Part {
        Moments diff, base, treat;
    };
    const auto n_blocks = block_count(n_oracle_sessions);
    std::vector<Part> parts(static_cast<size_t>(n_blocks));
    parallel_for_blocks(n_blocks, threads, [&](std::int64_t b) {
        Part& part = parts[static_cast<size_t>(b)];
        std::vector<double> u(static_cast<size_t>(cfg.latent_dim));
        const std::int64_t lo = b * kSessionBlock;
        const std::int64_t hi = std::min(n_oracle_sessions, lo + kSessionBlock);
        for (std::int64_t i = lo; i < hi; ++i) {
            const auto id = static_cast<std::uint64_t>(i);
            draw_viewer_latent(cfg, id, domain::oracle_viewer, u);
            const double j1 =
                simulate_session(cfg, pool, id, u, Mode::global_treatment, domain::oracle_session).total_reward();
            const double j0 =
                simulate_session(cfg, pool, id, u, Mode::global_control, domain::oracle_session).total_reward();
            part.diff.add(j1 - j0);
            part.base.add(j0);
            part.treat.add(j1);
        }
    });
    Part all = pairwise_reduce(std::move(parts), [](Part& a, const Part& b) {
        a.diff.merge(b.diff);
        a.base.merge(b.base);
        a.treat.merge(b.treat);
    });
    OracleResult res;
    res.n_sessions = n_oracle_sessions;
    res.ate = all.diff.mean();
    res.standard_error = all.diff.se();
    res.baseline = all.base.mean();
    res.baseline_se = all.base.se();
    res.treated = all.treat.mean();
    return res;
}

ExperimentDataset generate_dataset(const SimConfig& cfg, int threads) {
    cfg.validate();
    ExperimentDataset ds;
    const CreatorPool pool = draw_creators(cfg);
    ds.assignments = pool.assignment;
    ds.p_nominal = cfg.p_treat;
    ds.p_actual = cfg.p_executed();
    ds.config = cfg;
    ds.sessions.resize(static_cast<size_t>(cfg.n_viewers));
    ds.holdout_sessions.resize(static_cast<size_t>(cfg.n_holdout));
    const auto d = static_cast<size_t>(cfg.latent_dim);

    auto run = [&](std::vector<SessionLog>& out, std::int64_t n, std::uint64_t first_id) {
        parallel_for_blocks(block_count(n), threads, [&](std::int64_t b) {
            std::vector<double> u(d);
            const std::int64_t lo = b * kSessionBlock;
            const std::int64_t hi = std::min(n, lo + kSessionBlock);
            for (std::int64_t i = lo; i < hi; ++i) {
                const std::uint64_t id = first_id + static_cast<std::uint64_t>(i);
                draw_viewer_latent(cfg, id, domain::viewer_latent, u);
                out[static_cast<size_t>(i)] = simulate_session(cfg, pool, id, u, Mode::experiment);
            }
        });
    };
    run(ds.holdout_sessions, cfg.n_holdout, 0);
    run(ds.sessions, cfg.n_viewers, main_viewer_id(cfg, 0));
    return ds;
}

SessionStats session_stats(const SimConfig& cfg, std::int64_t n, Mode mode, int threads) {
    cfg.validate();
    const CreatorPool pool = draw_creators(cfg);
    struct Part {
        Moments videos, total;
        double cross = 0.0;  // sum of videos * total
        std::int64_t truncated = 0;
        std::vector<std::int32_t> lengths;
    };
    const auto n_blocks = block_count(n);
    std::vector<Part> parts(static_cast<size_t>(n_blocks));
    parallel_for_blocks(n_blocks, threads, [&](std::int64_t b) {
        Part& part = parts[static_cast<size_t>(b)];
        std::vector<double> u(static_cast<size_t>(cfg.latent_dim));
        const std::int64_t lo = b * kSessionBlock;
        const std::int64_t hi = std::min(n, lo + kSessionBlock);
        for (std::int64_t i = lo; i < hi; ++i) {
            const auto id = static_cast<std::uint64_t>(i);
            draw_viewer_latent(cfg, id, domain::oracle_viewer, u);
            const auto log = simulate_session(cfg, pool, id, u, mode, domain::oracle_session);
            const double len = static_cast<double>(log.steps.size());
            const double tot = log.total_reward();
            part.videos.add(len);
            part.total.add(tot);
            part.cross += len * tot;
            part.truncated += log.truncated ? 1 : 0;
            part.lengths.push_back(static_cast<std::int32_t>(log.steps.size()));
        }
    });
    Part all = pairwise_reduce(std::move(parts), [](Part& a, const Part& b) {
        a.videos.merge(b.videos);
        a.cross += b.cross;
        a.total.merge(b.total);
        a.truncated += b.truncated;
        a.lengths.insert(a.lengths.end(), b.lengths.begin(), b.lengths.end());
    });
    SessionStats s;
    s.mean_videos = all.videos.mean();
    s.se_videos = all.videos.se();
    // Ratio estimator sum(total) / sum(videos) with a delta-method standard error.
    const double R = all.total.sum / all.videos.sum;
    const double resid_sq = all.total.sumsq - 2.0 * R * all.cross + R * R * all.videos.sumsq;
    s.mean_watch_per_video = R;
    s.se_watch_per_video = std::sqrt(std::max(0.0, resid_sq)) / all.videos.sum;
    s.mean_total = all.total.mean();
    s.truncated = all.truncated;
    if (!all.lengths.empty()) {
        auto mid = all.lengths.begin() + static_cast<std::ptrdiff_t>(all.lengths.size() / 2);
        std::nth_element(all.lengths.begin(), mid, all.lengths.end());
        s.median_videos = *mid;
    }
    return s;
}

}  // namespace dqkit
