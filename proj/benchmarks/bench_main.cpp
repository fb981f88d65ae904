#include <benchmark/benchmark.h>

#include <vector>

#include "dqkit/estimators.hpp"
#include "dqkit/instances.hpp"
#include "dqkit/simulator.hpp"
#include "dqkit/taylor.hpp"
#include "dqkit/variance.hpp"

using namespace dqkit;

namespace {

SimConfig bench_config(std::int64_t n_viewers) {
    SimConfig c;
    c.n_viewers = n_viewers;
    c.n_creators = 1000;
    c.n_holdout = 200;
    c.tau_star = 0.05;
    c.seed = 77;
    return c;
}

const ExperimentDataset& shared_dataset() {
    static const ExperimentDataset ds = generate_dataset(bench_config(20000));
    return ds;
}

void BM_SimulateSession(benchmark::State& state) {
    const auto cfg = bench_config(1);
    const auto pool = draw_creators(cfg);
    std::vector<double> u(static_cast<size_t>(cfg.latent_dim));
    std::uint64_t id = 0;
    std::int64_t steps = 0;
    for (auto _ : state) {
        draw_viewer_latent(cfg, id, domain::viewer_latent, u);
        const auto s = simulate_session(cfg, pool, id++, u, Mode::global_control);
        steps += static_cast<std::int64_t>(s.steps.size());
        benchmark::DoNotOptimize(s.steps.data());
    }
    state.counters["steps/s"] = benchmark::Counter(static_cast<double>(steps), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_SimulateSession);

void BM_GenerateDataset(benchmark::State& state) {
    const auto cfg = bench_config(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(generate_dataset(cfg).sessions.size());
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GenerateDataset)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_SessionTerms(benchmark::State& state) {
    const auto& ds = shared_dataset();
    const auto model = fit_q_regression(ds.holdout_sessions, ds.p_nominal);
    SessionContext ctx{ds.p_nominal, &model, nullptr};
    std::vector<double> suffix;
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& s = ds.sessions[i++ % ds.sessions.size()];
        if (suffix.size() < s.steps.size()) suffix.resize(s.steps.size());
        benchmark::DoNotOptimize(session_terms(s, ctx, suffix));
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()));
}
BENCHMARK(BM_SessionTerms);

void BM_AggregateStreamers(benchmark::State& state) {
    const auto& ds = shared_dataset();
    AggregateOptions opt;
    opt.pairs = state.range(0) != 0;
    for (auto _ : state) benchmark::DoNotOptimize(aggregate_streamers(ds, opt).n_sessions);
}
BENCHMARK(BM_AggregateStreamers)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Rerandomize(benchmark::State& state) {
    const auto table = aggregate_streamers(shared_dataset());
    for (auto _ : state)
        benchmark::DoNotOptimize(rerandomize(table, 0.5, state.range(0), RerandStatistic::dq_mc, 5).size());
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Rerandomize)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_Expand(benchmark::State& state) {
    RngStream rng(11, domain::instances, 0);
    const auto mdp = random_absorbing_mdp(rng, static_cast<int>(state.range(0)));
    for (auto _ : state) {
        const auto rep = expand(mdp, PolicySpec::mix(0.5), PolicySpec::treatment(), SettingSpec::absorbing(), 3);
        benchmark::DoNotOptimize(rep.remainder);
    }
}
BENCHMARK(BM_Expand)->Arg(10)->Arg(50)->Arg(200);

}  // namespace

BENCHMARK_MAIN();
