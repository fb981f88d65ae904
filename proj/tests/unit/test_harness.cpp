#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "dqkit/error.hpp"
#include "dqkit/harness.hpp"
#include "dqkit/taylor.hpp"

using namespace dqkit;

namespace {

SweepConfig tiny_sweep() {
    SweepConfig c;
    c.base.n_creators = 300;
    c.base.n_holdout = 300;
    c.base.seed = 1234;
    c.effect_sizes = {0.0, 0.05};
    c.n_viewers_grid = {2000};
    c.n_seeds = 12;
    c.oracle_sessions = 20000;
    return c;
}

}  // namespace

TEST(SweepConfig, JsonRoundTrip) {
    auto c = tiny_sweep();
    c.misspecification = Misspecification{0.5, {0.501, 0.52}};
    c.estimators = {"dq", "ope"};
    c.null_seeds = 7;
    const auto back = sweep_config_from_json(sweep_config_to_json(c));
    EXPECT_EQ(sweep_config_to_json(back), sweep_config_to_json(c));
    ASSERT_TRUE(back.misspecification);
    EXPECT_EQ(back.misspecification->p_actual, (std::vector<double>{0.501, 0.52}));
}

TEST(SweepConfig, ScalarActualProbabilityAccepted) {
    const auto c = sweep_config_from_json(R"({"misspecification": {"p_nominal": 0.5, "p_actual": 0.501}})");
    ASSERT_TRUE(c.misspecification);
    EXPECT_EQ(c.misspecification->p_actual, std::vector<double>{0.501});
}

TEST(SweepConfig, Rejections) {
    EXPECT_THROW(sweep_config_from_json(R"({"n_seeds": 0})"), ConfigError);
    EXPECT_THROW(sweep_config_from_json(R"({"effect_sizes": []})"), ConfigError);
    EXPECT_THROW(sweep_config_from_json(R"({"n_viewers_grid": []})"), ConfigError);
    EXPECT_THROW(sweep_config_from_json(R"({"estimators": ["dq", "magic"]})"), ConfigError);
    EXPECT_THROW(sweep_config_from_json(R"({"surprise": 1})"), ConfigError);
    EXPECT_THROW(sweep_config_from_json(R"({"base": {"alpha": -1}})"), ConfigError);
    EXPECT_THROW(sweep_config_from_json("not json"), ConfigError);
}

TEST(SweepConfig, PresetsAreValid) {
    for (const auto& c : {preset_ranking(), preset_power(), preset_misspec()}) EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(preset_power().effect_sizes.front(), 0.0);
    EXPECT_GE(preset_power().null_seeds, 200);
    ASSERT_TRUE(preset_misspec().misspecification);
    EXPECT_EQ(preset_misspec().misspecification->p_actual.front(), 0.501);
}

TEST(Replicate, ConfigDerivation) {
    auto sc = tiny_sweep();
    sc.misspecification = Misspecification{0.5, {0.501}};
    const auto c = replicate_config(sc, 0.05, 777, 3, 0.501);
    EXPECT_EQ(c.seed, sc.base.seed + 3);
    EXPECT_EQ(c.pool_seed(), sc.base.seed);
    EXPECT_EQ(c.tau_star, 0.05);
    EXPECT_EQ(c.n_viewers, 777);
    EXPECT_EQ(c.p_treat, 0.5);
    EXPECT_EQ(c.p_executed(), 0.501);
}

TEST(Replicate, MatchesMaterializedEstimators) {
    auto sc = tiny_sweep();
    const auto cfg = replicate_config(sc, 0.05, 3000, 0);
    const auto r = run_replicate(cfg, 0.5, true, 0.9, 1);
    const auto ds = generate_dataset(cfg);
    const auto qm = fit_q_regression(ds.holdout_sessions, 0.5);
    const auto rm = fit_q_regression(ds.holdout_sessions, 0.5, RegressionTarget::reward);
    const std::array<double, 6> expect = {naive(ds).point,         naive_dr(ds, rm, 0.5).point,
                                          ope_stepwise(ds).point,  ope_dr(ds, qm, 0.5).point,
                                          dq_mc(ds).point,         dq_dr(ds, qm, 0.5).point};
    for (size_t k = 0; k < 6; ++k)
        EXPECT_NEAR(r.estimates[k], expect[k], 1e-9 * (1.0 + std::abs(expect[k]))) << kEstimatorNames[k];
    EXPECT_EQ(r.n_sessions, 3000);
    EXPECT_TRUE(r.q_from_holdout);
    ASSERT_TRUE(r.dq_test && r.dq_dr_test);
    EXPECT_NEAR(r.dq_test->statistic, expect[4], 1e-9 * (1.0 + std::abs(expect[4])));
}

TEST(Replicate, ThreadCountInvariant) {
    const auto cfg = replicate_config(tiny_sweep(), 0.05, 9000, 2);
    const auto a = run_replicate(cfg, 0.5, true, 0.9, 1);
    const auto b = run_replicate(cfg, 0.5, true, 0.9, 3);
    EXPECT_EQ(a.estimates, b.estimates);
    EXPECT_EQ(a.dq_test->variance, b.dq_test->variance);
    EXPECT_EQ(a.dq_dr_test->variance, b.dq_dr_test->variance);
}

TEST(Sweep, NullEffectUnbiasedAndCsvStable) {
    const auto cfg = tiny_sweep();
    const auto res = run_sweep(cfg, 1);
    ASSERT_EQ(res.oracles.size(), 2u);
    EXPECT_EQ(res.oracles[0].oracle.ate, 0.0);
    for (const char* e : {"naive", "dq", "dq_dr", "ope"}) {
        const auto* c = res.find(0.0, 2000, e);
        ASSERT_NE(c, nullptr) << e;
        EXPECT_EQ(c->n_ok, 12);
        EXPECT_FALSE(c->relative);
        EXPECT_LE(std::abs(c->mean), 3.0 * c->sd / std::sqrt(12.0) + 1e-12) << e;
    }
    const auto* c = res.find(0.05, 2000, "dq_dr");
    ASSERT_NE(c, nullptr);
    EXPECT_TRUE(c->relative);
    EXPECT_NEAR(c->rel_rmse, c->rmse / std::abs(c->ate), 1e-12);
    EXPECT_EQ(c->estimates.size(), 12u);
    EXPECT_EQ(res.to_csv(), run_sweep(cfg, 2).to_csv());
    EXPECT_FALSE(res.plot_csv().empty());
}

TEST(Sweep, EffectLabelFromOracle) {
    OracleResult o;
    o.ate = -0.05;
    o.baseline = 10.0;
    EXPECT_EQ(effect_label(o), "effect -0.50%");
}

TEST(Sweep, OracleLimitedFlag) {
    auto cfg = tiny_sweep();
    cfg.effect_sizes = {0.05};
    cfg.n_seeds = 2;
    cfg.oracle_sessions = 50;
    const auto res = run_sweep(cfg, 1);
    EXPECT_TRUE(res.cells.front().oracle_limited);
    EXPECT_NE(res.to_csv().find("oracle-limited"), std::string::npos);
}

TEST(Power, NullRowUsesNullSeeds) {
    auto cfg = tiny_sweep();
    cfg.n_seeds = 4;
    cfg.null_seeds = 9;
    cfg.estimators = {"dq", "dq_dr"};
    const auto res = run_power_study(cfg, 1);
    const auto* null_cell = res.find(0.0, 2000, "dq_dr");
    const auto* alt_cell = res.find(0.05, 2000, "dq_dr");
    ASSERT_TRUE(null_cell && alt_cell);
    EXPECT_EQ(null_cell->n_seeds, 9);
    EXPECT_EQ(alt_cell->n_seeds, 4);
    EXPECT_EQ(null_cell->z_values.size(), 9u);
    EXPECT_NEAR(null_cell->power, null_cell->rejections / 9.0, 1e-15);
    EXPECT_EQ(res.to_csv(), run_power_study(cfg, 2).to_csv());
}

TEST(Misspec, CorrectRowsFirstAndNeedsBlock) {
    auto cfg = tiny_sweep();
    cfg.effect_sizes = {0.05};
    cfg.n_seeds = 3;
    EXPECT_THROW(run_misspecification_study(cfg, 1), ConfigError);
    cfg.misspecification = Misspecification{0.5, {0.52}};
    const auto res = run_misspecification_study(cfg, 1);
    ASSERT_FALSE(res.rows.empty());
    EXPECT_EQ(res.rows.front().p_actual, 0.5);
    ASSERT_NE(res.find(0.52, "dq"), nullptr);
    ASSERT_NE(res.find(0.5, "dq_dr"), nullptr);
    // The correctly specified rows reproduce the sweep.
    auto sweep_cfg = cfg;
    sweep_cfg.misspecification.reset();
    const auto sw = run_sweep(sweep_cfg, 1);
    EXPECT_NEAR(res.find(0.5, "dq")->mean, sw.find(0.05, 2000, "dq")->mean, 1e-12);
}

namespace {

std::string read_config(const std::string& name) {
    std::ifstream in(std::string(DQKIT_CONFIG_DIR) + "/" + name);
    EXPECT_TRUE(in) << name;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void expect_matches_preset(const std::string& name, SweepConfig preset) {
    auto shipped = sweep_config_from_json(read_config(name));
    shipped.output_dir = preset.output_dir;
    EXPECT_EQ(sweep_config_to_json(shipped), sweep_config_to_json(preset)) << name;
}

}  // namespace

TEST(ShippedConfigs, MatchPresets) {
    expect_matches_preset("ranking.json", preset_ranking());
    expect_matches_preset("power.json", preset_power());
    expect_matches_preset("misspec.json", preset_misspec());
    expect_matches_preset("sweep_default.json", SweepConfig{});
}

TEST(ShippedConfigs, ExampleMdpExpands) {
    const auto mdp = mdp_from_json(read_config("example_mdp.json"));
    for (const auto& target : {PolicySpec::treatment(), PolicySpec::control()}) {
        const auto rep = expand(mdp, PolicySpec::mix(0.5), target, SettingSpec::absorbing(), 3);
        EXPECT_LT(std::abs(rep.identity_residual()), 1e-9);
        EXPECT_TRUE(rep.bound_ok);
    }
}
