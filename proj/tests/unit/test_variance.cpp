#include <gtest/gtest.h>

#include <cmath>

#include "dqkit/error.hpp"
#include "dqkit/instances.hpp"
#include "dqkit/variance.hpp"
#include "enumeration.hpp"
#include "tabular_sessions.hpp"

using namespace dqkit;

namespace {

// Sessions given as (creator, reward) lists; actions follow the assignments.
ExperimentDataset hand_dataset(const std::vector<std::vector<std::pair<int, double>>>& sessions,
                               std::vector<std::uint8_t> assignments, double p = 0.5) {
    ExperimentDataset ds;
    ds.p_nominal = ds.p_actual = p;
    ds.assignments = std::move(assignments);
    std::uint64_t id = 0;
    for (const auto& steps : sessions) {
        SessionLog s;
        s.viewer_id = id++;
        double w = 0.0;
        for (const auto& [j, r] : steps) {
            s.steps.push_back(Step{j, ds.assignments[static_cast<size_t>(j)], r, w, -1});
            w += r;
        }
        s.terminated = true;
        ds.sessions.push_back(s);
    }
    return ds;
}

SimConfig small_config() {
    SimConfig cfg;
    cfg.n_viewers = 5000;
    cfg.n_creators = 400;
    cfg.n_holdout = 500;
    cfg.seed = 41;
    return cfg;
}

// Contrast of the general-p first-order estimator, from the estimator module.
double general_contrast(const ExperimentDataset& ds, double p) {
    const auto data = PolicySpec::mix(p);
    return dq_general(ds, data, PolicySpec::treatment()).point - dq_general(ds, data, PolicySpec::control()).point;
}

struct Moments {
    double mean = 0.0, var = 0.0;
};

// Exact mean and variance over all 2^M assignment vectors.
Moments enumerate_null(const ExperimentDataset& ds, double p, const StreamerTable* table = nullptr) {
    const int M = static_cast<int>(ds.assignments.size());
    std::vector<double> vals, probs;
    for (int mask = 0; mask < (1 << M); ++mask) {
        std::vector<std::uint8_t> a(static_cast<size_t>(M));
        double pr = 1.0;
        for (int j = 0; j < M; ++j) {
            a[static_cast<size_t>(j)] = (mask >> j) & 1;
            pr *= a[static_cast<size_t>(j)] ? p : 1.0 - p;
        }
        const double v = general_contrast(dqtest::relabel(ds, a), p);
        if (table) EXPECT_NEAR(table->dq_general(a, p), v, 1e-10 * (1.0 + std::abs(v)));
        vals.push_back(v);
        probs.push_back(pr);
    }
    Moments m;
    for (size_t k = 0; k < vals.size(); ++k) m.mean += probs[k] * vals[k];
    for (size_t k = 0; k < vals.size(); ++k) m.var += probs[k] * (vals[k] - m.mean) * (vals[k] - m.mean);
    return m;
}

}  // namespace

TEST(Aggregate, OneCreatorHandExample) {
    const auto ds = hand_dataset({{{0, 1.0}, {0, 2.0}}}, {1});
    const auto t = aggregate_streamers(ds);
    ASSERT_EQ(t.creators.size(), 1u);
    EXPECT_DOUBLE_EQ(t.creators[0].suffix_mass, 5.0);
    EXPECT_DOUBLE_EQ(t.creators[0].own_mass, 3.0);
    EXPECT_DOUBLE_EQ(t.creators[0].repeat_mass, 2.0);
    EXPECT_DOUBLE_EQ(t.creators[0].cross_mass, 0.0);
}

TEST(Aggregate, NoRewardsNoMass) {
    const auto ds = hand_dataset({{{0, 0.0}, {1, 0.0}}, {{2, 0.0}}}, {1, 0, 1});
    for (const auto& c : aggregate_streamers(ds, {nullptr, true, 1}).creators) {
        EXPECT_EQ(c.suffix_mass, 0.0);
        EXPECT_EQ(c.cross_sq, 0.0);
    }
}

TEST(Aggregate, PairMassesDecomposeSuffixMass) {
    const auto ds = hand_dataset({{{0, 1.0}, {1, 2.0}, {0, 4.0}, {2, 8.0}}, {{2, 1.0}, {1, 3.0}}}, {1, 0, 1});
    const auto t = aggregate_streamers(ds, {nullptr, true, 1});
    ASSERT_TRUE(t.has_pairs);
    // Creator 0: own 1+4, repeat 4, cross 2+8 from step 0 and 8 from step 2, over N = 2.
    EXPECT_DOUBLE_EQ(t.creators[0].own_mass, 2.5);
    EXPECT_DOUBLE_EQ(t.creators[0].repeat_mass, 2.0);
    EXPECT_DOUBLE_EQ(t.creators[0].cross_mass, 9.0);
    for (const auto& c : t.creators) {
        EXPECT_NEAR(c.suffix_mass, c.own_mass + c.repeat_mass + c.cross_mass, 1e-14);
        double sum = 0.0, sq = 0.0;
        for (const auto& [l, m] : *c.pair_masses) {
            EXPECT_NE(l, c.creator);
            sum += m;
            sq += m * m;
        }
        EXPECT_NEAR(sum, c.cross_mass, 1e-14);
        EXPECT_NEAR(sq, c.cross_sq, 1e-14);
    }
}

TEST(Aggregate, StreamerFormMatchesStepForm) {
    const auto ds = generate_dataset(small_config());
    const auto model = fit_q_regression(ds.holdout_sessions, 0.5);
    const auto t = aggregate_streamers(ds, {&model, true, 1});
    EXPECT_NEAR(t.dq(ds.assignments, 0.5), dq_mc(ds).point, 1e-9 * (1.0 + std::abs(dq_mc(ds).point)));
    EXPECT_NEAR(t.dq(ds.assignments, 0.3), dq_mc(ds, 0.3).point, 1e-9 * (1.0 + std::abs(dq_mc(ds, 0.3).point)));
    const double dr = dq_dr(ds, model, 0.5).point;
    EXPECT_NEAR(t.dq_dr(ds.assignments, 0.5), dr, 1e-9 * (1.0 + std::abs(dr)));
    EXPECT_NEAR(t.dq_general(ds.assignments, 0.5), t.dq(ds.assignments, 0.5), 1e-9);
    const double g = general_contrast(ds, 0.3);
    EXPECT_NEAR(t.dq_general(ds.assignments, 0.3), g, 1e-9 * (1.0 + std::abs(g)));
}

TEST(Aggregate, ThreadCountDoesNotChangeTable) {
    const auto ds = generate_dataset(small_config());
    const auto a = aggregate_streamers(ds, {nullptr, true, 1});
    const auto b = aggregate_streamers(ds, {nullptr, true, 3});
    ASSERT_EQ(a.creators.size(), b.creators.size());
    for (size_t j = 0; j < a.creators.size(); ++j) {
        EXPECT_EQ(a.creators[j].suffix_mass, b.creators[j].suffix_mass);
        EXPECT_EQ(a.creators[j].cross_sq, b.creators[j].cross_sq);
    }
}

TEST(ClosedForm, HandValues) {
    std::vector<StreamerAggregate> one(1);
    one[0].suffix_mass = 3.0;
    EXPECT_DOUBLE_EQ(null_variance_closed_form(one, 0.5), 36.0);
    one[0].suffix_mass = 0.0;
    EXPECT_EQ(null_variance_closed_form(one, 0.5), 0.0);
    // p(1-p)(1/p + 1/(1-p))^2 = 1/(p(1-p)).
    one[0].suffix_mass = 2.0;
    EXPECT_NEAR(null_variance_closed_form(one, 0.2), 4.0 / 0.16, 1e-12);
}

TEST(GeneralP, ExactEqualsClosedFormAtHalf) {
    const auto ds = generate_dataset(small_config());
    const auto t = aggregate_streamers(ds, {nullptr, true, 1});
    const double closed = null_variance_closed_form(t.creators, 0.5);
    const auto exact = null_variance_general_p(t, 0.5, VarianceMode::exact_m2);
    const auto approx = null_variance_general_p(t, 0.5, VarianceMode::approx_m);
    EXPECT_NEAR(exact.variance, closed, 1e-13 * closed);
    EXPECT_NEAR(approx.variance, closed, 1e-13 * closed);
}

TEST(GeneralP, TwoCreatorEnumeration) {
    // Each creator is watched by the other's audience, with a repeat encounter.
    const auto ds = hand_dataset({{{0, 2.0}, {1, 3.0}}, {{1, 1.0}, {0, 4.0}}, {{0, 1.5}, {0, 0.5}, {1, 2.5}}},
                                 {0, 1}, 0.3);
    const auto t = aggregate_streamers(ds, {nullptr, true, 1});
    const Moments m = enumerate_null(ds, 0.3, &t);
    const auto exact = null_variance_general_p(t, 0.3, VarianceMode::exact_m2);
    EXPECT_NEAR(exact.variance, m.var, 1e-10 * m.var);
    EXPECT_GE(exact.variance, 0.0);
}

TEST(GeneralP, EnumerationOnSampledSessions) {
    RngStream rng(9, domain::instances, 3);
    const auto mdp = random_absorbing_mdp(rng, 4, 2, 0.25, 0.5, 2.0);
    for (double p : {0.3, 0.5, 0.65}) {
        const auto ds = dqtest::sample_creator_sessions(mdp, 5, 40, p, 17);
        const auto t = aggregate_streamers(ds, {nullptr, true, 1});
        const Moments m = enumerate_null(ds, p, &t);
        const auto exact = null_variance_general_p(t, p, VarianceMode::exact_m2);
        EXPECT_NEAR(exact.variance, m.var, 1e-10 * m.var) << "p " << p;
        const auto approx = null_variance_general_p(t, p, VarianceMode::approx_m);
        EXPECT_GT(approx.variance, 0.0);
    }
}

TEST(GeneralP, ApproximationCloseOnHomogeneousStreamers) {
    auto cfg = small_config();
    cfg.n_creators = 1000;
    const auto ds = generate_dataset(cfg);
    const auto t = aggregate_streamers(ds, {nullptr, true, 1});
    for (double p : {0.3, 0.7}) {
        const auto exact = null_variance_general_p(t, p, VarianceMode::exact_m2);
        const auto approx = null_variance_general_p(t, p, VarianceMode::approx_m);
        EXPECT_LT(std::abs(exact.variance - approx.variance) / exact.variance, 0.01) << "p " << p;
        EXPECT_TRUE(approx.warnings.empty());
    }
}

TEST(GeneralP, ConcentratedMassWarns) {
    const auto ds = hand_dataset({{{0, 10.0}, {1, 1.0}}, {{0, 9.0}, {2, 1.0}}}, {1, 0, 1}, 0.3);
    const auto t = aggregate_streamers(ds, {nullptr, true, 1});
    EXPECT_GT(max_mass_share(t.creators), 0.5);
    const auto approx = null_variance_general_p(t, 0.3, VarianceMode::approx_m);
    ASSERT_FALSE(approx.warnings.empty());
    EXPECT_NE(approx.warnings[0].find("approximation quality degraded"), std::string::npos);
}

TEST(GeneralP, ExactModeNeedsPairs) {
    const auto ds = generate_dataset(small_config());
    const auto t = aggregate_streamers(ds);
    EXPECT_ANY_THROW(null_variance_general_p(t, 0.3, VarianceMode::exact_m2));
}

TEST(Rerandomize, SingleDrawReproducible) {
    const auto t = aggregate_streamers(generate_dataset(small_config()));
    const auto a = rerandomize(t, 0.5, 1, RerandStatistic::dq_mc, 5);
    const auto b = rerandomize(t, 0.5, 1, RerandStatistic::dq_mc, 5);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, rerandomize(t, 0.5, 1, RerandStatistic::dq_mc, 6));
}

TEST(Rerandomize, ThreadCountDoesNotChangeDraws) {
    const auto t = aggregate_streamers(generate_dataset(small_config()));
    EXPECT_EQ(rerandomize(t, 0.5, 1000, RerandStatistic::dq_mc, 3, 1),
              rerandomize(t, 0.5, 1000, RerandStatistic::dq_mc, 3, 4));
}

TEST(Rerandomize, MatchesClosedFormsAndCentersOnZero) {
    auto cfg = small_config();
    cfg.tau_star = 0.0;
    const auto ds = generate_dataset(cfg);
    const auto model = fit_q_regression(ds.holdout_sessions, 0.5);
    const auto t = aggregate_streamers(ds, {&model, false, 1});
    struct Case {
        RerandStatistic stat;
        double p;
        double closed;
    };
    const std::vector<Case> cases = {
        {RerandStatistic::dq_mc, 0.5, null_variance_closed_form(t.creators, 0.5)},
        {RerandStatistic::dq_mc, 0.3, null_variance_closed_form(t.creators, 0.3)},
        {RerandStatistic::dq_dr, 0.5, null_variance_dr(t.creators, 0.5)},
    };
    for (const auto& c : cases) {
        const auto draws = rerandomize(t, c.p, 10000, c.stat, 11);
        double mean = 0.0;
        for (double d : draws) mean += d;
        mean /= static_cast<double>(draws.size());
        double var = 0.0;
        for (double d : draws) var += (d - mean) * (d - mean);
        var /= static_cast<double>(draws.size() - 1);
        EXPECT_LT(std::abs(var - c.closed) / c.closed, 0.05);
        EXPECT_LT(std::abs(mean), 3.0 * std::sqrt(var / static_cast<double>(draws.size())));
    }
}

TEST(HypothesisTest, ZeroStatisticNeverRejects) {
    const auto r = hypothesis_test(0.0, 4.0);
    EXPECT_EQ(r.p_value_normal, 1.0);
    EXPECT_EQ(r.p_value_chebyshev, 1.0);
    EXPECT_FALSE(r.reject_normal);
    EXPECT_FALSE(r.reject_chebyshev);
}

TEST(HypothesisTest, NormalQuantileBoundary) {
    const auto r = hypothesis_test(1.6449, 1.0);
    EXPECT_NEAR(r.z, 1.6449, 1e-15);
    EXPECT_NEAR(r.p_value_normal, 0.10, 1e-4);
    EXPECT_NEAR(0.5 * r.p_value_normal, 0.05, 1e-4);
    EXPECT_TRUE(hypothesis_test(1.66, 1.0).reject_normal);
    EXPECT_FALSE(hypothesis_test(1.63, 1.0).reject_normal);
    EXPECT_NEAR(hypothesis_test(-1.959964, 1.0).p_value_normal, 0.05, 1e-6);
}

TEST(HypothesisTest, ChebyshevDominatesNormal) {
    for (double z = 0.0; z < 8.0; z += 0.01) {
        const auto r = hypothesis_test(z, 1.0);
        EXPECT_GE(r.p_value_normal, 0.0);
        EXPECT_LE(r.p_value_normal, 1.0);
        EXPECT_GE(r.p_value_chebyshev, 0.0);
        EXPECT_LE(r.p_value_chebyshev, 1.0);
        if (z >= 1.0) EXPECT_GE(r.p_value_chebyshev, r.p_value_normal) << z;
    }
    EXPECT_DOUBLE_EQ(hypothesis_test(4.0, 1.0).p_value_chebyshev, 1.0 / 16.0);
}

TEST(HypothesisTest, DegenerateVariance) {
    const auto r = hypothesis_test(2.0, 0.0);
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.p_value_normal, 0.0);
    EXPECT_TRUE(r.reject_normal);
    EXPECT_FALSE(hypothesis_test(0.0, 0.0).reject_normal);
}

TEST(TestReport, MethodNamesAndCsv) {
    for (auto m : {TestMethod::closed_form, TestMethod::exact_m2, TestMethod::approx_m, TestMethod::rerandomization})
        EXPECT_EQ(test_method_from_string(to_string(m)), m);
    EXPECT_ANY_THROW(test_method_from_string("bogus"));
    const auto r = hypothesis_test(2.0, 1.0, 0.9);
    EXPECT_EQ(r.csv_header(), "method,statistic,variance,z,p_normal,p_chebyshev,reject_90");
    EXPECT_EQ(r.csv_row().rfind("closed_form,2,1,2,", 0), 0u);
}
