#include <gtest/gtest.h>

#include <cmath>

#include "dqkit/error.hpp"
#include "dqkit/instances.hpp"
#include "dqkit/taylor.hpp"

using namespace dqkit;

namespace {

Matrix transient_kernel(const TabularMDP& m, const PolicySpec& pol) {
    Matrix P = induced_kernel(m, pol).P;
    for (int s : m.absorbing()) {
        P.row(s).setZero();
        P.col(s).setZero();
    }
    return P;
}

Matrix random_contraction(RngStream& rng, int n, double radius) {
    Matrix A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = rng.uniform(-1.0, 1.0);
    const double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
    return A * (radius / norm);
}

// Levels 0..n-2 only move to higher indices, so absorption happens within n-1 steps.
TabularMDP layered_absorbing(RngStream& rng, int n) {
    std::vector<Matrix> P;
    for (int a = 0; a < 2; ++a) {
        Matrix Pa = Matrix::Zero(n, n);
        for (int s = 0; s < n - 1; ++s) {
            const int width = n - 1 - s;
            Matrix w = random_stochastic(rng, 1, width);
            Pa.row(s).tail(width) = w.row(0);
        }
        Pa(n - 1, n - 1) = 1.0;
        P.push_back(Pa);
    }
    Matrix r = Matrix::Zero(n, 2);
    for (int s = 0; s < n - 1; ++s) r.row(s) << rng.uniform(), rng.uniform();
    Vector rho = Vector::Zero(n);
    rho(0) = 1.0;
    return TabularMDP(P, r, rho, {n - 1});
}

}  // namespace

TEST(DqTerm, IdenticalPoliciesVanish) {
    RngStream rng(101, 0, 0);
    auto m = random_absorbing_mdp(rng, 5);
    for (int k = 1; k <= 3; ++k) {
        auto dq = dq_term(m, PolicySpec::mix(0.4), PolicySpec::mix(0.4), SettingSpec::absorbing(), k);
        EXPECT_LT(dq.cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(DqTerm, ZerothTermIsTargetReward) {
    RngStream rng(101, 0, 1);
    auto m = random_absorbing_mdp(rng, 5);
    auto dq = dq_term(m, PolicySpec::mix(0.5), PolicySpec::treatment(), SettingSpec::absorbing(), 0);
    for (int s = 0; s < 5; ++s) EXPECT_EQ(dq(s), m.r()(s, 1));
}

TEST(DqTerm, FirstTermMatchesMatrixForm) {
    RngStream rng(101, 0, 2);
    auto m = random_absorbing_mdp(rng, 4);
    auto pi = PolicySpec::mix(0.5);
    auto pip = PolicySpec::treatment();
    const Matrix A = transient_kernel(m, pi), Ap = transient_kernel(m, pip);
    Vector rp = induced_kernel(m, pip).r;
    for (int s : m.absorbing()) rp(s) = 0.0;
    const Vector expected = (Ap - A) * (Matrix::Identity(4, 4) - A).partialPivLu().solve(rp);
    auto dq = dq_term(m, pi, pip, SettingSpec::absorbing(), 1);
    for (int s = 0; s < 4; ++s) EXPECT_NEAR(dq(s), expected(s), 1e-10);
}

TEST(Expand, ZeroDeltaHasOnlyZerothTerm) {
    RngStream rng(103, 0, 0);
    auto b = random_absorbing_mdp(rng, 6);
    Matrix r = b.r();
    TabularMDP m({b.P(0), b.P(0)}, r, b.rho_init(), b.absorbing());
    auto rep = expand(m, PolicySpec::mix(0.5), PolicySpec::treatment(), SettingSpec::absorbing(), 3);
    EXPECT_EQ(rep.delta, 0.0);
    for (int k = 1; k <= 3; ++k) EXPECT_NEAR(rep.terms[static_cast<size_t>(k)], 0.0, 1e-15);
    EXPECT_NEAR(rep.remainder, 0.0, 1e-15);
    EXPECT_NEAR(rep.terms[0], rep.exact_value, 1e-12);
}

TEST(Expand, DiscountedSumMatchesResolvent) {
    RngStream rng(103, 0, 1);
    auto m = random_ergodic_mdp(rng, 3);
    auto pip = PolicySpec::treatment();
    auto rep = expand(m, PolicySpec::mix(0.5), pip, SettingSpec::discounted(0.5), 2);
    auto k = induced_kernel(m, pip);
    const double direct = m.rho_init().dot((Matrix::Identity(3, 3) - 0.5 * k.P).partialPivLu().solve(k.r));
    EXPECT_NEAR(rep.term_sum() + rep.remainder, direct, 1e-10);
    EXPECT_NEAR(rep.exact_value, direct, 1e-12);
    EXPECT_DOUBLE_EQ(rep.h_eff, 2.0);
    EXPECT_DOUBLE_EQ(rep.scaling_const, 2.0);
}

TEST(Expand, IdentityHoldsInEverySetting) {
    for (int i = 0; i < 40; ++i) {
        RngStream rng(107, 0, static_cast<std::uint64_t>(i));
        const int n = 3 + static_cast<int>(rng.below(8));
        auto erg = random_ergodic_mdp(rng, n);
        auto abs = random_absorbing_mdp(rng, n);
        auto pip = PolicySpec::tabular(random_policy_table(rng, n, 2));
        for (int K = 0; K <= 3; ++K) {
            for (auto [m, s] : {std::pair{&erg, SettingSpec::discounted(0.9)}, std::pair{&erg, SettingSpec::finite(11)},
                                std::pair{&erg, SettingSpec::average()}, std::pair{&abs, SettingSpec::absorbing()}}) {
                auto rep = expand(*m, PolicySpec::mix(0.5), pip, s, K);
                EXPECT_NEAR(rep.identity_residual(), 0.0, 1e-9) << s.name() << " K=" << K;
            }
        }
    }
}

TEST(Expand, RemainderEnvelopeDecaysGeometrically) {
    int checked = 0;
    for (int i = 0; i < 200 && checked < 40; ++i) {
        RngStream rng(109, 0, static_cast<std::uint64_t>(i));
        auto b = random_absorbing_mdp(rng, 5, 2, 0.5);
        Matrix U = random_stochastic(rng, 5, 5);
        U.row(4).setZero();
        U(4, 4) = 1.0;
        auto mm = perturbed_treatment(b, U, 0.15);
        auto rep0 = expand(mm, PolicySpec::mix(0.5), PolicySpec::treatment(), SettingSpec::absorbing(), 0);
        const double ratio = rep0.delta * rep0.h_eff;
        if (ratio >= 1.0) continue;
        ++checked;
        for (int K = 0; K <= 5; ++K) {
            auto rep = expand(mm, PolicySpec::mix(0.5), PolicySpec::treatment(), SettingSpec::absorbing(), K);
            EXPECT_LE(std::abs(rep.remainder), std::pow(ratio, K + 1) * rep.scaling_const * rep.r_max + 1e-12);
        }
    }
    EXPECT_GT(checked, 10);
}

TEST(Expand, AbsorbingMatchesPaddedFiniteHorizon) {
    for (int i = 0; i < 20; ++i) {
        RngStream rng(113, 0, static_cast<std::uint64_t>(i));
        const int n = 3 + static_cast<int>(rng.below(5));
        auto m = layered_absorbing(rng, n);
        for (int K = 0; K <= 2; ++K) {
            auto a = expand(m, PolicySpec::mix(0.5), PolicySpec::treatment(), SettingSpec::absorbing(), K);
            auto f = expand(m, PolicySpec::mix(0.5), PolicySpec::treatment(), SettingSpec::finite(n + 3), K);
            for (int k = 0; k <= K; ++k)
                EXPECT_NEAR(a.terms[static_cast<size_t>(k)], f.terms[static_cast<size_t>(k)], 1e-12);
            EXPECT_NEAR(a.remainder, f.remainder, 1e-12);
        }
    }
}

TEST(Expand, AverageFlagsEstimatedConstants) {
    RngStream rng(127, 0, 0);
    auto m = random_ergodic_mdp(rng, 4);
    auto rep = expand(m, PolicySpec::mix(0.5), PolicySpec::treatment(), SettingSpec::average(), 1);
    EXPECT_TRUE(rep.estimated_constants);
    EXPECT_DOUBLE_EQ(rep.scaling_const, 1.0);
    EXPECT_DOUBLE_EQ(rep.slack, 2.0);
    auto given = expand(m, PolicySpec::mix(0.5), PolicySpec::treatment(), SettingSpec::average(std::exp(1.0), 0.5), 1);
    EXPECT_FALSE(given.estimated_constants);
    EXPECT_NEAR(given.h_eff, 6.0, 1e-12);
}

TEST(MatrixIdentities, PerturbationIdentity) {
    RngStream rng(131, 0, 0);
    Matrix A = random_contraction(rng, 6, 0.8);
    EXPECT_EQ(matrix_perturbation_identity(A, A), 0.0);
    for (int i = 0; i < 20; ++i) {
        auto m = random_absorbing_mdp(rng, 6);
        Matrix Pt = transient_kernel(m, PolicySpec::control()), Ptp = transient_kernel(m, PolicySpec::treatment());
        EXPECT_LT(matrix_perturbation_identity(0.5 * Pt, 0.5 * Ptp), 1e-10);
        EXPECT_LT(matrix_perturbation_identity(random_contraction(rng, 7, 0.9), random_contraction(rng, 7, 0.9)), 1e-10);
    }
}

TEST(MatrixIdentities, SeriesIdentity) {
    RngStream rng(137, 0, 0);
    Matrix A = random_contraction(rng, 5, 0.7), Ap = random_contraction(rng, 5, 0.7);
    EXPECT_DOUBLE_EQ(matrix_series_identity(A, Ap, 0), matrix_perturbation_identity(A, Ap));
    EXPECT_LT(matrix_series_identity(A, A, 3), 1e-15);
    for (int i = 0; i < 20; ++i)
        EXPECT_LT(matrix_series_identity(random_contraction(rng, 6, 0.9), random_contraction(rng, 6, 0.9), 4), 1e-9);
}

TEST(MatrixIdentities, SingularIsAnError) {
    Matrix I = Matrix::Identity(3, 3);
    EXPECT_THROW(matrix_perturbation_identity(I, 0.5 * I), SingularSystemError);
}

TEST(MatrixIdentities, StationaryPerturbation) {
    RngStream rng(139, 0, 0);
    Matrix P = random_stochastic(rng, 5, 5);
    EXPECT_LT(stationary_perturbation_identity(P, P), 1e-15);
    for (int i = 0; i < 20; ++i)
        EXPECT_LT(stationary_perturbation_identity(random_stochastic(rng, 5, 5), random_stochastic(rng, 5, 5)), 1e-9);
    Matrix reducible = Matrix::Identity(3, 3);
    EXPECT_THROW(stationary_perturbation_identity(reducible, random_stochastic(rng, 3, 3)), ModelError);
}

TEST(MatrixIdentities, DiscountLimit) {
    RngStream rng(149, 0, 0);
    Matrix P = random_stochastic(rng, 5, 5);
    EXPECT_LT(discount_limit_gap(P, 1.0 - 1e-6), 1e-4);
    EXPECT_GT(discount_limit_gap(P, 0.5), discount_limit_gap(P, 0.99));
}

TEST(BiasBounds, BudgetWallExample) {
    auto rec = verify_bias_bounds(budget_wall_example(), SettingSpec::absorbing());
    EXPECT_NEAR(rec.ate, 0.0, 1e-12);
    EXPECT_NEAR(rec.dq_gap, 0.0, 1e-12);
    // Only the first step has differing rewards (20 vs 15).
    EXPECT_NEAR(rec.naive_expect, 5.0, 1e-12);
    EXPECT_NEAR(rec.naive_gap, 5.0, 1e-12);
    EXPECT_TRUE(rec.naive_ok);
    EXPECT_TRUE(rec.dq_ok);
}

TEST(BiasBounds, FixedLengthExampleIsUnbiasedForBoth) {
    auto rec = verify_bias_bounds(fixed_length_example(), SettingSpec::absorbing());
    EXPECT_NEAR(rec.ate, 15.0, 1e-12);
    EXPECT_NEAR(rec.naive_gap, 0.0, 1e-12);
    EXPECT_NEAR(rec.dq_gap, 0.0, 1e-12);
}

TEST(BiasBounds, HoldOnRandomAbsorbingInstances) {
    const double deltas[] = {0.01, 0.02, 0.05, 0.1, 0.2, 0.3};
    for (int i = 0; i < 200; ++i) {
        RngStream rng(151, 0, static_cast<std::uint64_t>(i));
        const int n = 3 + static_cast<int>(rng.below(8));
        auto b = random_absorbing_mdp(rng, n, 2, rng.uniform(0.05, 0.5));
        Matrix U = random_stochastic(rng, n, n);
        U.row(n - 1).setZero();
        U(n - 1, n - 1) = 1.0;
        auto m = perturbed_treatment(b, U, deltas[i % 6]);
        auto rec = verify_bias_bounds(m, SettingSpec::absorbing());
        EXPECT_TRUE(rec.naive_ok) << i;
        EXPECT_TRUE(rec.dq_ok) << i;
    }
}

TEST(BiasBounds, QuadraticScalingAlongPerturbation) {
    RngStream rng(157, 0, 0);
    auto b = random_absorbing_mdp(rng, 6, 2, 0.2);
    Matrix r = b.r();
    r.col(1) = r.col(0);  // interference only through the kernel
    TabularMDP base(b.kernels(), r, b.rho_init(), b.absorbing());
    Matrix U = random_stochastic(rng, 6, 6);
    U.row(5).setZero();
    U(5, 5) = 1.0;
    std::vector<double> dq_ratio, naive_ratio;
    for (double eps : {0.2, 0.1, 0.05, 0.025}) {
        auto rec = verify_bias_bounds(perturbed_treatment(base, U, eps), SettingSpec::absorbing());
        dq_ratio.push_back(rec.dq_gap / (eps * eps));
        naive_ratio.push_back(rec.naive_gap / eps);
    }
    for (size_t i = 1; i < dq_ratio.size(); ++i) EXPECT_LE(dq_ratio[i], 2.0 * dq_ratio[0]);
    EXPECT_GT(naive_ratio.back(), 0.5 * naive_ratio.front());
    EXPECT_LT(std::abs(naive_ratio[3] - naive_ratio[2]), std::abs(naive_ratio[1] - naive_ratio[0]));
}

TEST(TheoryCli, ParseSetting) {
    const auto d = parse_setting("discounted:0.75");
    EXPECT_EQ(d.kind, SettingSpec::Kind::discounted);
    EXPECT_DOUBLE_EQ(d.gamma, 0.75);
    EXPECT_EQ(parse_setting("finite:7").horizon, 7);
    EXPECT_EQ(parse_setting("absorbing").kind, SettingSpec::Kind::absorbing);
    EXPECT_EQ(parse_setting("average").kind, SettingSpec::Kind::average);
    EXPECT_THROW(parse_setting("discounted"), ConfigError);
    EXPECT_THROW(parse_setting("discounted:x"), ConfigError);
    EXPECT_THROW(parse_setting("finite:3:4"), ConfigError);
    EXPECT_THROW(parse_setting("absorbing:2"), ConfigError);
    EXPECT_THROW(parse_setting("ergodic"), ConfigError);
}

TEST(TheoryCli, RowMirrorsReport) {
    RngStream rng(9, domain::instances, 0);
    const auto m = random_absorbing_mdp(rng, 5);
    const auto rep = expand(m, PolicySpec::mix(0.5), PolicySpec::treatment(), SettingSpec::absorbing(), 2);
    const auto row = theory_row(rep, 4);
    EXPECT_EQ(row.instance_id, 4);
    EXPECT_EQ(row.K, 2);
    EXPECT_EQ(row.setting, rep.setting.name());
    EXPECT_EQ(row.terms.size(), 3u);
    EXPECT_TRUE(row.identity_ok);
    EXPECT_DOUBLE_EQ(row.identity_residual, rep.identity_residual());
}
