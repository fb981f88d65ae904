#include "dqkit/instances.hpp"

namespace dqkit {

Matrix random_stochastic(RngStream& rng, int rows, int cols) {
    Matrix M(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) M(i, j) = rng.exponential(1.0) + 1e-12;
        M.row(i) /= M.row(i).sum();
    }
    return M;
}

TabularMDP random_absorbing_mdp(RngStream& rng, int n_states, int n_actions, double min_leave,
                                double reward_lo, double reward_hi) {
    const int m = n_states - 1;
    std::vector<Matrix> P;
    for (int a = 0; a < n_actions; ++a) {
        Matrix Pa = Matrix::Zero(n_states, n_states);
        Matrix inner = random_stochastic(rng, m, m);
        for (int s = 0; s < m; ++s) {
            const double leave = rng.uniform(min_leave, 1.0);
            Pa.row(s).head(m) = (1.0 - leave) * inner.row(s);
            Pa(s, m) = 1.0 - Pa.row(s).head(m).sum();
        }
        Pa(m, m) = 1.0;
        P.push_back(std::move(Pa));
    }
    Matrix r = Matrix::Zero(n_states, n_actions);
    for (int s = 0; s < m; ++s)
        for (int a = 0; a < n_actions; ++a) r(s, a) = rng.uniform(reward_lo, reward_hi);
    Vector rho = Vector::Zero(n_states);
    rho.head(m) = random_stochastic(rng, 1, m).row(0).transpose();
    return TabularMDP(std::move(P), std::move(r), std::move(rho), {m});
}

TabularMDP random_ergodic_mdp(RngStream& rng, int n_states, int n_actions, double reward_lo, double reward_hi) {
    std::vector<Matrix> P;
    for (int a = 0; a < n_actions; ++a) P.push_back(random_stochastic(rng, n_states, n_states));
    Matrix r(n_states, n_actions);
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) r(s, a) = rng.uniform(reward_lo, reward_hi);
    Vector rho = random_stochastic(rng, 1, n_states).row(0).transpose();
    return TabularMDP(std::move(P), std::move(r), std::move(rho));
}

TabularMDP perturbed_treatment(const TabularMDP& base, const Matrix& U, double eps) {
    std::vector<Matrix> P = base.kernels();
    P[1] = (1.0 - eps) * base.P(0) + eps * U;
    // Re-normalise against rounding so the 1e-12 row check stays satisfied.
    for (Eigen::Index s = 0; s < P[1].rows(); ++s) P[1].row(s) /= P[1].row(s).sum();
    return TabularMDP(std::move(P), base.r(), base.rho_init(), base.absorbing());
}

Matrix random_policy_table(RngStream& rng, int n_states, int n_actions) {
    return random_stochastic(rng, n_states, n_actions);
}

TabularMDP budget_wall_example() {
    // 0: w=0, 1: w=15, 2: w=20, 3: w=30 (absorbing)
    Matrix P0 = Matrix::Zero(4, 4), P1 = Matrix::Zero(4, 4);
    P0(0, 1) = 1.0;
    P1(0, 2) = 1.0;
    for (auto* P : {&P0, &P1}) {
        (*P)(1, 3) = 1.0;
        (*P)(2, 3) = 1.0;
        (*P)(3, 3) = 1.0;
    }
    Matrix r(4, 2);
    r << 15, 20,
         15, 15,
         10, 10,
         0, 0;
    Vector rho = Vector::Zero(4);
    rho(0) = 1.0;
    return TabularMDP({P0, P1}, r, rho, {3});
}

TabularMDP fixed_length_example() {
    Matrix P = Matrix::Zero(4, 4);
    P(0, 1) = P(1, 2) = P(2, 3) = P(3, 3) = 1.0;
    Matrix r(4, 2);
    r << 15, 20,
         15, 20,
         15, 20,
         0, 0;
    Vector rho = Vector::Zero(4);
    rho(0) = 1.0;
    return TabularMDP({P, P}, r, rho, {3});
}

}  // namespace dqkit
