#pragma once

#include "dqkit/mdp.hpp"
#include "dqkit/rng.hpp"

namespace dqkit {

// Row-stochastic matrix with Dirichlet(1) rows.
Matrix random_stochastic(RngStream& rng, int rows, int cols);

// Session-style MDP: states 0..n-2 transient, state n-1 absorbing. Every
// transient row leaves to the absorbing state with probability >= min_leave.
TabularMDP random_absorbing_mdp(RngStream& rng, int n_states, int n_actions = 2,
                                double min_leave = 0.1, double reward_lo = 0.0, double reward_hi = 1.0);

// Dense kernels with strictly positive entries (irreducible and aperiodic).
TabularMDP random_ergodic_mdp(RngStream& rng, int n_states, int n_actions = 2,
                              double reward_lo = 0.0, double reward_hi = 1.0);

// Same MDP with P[1] replaced by (1 - eps) P[0] + eps U, U row-stochastic and
// mapping absorbing states into the absorbing set.
TabularMDP perturbed_treatment(const TabularMDP& base, const Matrix& U, double eps);

Matrix random_policy_table(RngStream& rng, int n_states, int n_actions);

// 30-minute budget, control videos 15 min, treated videos 20 min. States are
// cumulative watch {0, 15, 20, 30}; 30 is absorbing.
TabularMDP budget_wall_example();
// Exactly three videos then absorb; control reward 15, treatment 20.
TabularMDP fixed_length_example();

}  // namespace dqkit
