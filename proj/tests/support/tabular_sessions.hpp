#pragma once

#include <cstdint>

#include "dqkit/mdp.hpp"
#include "dqkit/simulator.hpp"

namespace dqtest {

// Sessions on an absorbing tabular MDP. Each step is served by a creator drawn
// uniformly from n_creators; its action is the creator's Bernoulli(p)
// assignment. Steps record the tabular state.
dqkit::ExperimentDataset sample_creator_sessions(const dqkit::TabularMDP& mdp, int n_creators, std::int64_t n_sessions,
                                                 double p, std::uint64_t seed, int max_steps = 1000);

// Sessions whose actions are drawn afresh at every step from a state-dependent
// policy. Every step gets creator 0 and the assignment table is left empty.
dqkit::ExperimentDataset sample_policy_sessions(const dqkit::TabularMDP& mdp, const dqkit::PolicySpec& policy,
                                                std::int64_t n_sessions, std::uint64_t seed, int max_steps = 1000);

}  // namespace dqtest
