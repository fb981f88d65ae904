#include "enumeration.hpp"

#include <stdexcept>

#include "dqkit/instances.hpp"
#include "dqkit/rng.hpp"

namespace dqtest {

using namespace dqkit;

namespace {

void walk(const TabularMDP& mdp, const std::vector<std::uint8_t>& a, int s, int t, double prob, SessionLog& log,
          double watched, double p_assign, double p, std::vector<Outcome>& out) {
    if (mdp.is_absorbing(s)) {
        ExperimentDataset ds;
        SessionLog done = log;
        done.terminated = true;
        ds.sessions.push_back(std::move(done));
        ds.assignments = a;
        ds.p_nominal = p;
        ds.p_actual = p;
        out.push_back({p_assign * prob, std::move(ds)});
        return;
    }
    if (t >= static_cast<int>(a.size())) throw std::runtime_error("instance does not absorb within the creator count");
    const int act = a[static_cast<size_t>(t)];
    const double r = mdp.r()(s, act);
    log.steps.push_back(Step{t, static_cast<std::uint8_t>(act), r, watched, s});
    for (int s2 = 0; s2 < mdp.n_states(); ++s2) {
        const double q = mdp.P(act)(s, s2);
        if (q > 0.0) walk(mdp, a, s2, t + 1, prob * q, log, watched + r, p_assign, p, out);
    }
    log.steps.pop_back();
}

}  // namespace

std::vector<Outcome> enumerate_experiment(const TabularMDP& mdp, double p, int n_creators) {
    std::vector<Outcome> out;
    const int n_vec = 1 << n_creators;
    for (int mask = 0; mask < n_vec; ++mask) {
        std::vector<std::uint8_t> a(static_cast<size_t>(n_creators));
        double pa = 1.0;
        for (int j = 0; j < n_creators; ++j) {
            a[static_cast<size_t>(j)] = (mask >> j) & 1;
            pa *= a[static_cast<size_t>(j)] ? p : 1.0 - p;
        }
        for (int s = 0; s < mdp.n_states(); ++s) {
            if (mdp.rho_init()(s) <= 0.0) continue;
            SessionLog log;
            walk(mdp, a, s, 0, mdp.rho_init()(s), log, 0.0, pa, p, out);
        }
    }
    return out;
}

double expect(const std::vector<Outcome>& outcomes, const std::function<double(const ExperimentDataset&)>& f) {
    double e = 0.0;
    for (const auto& o : outcomes) e += o.prob * f(o.ds);
    return e;
}

TabularMDP layered_session_mdp(std::uint64_t seed, int layers, int n_actions) {
    RngStream rng(seed, domain::instances, 0);
    const int n = 1 + 2 * (layers - 1) + 1;
    const int absorb = n - 1;
    auto layer_of = [](int s) { return s == 0 ? 0 : (s - 1) / 2 + 1; };
    std::vector<Matrix> P(static_cast<size_t>(n_actions), Matrix::Zero(n, n));
    Matrix r = Matrix::Zero(n, n_actions);
    for (int a = 0; a < n_actions; ++a) {
        auto& Pa = P[static_cast<size_t>(a)];
        for (int s = 0; s < absorb; ++s) {
            const int L = layer_of(s);
            std::vector<int> next;
            if (L + 1 < layers) next = {1 + 2 * L, 2 + 2 * L};
            next.push_back(absorb);
            const Matrix row = random_stochastic(rng, 1, static_cast<int>(next.size()));
            for (size_t k = 0; k < next.size(); ++k) Pa(s, next[k]) = row(0, static_cast<Eigen::Index>(k));
            r(s, a) = rng.uniform(0.5, 2.0);
        }
        Pa(absorb, absorb) = 1.0;
    }
    Vector rho = Vector::Zero(n);
    rho(0) = 1.0;
    return TabularMDP(P, r, rho, {absorb});
}

Vector expected_visits(const TabularMDP& mdp, double p) {
    const int n = mdp.n_states();
    Matrix P = p * mdp.P(1) + (1.0 - p) * mdp.P(0);
    Vector rho = mdp.rho_init();
    for (int s = 0; s < n; ++s)
        if (mdp.is_absorbing(s)) {
            P.row(s).setZero();
            rho(s) = 0.0;
        }
    return (Matrix::Identity(n, n) - P.transpose()).partialPivLu().solve(rho);
}

EstimatorTargets estimator_targets(const TabularMDP& mdp, double p) {
    const auto setting = SettingSpec::absorbing();
    const auto e1 = expand(mdp, PolicySpec::mix(p), PolicySpec::treatment(), setting, 1);
    const auto e0 = expand(mdp, PolicySpec::mix(p), PolicySpec::control(), setting, 1);
    const Matrix Q = q_function(mdp, PolicySpec::mix(p), setting).values;
    EstimatorTargets t;
    t.ate = e1.exact_value - e0.exact_value;
    t.naive = e1.terms[0] - e0.terms[0];
    t.dq = expected_visits(mdp, p).dot(Q.col(1) - Q.col(0));
    t.dq_first_order = t.naive + e1.terms[1] - e0.terms[1];
    return t;
}

ExperimentDataset relabel(const ExperimentDataset& ds, std::span<const std::uint8_t> a) {
    ExperimentDataset out = ds;
    out.assignments.assign(a.begin(), a.end());
    for (auto* group : {&out.sessions, &out.holdout_sessions})
        for (auto& s : *group)
            for (auto& st : s.steps) st.action = a[static_cast<size_t>(st.creator)];
    return out;
}

}  // namespace dqtest
