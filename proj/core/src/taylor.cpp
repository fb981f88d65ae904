#include "dqkit/taylor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dqkit/error.hpp"
#include "dqkit/instances.hpp"
#include "dqkit/rng.hpp"

namespace dqkit {

namespace {

constexpr double kIdentityTol = 1e-9;
constexpr double kSingularRcond = 1e-14;

Eigen::PartialPivLU<Matrix> checked_lu(const Matrix& M) {
    Eigen::PartialPivLU<Matrix> lu(M);
    if (!(lu.rcond() > kSingularRcond)) throw SingularSystemError("I - A is singular");
    return lu;
}

Matrix inverse_of_i_minus(const Matrix& A) {
    if (A.rows() != A.cols()) throw ModelError("A", "matrix is not square");
    return checked_lu(Matrix::Identity(A.rows(), A.cols()) - A).inverse();
}

// Recursion DQ^(k) = sum_a (pi' - pi)(a|s) Q_pi(s, a; DQ^(k-1)).
Vector next_dq(const PolicyEvaluator& ev, const Matrix& pi_diff, const Vector& prev) {
    const QTable q = ev.q(Matrix(prev));
    const int n = ev.mdp().n_states();
    Vector out(ev.dim());
    for (Eigen::Index e = 0; e < ev.dim(); ++e) out(e) = pi_diff.row(e % n).dot(q.values.row(e));
    return out;
}

double relevant_tv(const TabularMDP& mdp, const Matrix& P, const Matrix& Q, const SettingSpec& setting) {
    double worst = 0.0;
    for (int s = 0; s < mdp.n_states(); ++s) {
        if (setting.kind == SettingSpec::Kind::absorbing && mdp.is_absorbing(s)) continue;
        worst = std::max(worst, 0.5 * (P.row(s) - Q.row(s)).cwiseAbs().sum());
    }
    return worst;
}

struct Constants {
    double h_eff = 0.0;
    double scaling = 0.0;
    double slack = 1.0;
    bool estimated = false;
};

Constants table_constants(const SettingSpec& setting, double t_abs, const std::vector<Matrix>& chains) {
    Constants c;
    switch (setting.kind) {
        case SettingSpec::Kind::discounted:
            c.h_eff = c.scaling = 1.0 / (1.0 - setting.gamma);
            break;
        case SettingSpec::Kind::finite_horizon:
            c.h_eff = c.scaling = setting.horizon;
            break;
        case SettingSpec::Kind::absorbing:
            c.h_eff = c.scaling = setting.t_abs ? *setting.t_abs : t_abs;
            break;
        case SettingSpec::Kind::average:
            c.scaling = 1.0;
            c.slack = 2.0;
            if (setting.mixing_C) {
                c.h_eff = (2.0 * std::log(*setting.mixing_C) + 1.0) / (1.0 - *setting.mixing_beta);
            } else {
                c.estimated = true;
                for (const auto& P : chains) c.h_eff = std::max(c.h_eff, estimate_mixing_constants(P).h_eff);
            }
            break;
    }
    return c;
}

}  // namespace

double ExpansionReport::term_sum() const {
    return std::accumulate(terms.begin(), terms.end(), 0.0);
}

Vector dq_term(const TabularMDP& mdp, const PolicySpec& pi, const PolicySpec& pi_prime,
               const SettingSpec& setting, int k) {
    if (k < 0) throw ModelError("k", "order must be non-negative");
    PolicyEvaluator ev(mdp, pi, setting);
    const Matrix pi_p = pi_prime.distribution(mdp.n_states(), mdp.n_actions());
    const Matrix diff = pi_p - ev.policy_table();
    Matrix lifted = ev.lift(mdp.r());
    Vector dq(ev.dim());
    for (Eigen::Index e = 0; e < ev.dim(); ++e) dq(e) = pi_p.row(e % mdp.n_states()).dot(lifted.row(e));
    for (int j = 1; j <= k; ++j) dq = next_dq(ev, diff, dq);
    return dq;
}

ExpansionReport expand(const TabularMDP& mdp, const PolicySpec& pi, const PolicySpec& pi_prime,
                       const SettingSpec& setting, int K) {
    if (K < 0) throw ModelError("K", "order must be non-negative");
    PolicyEvaluator ev(mdp, pi, setting);
    PolicyEvaluator evp(mdp, pi_prime, setting);
    const Matrix diff = evp.policy_table() - ev.policy_table();

    ExpansionReport rep;
    rep.setting = setting;
    rep.order = K;
    Vector dq = evp.policy_reward(ev.lift(mdp.r()));
    for (int k = 0; k <= K; ++k) {
        rep.terms.push_back(ev.functional(dq));
        dq = next_dq(ev, diff, dq);
    }
    rep.remainder = evp.functional(dq);
    rep.exact_value = evp.value();

    const Matrix P = induced_kernel(mdp, pi).P;
    const Matrix Pp = induced_kernel(mdp, pi_prime).P;
    rep.delta = relevant_tv(mdp, P, Pp, setting);
    rep.r_max = mdp.r_max();
    const double t_abs = std::max(ev.absorption_time(), evp.absorption_time());
    const Constants c = table_constants(setting, t_abs, {P, Pp});
    rep.h_eff = c.h_eff;
    rep.scaling_const = c.scaling;
    rep.slack = c.slack;
    rep.estimated_constants = c.estimated;
    rep.bound = c.slack * std::pow(rep.delta * rep.h_eff, K + 1) * rep.scaling_const * rep.r_max;
    rep.bound_ok = std::abs(rep.remainder) <= rep.bound + kIdentityTol;
    if (c.estimated) rep.flags.push_back("estimated-constants");
    if (setting.kind == SettingSpec::Kind::average) rep.flags.push_back("slack-2x");
    for (const auto* e : {&ev, &evp})
        for (const auto& w : e->warnings()) rep.flags.push_back(w);
    return rep;
}

double matrix_perturbation_identity(const Matrix& A, const Matrix& A_prime) {
    const Matrix R = inverse_of_i_minus(A);
    const Matrix Rp = inverse_of_i_minus(A_prime);
    return (Rp - (R + Rp * (A_prime - A) * R)).cwiseAbs().maxCoeff();
}

double matrix_series_identity(const Matrix& A, const Matrix& A_prime, int K) {
    if (K < 0) throw ModelError("K", "order must be non-negative");
    const Matrix R = inverse_of_i_minus(A);
    const Matrix Rp = inverse_of_i_minus(A_prime);
    const Matrix E = (A_prime - A) * R;
    Matrix power = Matrix::Identity(A.rows(), A.cols());
    Matrix series = Matrix::Zero(A.rows(), A.cols());
    for (int k = 0; k <= K; ++k) {
        series += power;
        power = (power * E).eval();
    }
    return (Rp - (R * series + Rp * power)).cwiseAbs().maxCoeff();
}

double stationary_perturbation_identity(const Matrix& P, const Matrix& P_prime) {
    if (!is_irreducible(P) || !is_irreducible(P_prime)) throw ModelError("P", "chain is reducible");
    const Vector rho = stationary_distribution(P);
    const Vector rho_p = stationary_distribution(P_prime);
    const Matrix D = deviation_matrix(P);
    const Vector rhs = rho + D.transpose() * ((P_prime - P).transpose() * rho_p);
    return (rho_p - rhs).cwiseAbs().maxCoeff();
}

double discount_limit_gap(const Matrix& P, double gamma) {
    const auto n = P.rows();
    const Vector rho = stationary_distribution(P);
    const Matrix R = checked_lu(Matrix::Identity(n, n) - gamma * P).inverse();
    return ((1.0 - gamma) * R - Vector::Ones(n) * rho.transpose()).cwiseAbs().maxCoeff();
}

BiasBoundRecord verify_bias_bounds(const TabularMDP& mdp, const SettingSpec& setting) {
    const auto half = PolicySpec::mix(0.5);
    const auto e1 = expand(mdp, half, PolicySpec::treatment(), setting, 1);
    const auto e0 = expand(mdp, half, PolicySpec::control(), setting, 1);

    BiasBoundRecord rec;
    rec.ate = e1.exact_value - e0.exact_value;
    rec.naive_expect = e1.terms[0] - e0.terms[0];
    rec.dq_expect = rec.naive_expect + (e1.terms[1] - e0.terms[1]);
    rec.naive_gap = std::abs(rec.ate - rec.naive_expect);
    rec.dq_gap = std::abs(rec.ate - rec.dq_expect);
    rec.delta = tv_delta(mdp);
    rec.r_max = mdp.r_max();

    double t_abs = 0.0;
    if (setting.kind == SettingSpec::Kind::absorbing) {
        rec.t_abs_control = absorption_times(mdp, PolicySpec::control()).maxCoeff();
        rec.t_abs_treatment = absorption_times(mdp, PolicySpec::treatment()).maxCoeff();
        rec.t_abs_half = absorption_times(mdp, half).maxCoeff();
        t_abs = std::max({rec.t_abs_control, rec.t_abs_treatment, rec.t_abs_half});
    }
    std::vector<Matrix> chains;
    if (setting.kind == SettingSpec::Kind::average)
        for (const auto& pol : {PolicySpec::control(), PolicySpec::treatment(), half})
            chains.push_back(induced_kernel(mdp, pol).P);
    const Constants c = table_constants(setting, t_abs, chains);
    rec.h_eff = c.h_eff;
    rec.scaling_const = c.scaling;
    rec.estimated_constants = c.estimated;
    rec.naive_bound = c.slack * rec.delta * c.h_eff * c.scaling * rec.r_max;
    rec.dq_bound = c.slack * rec.delta * rec.delta * c.h_eff * c.h_eff * c.scaling * rec.r_max;
    rec.naive_ok = rec.naive_gap <= rec.naive_bound + kIdentityTol;
    rec.dq_ok = rec.dq_gap <= rec.dq_bound + kIdentityTol;
    return rec;
}

std::vector<TheoryRow> verify_theory_sweep(const TheorySweepConfig& cfg) {
    using Kind = SettingSpec::Kind;
    std::vector<TheoryRow> rows;
    int id = 0;
    for (Kind kind : {Kind::discounted, Kind::finite_horizon, Kind::absorbing, Kind::average}) {
        for (int i = 0; i < cfg.instances_per_setting; ++i, ++id) {
            RngStream rng(cfg.seed, domain::instances, static_cast<std::uint64_t>(id));
            const int n = cfg.min_states + static_cast<int>(rng.below(
                static_cast<std::uint64_t>(cfg.max_states - cfg.min_states + 1)));
            SettingSpec setting;
            std::optional<TabularMDP> mdp;
            switch (kind) {
                case Kind::discounted:
                    setting = SettingSpec::discounted(rng.uniform(0.1, 0.95));
                    mdp = random_ergodic_mdp(rng, n);
                    break;
                case Kind::finite_horizon:
                    setting = SettingSpec::finite(1 + static_cast<int>(rng.below(20)));
                    mdp = random_ergodic_mdp(rng, n);
                    break;
                case Kind::absorbing:
                    setting = SettingSpec::absorbing();
                    mdp = random_absorbing_mdp(rng, n, 2, rng.uniform(0.05, 0.5));
                    break;
                case Kind::average:
                    setting = SettingSpec::average();
                    mdp = random_ergodic_mdp(rng, n);
                    break;
            }
            // Data policy: a Bernoulli mixture; target: treatment, control or a random table.
            const auto pi = PolicySpec::mix(rng.uniform(0.1, 0.9));
            PolicySpec pi_prime;
            switch (rng.below(3)) {
                case 0: pi_prime = PolicySpec::treatment(); break;
                case 1: pi_prime = PolicySpec::control(); break;
                default: pi_prime = PolicySpec::tabular(random_policy_table(rng, n, 2)); break;
            }
            for (int K : cfg.orders) {
                const auto rep = expand(*mdp, pi, pi_prime, setting, K);
                rows.push_back(theory_row(rep, id));
            }
        }
    }
    return rows;
}

TheoryRow theory_row(const ExpansionReport& rep, int instance_id) {
    TheoryRow row;
    row.instance_id = instance_id;
    row.setting = rep.setting.name();
    row.K = rep.order;
    row.delta = rep.delta;
    row.h_eff = rep.h_eff;
    row.exact_value = rep.exact_value;
    row.terms = rep.terms;
    row.remainder = rep.remainder;
    row.bound = rep.bound;
    row.identity_residual = rep.identity_residual();
    row.identity_ok = std::abs(row.identity_residual) <= kIdentityTol;
    row.bound_ok = rep.bound_ok;
    row.estimated_constants = rep.estimated_constants;
    return row;
}

SettingSpec parse_setting(const std::string& text) {
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
    std::size_t used = 0;
    SettingSpec s;
    try {
        if (kind == "discounted" && !arg.empty()) s = SettingSpec::discounted(std::stod(arg, &used));
        else if (kind == "finite" && !arg.empty()) s = SettingSpec::finite(std::stoi(arg, &used));
        else if (kind == "absorbing" && arg.empty()) s = SettingSpec::absorbing();
        else if (kind == "average" && arg.empty()) s = SettingSpec::average();
        else throw ConfigError("unknown setting '" + text + "'");
    } catch (const std::logic_error&) {
        throw ConfigError("bad setting argument in '" + text + "'");
    }
    if (used != arg.size()) throw ConfigError("bad setting argument in '" + text + "'");
    s.validate();
    return s;
}

}  // namespace dqkit
