#include "dqkit/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>

#include "dqkit/error.hpp"

namespace dqkit {

namespace {

constexpr double kStochTol = 1e-12;
constexpr double kCondWarn = 1e12;

void check_stochastic_row(const Eigen::Ref<const Eigen::RowVectorXd>& row, const std::string& axis) {
    if ((row.array() < 0.0).any()) throw ModelError(axis, "negative probability");
    if (!row.allFinite()) throw ModelError(axis, "non-finite probability");
    if (std::abs(row.sum() - 1.0) > kStochTol) throw ModelError(axis, "probabilities do not sum to 1");
}

std::string axis_name(const char* what, long i) {
    return std::string(what) + " " + std::to_string(i);
}

// States that can reach `targets` along edges with positive probability.
std::vector<char> backward_reachable(const Matrix& P, const std::vector<char>& targets) {
    const auto n = P.rows();
    std::vector<char> seen(targets);
    std::queue<Eigen::Index> q;
    for (Eigen::Index s = 0; s < n; ++s)
        if (seen[static_cast<size_t>(s)]) q.push(s);
    while (!q.empty()) {
        auto t = q.front();
        q.pop();
        for (Eigen::Index s = 0; s < n; ++s) {
            if (!seen[static_cast<size_t>(s)] && P(s, t) > 0.0) {
                seen[static_cast<size_t>(s)] = 1;
                q.push(s);
            }
        }
    }
    return seen;
}

std::vector<long> bfs_levels(const Matrix& P, Eigen::Index root) {
    const auto n = P.rows();
    std::vector<long> level(static_cast<size_t>(n), -1);
    std::queue<Eigen::Index> q;
    level[static_cast<size_t>(root)] = 0;
    q.push(root);
    while (!q.empty()) {
        auto u = q.front();
        q.pop();
        for (Eigen::Index v = 0; v < n; ++v) {
            if (P(u, v) > 0.0 && level[static_cast<size_t>(v)] < 0) {
                level[static_cast<size_t>(v)] = level[static_cast<size_t>(u)] + 1;
                q.push(v);
            }
        }
    }
    return level;
}

}  // namespace

TabularMDP::TabularMDP(std::vector<Matrix> P, Matrix r, Vector rho_init, std::vector<int> absorbing)
    : P_(std::move(P)), r_(std::move(r)), rho_(std::move(rho_init)), absorbing_(std::move(absorbing)) {
    const auto n = r_.rows();
    const auto A = r_.cols();
    if (n < 1) throw ModelError("states", "n_states must be positive");
    if (A < 1) throw ModelError("actions", "n_actions must be positive");
    if (static_cast<Eigen::Index>(P_.size()) != A)
        throw ModelError("actions", "P has " + std::to_string(P_.size()) + " kernels but r has " +
                                        std::to_string(A) + " action columns");
    if (rho_.size() != n) throw ModelError("rho_init", "length differs from n_states");
    if (!r_.allFinite()) throw ModelError("r", "non-finite reward");
    for (Eigen::Index a = 0; a < A; ++a) {
        const auto& Pa = P_[static_cast<size_t>(a)];
        if (Pa.rows() != n || Pa.cols() != n)
            throw ModelError(axis_name("P", a), "kernel is not n_states x n_states");
        for (Eigen::Index s = 0; s < n; ++s)
            check_stochastic_row(Pa.row(s), "P[" + std::to_string(a) + "] row " + std::to_string(s));
    }
    check_stochastic_row(rho_.transpose(), "rho_init");

    absorbing_mask_.assign(static_cast<size_t>(n), 0);
    std::sort(absorbing_.begin(), absorbing_.end());
    absorbing_.erase(std::unique(absorbing_.begin(), absorbing_.end()), absorbing_.end());
    for (int s : absorbing_) {
        if (s < 0 || s >= n) throw ModelError("absorbing", "state index out of range");
        absorbing_mask_[static_cast<size_t>(s)] = 1;
    }
    for (int s : absorbing_) {
        for (Eigen::Index a = 0; a < A; ++a) {
            double inside = 0.0;
            for (int t : absorbing_) inside += P_[static_cast<size_t>(a)](s, t);
            if (std::abs(inside - 1.0) > kStochTol)
                throw ModelError(axis_name("absorbing state", s), "mass leaves the absorbing set");
            if (r_(s, a) != 0.0)
                throw ModelError(axis_name("absorbing state", s), "nonzero reward in absorbing state");
        }
    }
}

PolicySpec PolicySpec::mix(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ModelError("policy", "bernoulli_mix p outside [0,1]");
    return {Kind::bernoulli_mix, p, {}};
}

PolicySpec PolicySpec::tabular(Matrix table) {
    for (Eigen::Index s = 0; s < table.rows(); ++s)
        check_stochastic_row(table.row(s), "policy row " + std::to_string(s));
    return {Kind::tabular, 0.0, std::move(table)};
}

Matrix PolicySpec::distribution(int n_states, int n_actions) const {
    if (kind == Kind::tabular) {
        if (table.rows() != n_states) throw ModelError("states", "policy table rows differ from n_states");
        if (table.cols() != n_actions) throw ModelError("actions", "policy table columns differ from n_actions");
        return table;
    }
    if (n_actions < 2) throw ModelError("actions", "binary policy needs actions {0,1}");
    Matrix d = Matrix::Zero(n_states, n_actions);
    double p1 = kind == Kind::global_treatment ? 1.0 : kind == Kind::global_control ? 0.0 : p;
    d.col(0).setConstant(1.0 - p1);
    d.col(1).setConstant(p1);
    return d;
}

std::string PolicySpec::describe() const {
    switch (kind) {
        case Kind::global_control: return "control";
        case Kind::global_treatment: return "treatment";
        case Kind::bernoulli_mix: {
            std::ostringstream os;
            os << "mix(" << p << ")";
            return os.str();
        }
        case Kind::tabular: return "tabular";
    }
    return "?";
}

SettingSpec SettingSpec::discounted(double gamma) {
    SettingSpec s;
    s.kind = Kind::discounted;
    s.gamma = gamma;
    s.validate();
    return s;
}

SettingSpec SettingSpec::finite(int horizon) {
    SettingSpec s;
    s.kind = Kind::finite_horizon;
    s.horizon = horizon;
    s.validate();
    return s;
}

SettingSpec SettingSpec::absorbing(std::optional<double> t_abs) {
    SettingSpec s;
    s.kind = Kind::absorbing;
    s.t_abs = t_abs;
    s.validate();
    return s;
}

SettingSpec SettingSpec::average() {
    SettingSpec s;
    s.kind = Kind::average;
    return s;
}

SettingSpec SettingSpec::average(double C, double beta) {
    SettingSpec s;
    s.kind = Kind::average;
    s.mixing_C = C;
    s.mixing_beta = beta;
    s.validate();
    return s;
}

void SettingSpec::validate() const {
    switch (kind) {
        case Kind::discounted:
            if (!(gamma >= 0.0 && gamma < 1.0)) throw ModelError("gamma", "discount must lie in [0,1)");
            break;
        case Kind::finite_horizon:
            if (horizon < 1) throw ModelError("horizon", "horizon must be >= 1");
            break;
        case Kind::absorbing:
            if (t_abs && !(*t_abs > 0.0)) throw ModelError("t_abs", "T_abs must be positive");
            break;
        case Kind::average:
            if (mixing_C.has_value() != mixing_beta.has_value())
                throw ModelError("mixing", "C and beta must be given together");
            if (mixing_C && !(*mixing_C >= 1.0)) throw ModelError("mixing_C", "C must be >= 1");
            if (mixing_beta && !(*mixing_beta > 0.0 && *mixing_beta < 1.0))
                throw ModelError("mixing_beta", "beta must lie in (0,1)");
            break;
    }
}

std::string SettingSpec::name() const {
    switch (kind) {
        case Kind::discounted: return "discounted";
        case Kind::average: return "average";
        case Kind::finite_horizon: return "finite";
        case Kind::absorbing: return "absorbing";
    }
    return "?";
}

InducedKernel induced_kernel(const TabularMDP& mdp, const PolicySpec& policy) {
    const Matrix pi = policy.distribution(mdp.n_states(), mdp.n_actions());
    InducedKernel k{Matrix::Zero(mdp.n_states(), mdp.n_states()), Vector::Zero(mdp.n_states())};
    for (int a = 0; a < mdp.n_actions(); ++a) {
        k.P.noalias() += pi.col(a).asDiagonal() * mdp.P(a);
        k.r += pi.col(a).cwiseProduct(mdp.r().col(a));
    }
    return k;
}

PolicyEvaluator::PolicyEvaluator(const TabularMDP& mdp, const PolicySpec& policy, const SettingSpec& setting)
    : mdp_(&mdp), setting_(setting) {
    setting_.validate();
    const int n = mdp.n_states();
    pi_ = policy.distribution(n, mdp.n_actions());
    P_pi_ = induced_kernel(mdp, policy).P;
    dim_ = n;
    const Matrix I = Matrix::Identity(n, n);

    switch (setting_.kind) {
        case SettingSpec::Kind::discounted:
            lu_.compute(I - setting_.gamma * P_pi_);
            break;
        case SettingSpec::Kind::absorbing: {
            if (!mdp.has_absorbing()) throw ModelError("absorbing", "absorbing setting needs an absorbing set");
            std::vector<char> target(static_cast<size_t>(n), 0);
            transient_.assign(static_cast<size_t>(n), 1);
            for (int s : mdp.absorbing()) {
                target[static_cast<size_t>(s)] = 1;
                transient_[static_cast<size_t>(s)] = 0;
            }
            auto reach = backward_reachable(P_pi_, target);
            if (std::find(reach.begin(), reach.end(), 0) != reach.end()) throw AbsorptionUnreachable();
            Matrix Pt = P_pi_;
            for (int s : mdp.absorbing()) {
                Pt.row(s).setZero();
                Pt.col(s).setZero();
            }
            lu_.compute(I - Pt);
            break;
        }
        case SettingSpec::Kind::finite_horizon:
            layers_ = setting_.horizon;
            dim_ = static_cast<Eigen::Index>(n) * layers_;
            break;
        case SettingSpec::Kind::average: {
            if (!is_irreducible(P_pi_) || !is_aperiodic(P_pi_)) throw ErgodicityViolated();
            stationary_ = stationary_distribution(P_pi_);
            lu_.compute(I - P_pi_ + Vector::Ones(n) * stationary_.transpose());
            break;
        }
    }
    if (setting_.kind != SettingSpec::Kind::finite_horizon) {
        const double rc = lu_.rcond();
        cond_ = rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
        if (!std::isfinite(cond_)) throw SingularSystemError("singular evaluation system");
        if (cond_ > kCondWarn) warnings_.push_back("ill-conditioned solve (cond > 1e12)");
    }
    if (setting_.kind == SettingSpec::Kind::absorbing) {
        Vector ones = Vector::Ones(n);
        absorption_time_ = resolvent(ones).maxCoeff();
    }
}

Vector PolicyEvaluator::resolvent(const Vector& x) const {
    const int n = mdp_->n_states();
    switch (setting_.kind) {
        case SettingSpec::Kind::discounted:
            return lu_.solve(x);
        case SettingSpec::Kind::absorbing: {
            Vector y = x;
            for (int s : mdp_->absorbing()) y(s) = 0.0;
            return lu_.solve(y);
        }
        case SettingSpec::Kind::finite_horizon: {
            Vector V(dim_);
            const auto last = static_cast<Eigen::Index>(layers_ - 1) * n;
            V.segment(last, n) = x.segment(last, n);
            for (int t = layers_ - 2; t >= 0; --t) {
                const auto off = static_cast<Eigen::Index>(t) * n;
                V.segment(off, n) = x.segment(off, n) + P_pi_ * V.segment(off + n, n);
            }
            return V;
        }
        case SettingSpec::Kind::average: {
            Vector z = lu_.solve(x);
            z.array() -= stationary_.dot(x);
            return z;
        }
    }
    return {};
}

double PolicyEvaluator::functional(const Vector& x) const {
    const int n = mdp_->n_states();
    switch (setting_.kind) {
        case SettingSpec::Kind::average:
            return stationary_.dot(x);
        case SettingSpec::Kind::finite_horizon:
            return mdp_->rho_init().dot(resolvent(x).head(n));
        default:
            return mdp_->rho_init().dot(resolvent(x));
    }
}

Vector PolicyEvaluator::apply_action(int a, const Vector& V) const {
    const int n = mdp_->n_states();
    const Matrix& Pa = mdp_->P(a);
    switch (setting_.kind) {
        case SettingSpec::Kind::discounted:
            return setting_.gamma * (Pa * V);
        case SettingSpec::Kind::absorbing: {
            Vector Vt = V;
            for (int s : mdp_->absorbing()) Vt(s) = 0.0;
            Vector out = Pa * Vt;
            for (int s : mdp_->absorbing()) out(s) = 0.0;
            return out;
        }
        case SettingSpec::Kind::finite_horizon: {
            Vector out = Vector::Zero(dim_);
            for (int t = 0; t + 1 < layers_; ++t) {
                const auto off = static_cast<Eigen::Index>(t) * n;
                out.segment(off, n) = Pa * V.segment(off + n, n);
            }
            return out;
        }
        case SettingSpec::Kind::average:
            return Pa * V;
    }
    return {};
}

Matrix PolicyEvaluator::lift(const Matrix& r_sa) const {
    const int n = mdp_->n_states();
    if (r_sa.rows() == dim_) return r_sa;
    if (r_sa.rows() != n) throw ModelError("states", "reward rows match neither states nor evaluation space");
    Matrix out(dim_, r_sa.cols());
    for (int t = 0; t < layers_; ++t) out.middleRows(static_cast<Eigen::Index>(t) * n, n) = r_sa;
    return out;
}

Vector PolicyEvaluator::lift_state(const Vector& x) const {
    return lift(Matrix(x)).col(0);
}

Vector PolicyEvaluator::policy_reward(const Matrix& x_sa) const {
    const int n = mdp_->n_states();
    Vector out(dim_);
    for (Eigen::Index e = 0; e < dim_; ++e) out(e) = pi_.row(e % n).dot(x_sa.row(e));
    return out;
}

double PolicyEvaluator::value() const {
    return functional(policy_reward(lift(mdp_->r())));
}

QTable PolicyEvaluator::q(const std::optional<Matrix>& reward_override) const {
    const int A = mdp_->n_actions();
    Matrix x = reward_override ? lift(*reward_override) : lift(mdp_->r());
    if (x.cols() == 1) x = x.col(0).replicate(1, A).eval();
    if (x.cols() != A) throw ModelError("actions", "reward override has wrong number of action columns");
    if (setting_.kind == SettingSpec::Kind::absorbing)
        for (int s : mdp_->absorbing()) x.row(s).setZero();
    const Vector x_pi = policy_reward(x);
    const Vector V = resolvent(x_pi);
    const double eta = setting_.kind == SettingSpec::Kind::average ? stationary_.dot(x_pi) : 0.0;
    QTable out;
    out.layers = layers_;
    out.values.resize(dim_, A);
    for (int a = 0; a < A; ++a) out.values.col(a) = x.col(a).array() - eta + apply_action(a, V).array();
    if (setting_.kind == SettingSpec::Kind::absorbing)
        for (int s : mdp_->absorbing()) out.values.row(s).setZero();
    return out;
}

double value(const TabularMDP& mdp, const PolicySpec& policy, const SettingSpec& setting) {
    return PolicyEvaluator(mdp, policy, setting).value();
}

QTable q_function(const TabularMDP& mdp, const PolicySpec& policy, const SettingSpec& setting,
                  const std::optional<Matrix>& reward_override) {
    return PolicyEvaluator(mdp, policy, setting).q(reward_override);
}

double exact_ate(const TabularMDP& mdp, const SettingSpec& setting) {
    return value(mdp, PolicySpec::treatment(), setting) - value(mdp, PolicySpec::control(), setting);
}

double tv_distance(const Matrix& P, const Matrix& Q) {
    if (P.rows() != Q.rows() || P.cols() != Q.cols()) throw ModelError("states", "kernel shapes differ");
    return 0.5 * (P - Q).cwiseAbs().rowwise().sum().maxCoeff();
}

double tv_delta(const TabularMDP& mdp) {
    if (mdp.n_actions() != 2) throw ModelError("actions", "tv_delta needs exactly two actions");
    return tv_distance(mdp.P(1), mdp.P(0));
}

Vector absorption_times(const TabularMDP& mdp, const PolicySpec& policy) {
    PolicyEvaluator ev(mdp, policy, SettingSpec::absorbing());
    return ev.resolvent(Vector::Ones(mdp.n_states()));
}

double uniform_absorption_time(const TabularMDP& mdp) {
    double t = 0.0;
    for (const auto& pol : {PolicySpec::control(), PolicySpec::treatment(), PolicySpec::mix(0.5)})
        t = std::max(t, absorption_times(mdp, pol).maxCoeff());
    return t;
}

bool is_irreducible(const Matrix& P) {
    const auto n = P.rows();
    auto fwd = bfs_levels(P, 0);
    if (std::any_of(fwd.begin(), fwd.end(), [](long l) { return l < 0; })) return false;
    std::vector<char> root(static_cast<size_t>(n), 0);
    root[0] = 1;
    auto back = backward_reachable(P, root);
    return std::all_of(back.begin(), back.end(), [](char c) { return c != 0; });
}

bool is_aperiodic(const Matrix& P) {
    auto level = bfs_levels(P, 0);
    long g = 0;
    for (Eigen::Index u = 0; u < P.rows(); ++u) {
        if (level[static_cast<size_t>(u)] < 0) continue;
        for (Eigen::Index v = 0; v < P.cols(); ++v) {
            if (P(u, v) > 0.0 && level[static_cast<size_t>(v)] >= 0)
                g = std::gcd(g, std::abs(level[static_cast<size_t>(u)] + 1 - level[static_cast<size_t>(v)]));
        }
    }
    return g == 1;
}

Vector stationary_distribution(const Matrix& P) {
    if (!is_irreducible(P)) throw ModelError("P", "stationary distribution needs an irreducible chain");
    const auto n = P.rows();
    Matrix M = (Matrix::Identity(n, n) - P).transpose();
    M.row(n - 1).setOnes();
    Vector b = Vector::Zero(n);
    b(n - 1) = 1.0;
    return M.partialPivLu().solve(b);
}

Matrix deviation_matrix(const Matrix& P) {
    const auto n = P.rows();
    const Vector rho = stationary_distribution(P);
    const Matrix one_rho = Vector::Ones(n) * rho.transpose();
    return (Matrix::Identity(n, n) - P + one_rho).partialPivLu().inverse() - one_rho;
}

MixingConstants estimate_mixing_constants(const Matrix& P, int k_fit) {
    const Vector rho = stationary_distribution(P);
    const auto n = P.rows();
    const Matrix one_rho = Vector::Ones(n) * rho.transpose();
    std::vector<double> logd;
    logd.reserve(static_cast<size_t>(k_fit));
    Matrix Pk = P;
    double d1 = 0.0, dlast = 0.0;
    for (int k = 1; k <= k_fit; ++k) {
        const double d = tv_distance(Pk, one_rho);
        if (k == 1) d1 = d;
        dlast = d;
        logd.push_back(d > 0.0 ? std::log(d) : -std::numeric_limits<double>::infinity());
        Pk = (Pk * P).eval();
    }
    MixingConstants best;
    best.h_eff = std::numeric_limits<double>::infinity();
    for (int i = 1; i < 1000; ++i) {
        const double beta = i / 1000.0;
        const double lb = std::log(beta);
        double L = 0.0;
        for (int k = 1; k <= k_fit; ++k) L = std::max(L, logd[static_cast<size_t>(k - 1)] - k * lb);
        const double h = (2.0 * L + 1.0) / (1.0 - beta);
        if (h < best.h_eff) {
            best.h_eff = h;
            best.beta = beta;
            best.C = std::exp(L);
        }
    }
    best.mixing = !(d1 > 0.0 && dlast > 0.5 * d1);
    return best;
}

}  // namespace dqkit
