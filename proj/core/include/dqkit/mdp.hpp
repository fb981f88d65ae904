#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dqkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Finite MDP with per-action kernels P[a] (states x states), rewards
// r (states x actions), an initial distribution and an optional absorbing set.
// Validated on construction; immutable afterwards.
class TabularMDP {
public:
    TabularMDP(std::vector<Matrix> P, Matrix r, Vector rho_init,
               std::vector<int> absorbing = {});

    int n_states() const { return static_cast<int>(r_.rows()); }
    int n_actions() const { return static_cast<int>(r_.cols()); }
    const Matrix& P(int a) const { return P_[static_cast<size_t>(a)]; }
    const std::vector<Matrix>& kernels() const { return P_; }
    const Matrix& r() const { return r_; }
    const Vector& rho_init() const { return rho_; }
    const std::vector<int>& absorbing() const { return absorbing_; }
    bool has_absorbing() const { return !absorbing_.empty(); }
    bool is_absorbing(int s) const { return absorbing_mask_[static_cast<size_t>(s)] != 0; }
    double r_max() const { return r_.cwiseAbs().maxCoeff(); }

private:
    std::vector<Matrix> P_;
    Matrix r_;
    Vector rho_;
    std::vector<int> absorbing_;
    std::vector<char> absorbing_mask_;
};

struct PolicySpec {
    enum class Kind { global_control, global_treatment, bernoulli_mix, tabular };

    Kind kind = Kind::global_control;
    double p = 0.0;
    Matrix table;  // states x actions, tabular only

    static PolicySpec control() { return {Kind::global_control, 0.0, {}}; }
    static PolicySpec treatment() { return {Kind::global_treatment, 1.0, {}}; }
    static PolicySpec mix(double p);
    static PolicySpec tabular(Matrix table);

    // Per-state action distribution, states x actions. Throws ModelError when
    // the policy does not fit the given shape.
    Matrix distribution(int n_states, int n_actions) const;
    std::string describe() const;
};

struct SettingSpec {
    enum class Kind { discounted, average, finite_horizon, absorbing };

    Kind kind = Kind::discounted;
    double gamma = 0.0;
    int horizon = 0;
    std::optional<double> t_abs;
    std::optional<double> mixing_C;
    std::optional<double> mixing_beta;

    static SettingSpec discounted(double gamma);
    static SettingSpec finite(int horizon);
    static SettingSpec absorbing(std::optional<double> t_abs = std::nullopt);
    static SettingSpec average();
    static SettingSpec average(double C, double beta);

    void validate() const;
    std::string name() const;
};

struct InducedKernel {
    Matrix P;
    Vector r;
};

InducedKernel induced_kernel(const TabularMDP& mdp, const PolicySpec& policy);

// Q table over the evaluation space. For finite horizons rows are indexed
// t * n_states + s, otherwise by state.
struct QTable {
    Matrix values;
    int layers = 1;
    double operator()(int s, int a, int t = 0) const {
        return values(static_cast<Eigen::Index>(t) * (values.rows() / layers) + s, a);
    }
};

// Exact policy evaluation for one (mdp, policy, setting) triple. Everything is
// factored once in the constructor; all methods are const.
//
// The "evaluation space" is the state space, except for finite horizons where
// it is the time-augmented space of size H * n_states.
class PolicyEvaluator {
public:
    PolicyEvaluator(const TabularMDP& mdp, const PolicySpec& policy, const SettingSpec& setting);

    const TabularMDP& mdp() const { return *mdp_; }
    const SettingSpec& setting() const { return setting_; }
    const Matrix& policy_table() const { return pi_; }
    Eigen::Index dim() const { return dim_; }
    int layers() const { return layers_; }

    // (I - A_pi)^{-1} x, or the deviation-matrix product D x for average reward.
    Vector resolvent(const Vector& x) const;
    // Weighted total: rho_init^T (I - A_pi)^{-1} x, or rho_pi^T x for average reward.
    double functional(const Vector& x) const;
    // (A_a V)(e): one transition under action a in the evaluation space.
    Vector apply_action(int a, const Vector& V) const;

    // Per-(state, action) reward table lifted to the evaluation space.
    Matrix lift(const Matrix& r_sa) const;
    // State reward (one value per state) lifted to the evaluation space.
    Vector lift_state(const Vector& x) const;
    Vector policy_reward(const Matrix& x_sa) const;

    double value() const;
    // reward_override: dim x n_actions, or dim x 1 (broadcast over actions).
    QTable q(const std::optional<Matrix>& reward_override = std::nullopt) const;

    // Stationary distribution (average setting only).
    const Vector& stationary() const { return stationary_; }
    // max_s expected absorption time (absorbing setting only).
    double absorption_time() const { return absorption_time_; }
    double condition_estimate() const { return cond_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    const TabularMDP* mdp_;
    SettingSpec setting_;
    Matrix pi_;
    Matrix P_pi_;
    Eigen::Index dim_ = 0;
    int layers_ = 1;
    std::vector<char> transient_;
    Eigen::PartialPivLU<Matrix> lu_;
    Vector stationary_;
    double absorption_time_ = 0.0;
    double cond_ = 1.0;
    std::vector<std::string> warnings_;
};

double value(const TabularMDP& mdp, const PolicySpec& policy, const SettingSpec& setting);
QTable q_function(const TabularMDP& mdp, const PolicySpec& policy, const SettingSpec& setting,
                  const std::optional<Matrix>& reward_override = std::nullopt);
double exact_ate(const TabularMDP& mdp, const SettingSpec& setting);

// max_s TV(P1(s,.), P0(s,.)).
double tv_delta(const TabularMDP& mdp);
double tv_distance(const Matrix& P, const Matrix& Q);

// Expected absorption times (I - P~)^{-1} 1 on the transient states.
Vector absorption_times(const TabularMDP& mdp, const PolicySpec& policy);
// Uniform bound over control, treatment and the 1/2 mixture.
double uniform_absorption_time(const TabularMDP& mdp);

bool is_irreducible(const Matrix& P);
bool is_aperiodic(const Matrix& P);
Vector stationary_distribution(const Matrix& P);
// D = (I - P + 1 rho^T)^{-1} - 1 rho^T
Matrix deviation_matrix(const Matrix& P);

struct MixingConstants {
    double C = 1.0;
    double beta = 0.0;
    double h_eff = 1.0;
    bool mixing = true;  // false when the TV profile does not decay
};
// Tightest geometric envelope C beta^k of max_s TV(P^k(s,.), rho), k = 1..k_fit.
MixingConstants estimate_mixing_constants(const Matrix& P, int k_fit = 200);

// JSON document {n_states, n_actions, P[a][s][s'], r[s][a], rho_init, absorbing}.
TabularMDP mdp_from_json(const std::string& text);
std::string mdp_to_json(const TabularMDP& mdp);

}  // namespace dqkit
