#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dqkit/mdp.hpp"

namespace dqkit {

struct ExpansionReport {
    SettingSpec setting;
    int order = 0;
    std::vector<double> terms;  // terms[k] = E~_pi[DQ^(k)]
    double remainder = 0.0;     // E~_pi'[DQ^(K+1)]
    double exact_value = 0.0;   // E~_pi' r
    double h_eff = 0.0;
    double scaling_const = 0.0;
    double delta = 0.0;
    double r_max = 0.0;
    double slack = 1.0;
    double bound = 0.0;
    bool bound_ok = true;
    bool estimated_constants = false;
    std::vector<std::string> flags;

    double term_sum() const;
    double identity_residual() const { return term_sum() + remainder - exact_value; }
};

// DQ^(k) over the evaluation space of pi (time-augmented for finite horizons).
Vector dq_term(const TabularMDP& mdp, const PolicySpec& pi, const PolicySpec& pi_prime,
               const SettingSpec& setting, int k);

ExpansionReport expand(const TabularMDP& mdp, const PolicySpec& pi, const PolicySpec& pi_prime,
                       const SettingSpec& setting, int K);

// Max-norm residuals of the resolvent identities. Throw SingularSystemError
// when I - A or I - A' is numerically singular.
double matrix_perturbation_identity(const Matrix& A, const Matrix& A_prime);
double matrix_series_identity(const Matrix& A, const Matrix& A_prime, int K);
// rho'^T = rho^T + rho'^T (P' - P) (I - P)^#, with the deviation matrix as (I - P)^#.
double stationary_perturbation_identity(const Matrix& P, const Matrix& P_prime);
// max |(1 - gamma)(I - gamma P)^{-1} - 1 rho^T|
double discount_limit_gap(const Matrix& P, double gamma);

struct BiasBoundRecord {
    double ate = 0.0;
    double naive_expect = 0.0;
    double dq_expect = 0.0;
    double naive_gap = 0.0;
    double dq_gap = 0.0;
    double naive_bound = 0.0;
    double dq_bound = 0.0;
    double delta = 0.0;
    double h_eff = 0.0;
    double scaling_const = 0.0;
    double r_max = 0.0;
    // absorbing only: per-policy expected absorption times (control, treatment, 1/2 mixture)
    double t_abs_control = 0.0;
    double t_abs_treatment = 0.0;
    double t_abs_half = 0.0;
    bool naive_ok = true;
    bool dq_ok = true;
    bool estimated_constants = false;
};

// Cross expansions from the 1/2 mixture to treatment and to control, differenced.
BiasBoundRecord verify_bias_bounds(const TabularMDP& mdp, const SettingSpec& setting);

// Random-instance sweep behind the verify-theory command.
struct TheorySweepConfig {
    std::uint64_t seed = 1;
    int instances_per_setting = 125;
    int min_states = 3;
    int max_states = 10;
    std::vector<int> orders{0, 1, 2, 3};
};

struct TheoryRow {
    int instance_id = 0;
    std::string setting;
    int K = 0;
    double delta = 0.0;
    double h_eff = 0.0;
    double exact_value = 0.0;
    std::vector<double> terms;
    double remainder = 0.0;
    double bound = 0.0;
    double identity_residual = 0.0;
    bool identity_ok = true;
    bool bound_ok = true;
    bool estimated_constants = false;
};

std::vector<TheoryRow> verify_theory_sweep(const TheorySweepConfig& cfg);

TheoryRow theory_row(const ExpansionReport& rep, int instance_id);

// Parses "discounted:0.9", "finite:10", "absorbing" or "average".
SettingSpec parse_setting(const std::string& text);

}  // namespace dqkit
