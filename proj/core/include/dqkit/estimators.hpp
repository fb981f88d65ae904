#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dqkit/mdp.hpp"
#include "dqkit/simulator.hpp"

namespace dqkit {

// Outcome model evaluated at a logged step for a counterfactual action.
class QModel {
public:
    virtual ~QModel() = default;
    virtual double predict(const Step& step, int action) const = 0;
};

class ZeroModel final : public QModel {
public:
    double predict(const Step&, int) const override { return 0.0; }
};

struct LinearFit {
    double beta0 = 0.0;
    double beta = 0.0;
    bool intercept_only = false;
    std::int64_t n = 0;
    double target_variance = 0.0;
    double residual_variance = 0.0;
};

// Per-action least squares of a target on cumulative watch: beta0 + beta * w.
class QRegressionModel final : public QModel {
public:
    std::array<LinearFit, 2> arms{};
    double predict(const Step& step, int action) const override {
        const auto& f = arms[static_cast<size_t>(action)];
        return f.beta0 + f.beta * step.watch;
    }
};

enum class RegressionTarget { suffix_sum, reward };

// Suffix-sum targets give the Q regression; reward targets give the one-step
// reward model used by naive_dr.
QRegressionModel fit_q_regression(std::span<const SessionLog> holdout, double p_nominal,
                                  RegressionTarget target = RegressionTarget::suffix_sum);

struct EstimateReport {
    std::string estimator;
    double point = 0.0;
    std::int64_t n_sessions = 0;
    // Sampling variance of the mean treating sessions as independent draws.
    double iid_variance = 0.0;
    std::optional<std::vector<double>> per_session_values;
    std::map<std::string, double> diagnostics;
    std::vector<std::string> flags;

    std::string to_json() const;
    static std::string csv_header();
    std::string csv_row() const;
};

// Everything the step-level estimators need for one session, from one forward
// pass and one backward suffix pass.
struct SessionTerms {
    double naive = 0.0;
    double dq = 0.0;
    double dq_credit = 0.0;
    double dq_dr = 0.0;
    double naive_dr = 0.0;
    double ope = 0.0;
    double ope_dr = 0.0;
    double max_log_weight = -1e300;
};

struct SessionContext {
    double p = 0.5;
    const QModel* q_model = nullptr;       // suffix-sum model, for dq_dr and ope_dr
    const QModel* reward_model = nullptr;  // one-step model, for naive_dr
};

// suffix must have room for the session length; it is overwritten.
SessionTerms session_terms(const SessionLog& s, const SessionContext& ctx, std::vector<double>& suffix);

EstimateReport naive(const ExperimentDataset& ds, std::optional<double> p = std::nullopt);
EstimateReport dq_mc(const ExperimentDataset& ds, std::optional<double> p = std::nullopt);
EstimateReport dq_dr(const ExperimentDataset& ds, const QModel& model, double p_used);
EstimateReport ope_stepwise(const ExperimentDataset& ds, std::optional<double> p = std::nullopt);
EstimateReport naive_dr(const ExperimentDataset& ds, const QModel& reward_model, double p_used);
EstimateReport ope_dr(const ExperimentDataset& ds, const QModel& model, double p_used);

// First-order value of pi_new from data collected under pi_data. Binary
// policies use actions {0,1}; tabular policies read Step::state.
EstimateReport dq_general(const ExperimentDataset& ds, const PolicySpec& pi_data, const PolicySpec& pi_new,
                          const QModel* model = nullptr, int n_actions = 2);

// Validation used when logs are ingested from outside the simulator.
void validate_dataset(const ExperimentDataset& ds);

}  // namespace dqkit
