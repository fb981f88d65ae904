#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dqkit/estimators.hpp"

namespace dqkit {

// Per-creator masses, all divided by the number of sessions N.
//   suffix_mass  sum of suffix sums over every step served by the creator
//   own_mass     sum of the creator's own rewards
//   repeat_mass  rewards from later steps of the same creator in the same session
//   cross_mass   rewards from later steps of other creators (sum of pair masses)
//   cross_sq     sum over l of pair_mass(l)^2
//   dr_treat     sum over the creator's steps of (S - Qhat(.,1))
//   dr_control   sum over the creator's steps of (S - Qhat(.,0))
// suffix_mass = own_mass + repeat_mass + cross_mass.
struct StreamerAggregate {
    int creator = 0;
    double suffix_mass = 0.0;
    double own_mass = 0.0;
    double repeat_mass = 0.0;
    double cross_mass = 0.0;
    double cross_sq = 0.0;
    double dr_treat = 0.0;
    double dr_control = 0.0;
    // (l, reward mass from creator l credited to this creator), sorted by l.
    std::optional<std::vector<std::pair<int, double>>> pair_masses;
};

struct StreamerTable {
    std::vector<StreamerAggregate> creators;  // indexed by creator id
    std::vector<std::uint8_t> assignments;
    double dr_offset = 0.0;  // sum over steps of Qhat(.,1) - Qhat(.,0), over N
    std::int64_t n_sessions = 0;
    bool has_pairs = false;
    bool has_model = false;

    // Statistics recomputed for an arbitrary assignment vector.
    double dq(std::span<const std::uint8_t> a, double p) const;
    double dq_dr(std::span<const std::uint8_t> a, double p) const;
    // pi_1 minus pi_0 contrast of the first-order expansion from Bernoulli(p)
    // data; needs pair masses. Equals dq at p = 1/2.
    double dq_general(std::span<const std::uint8_t> a, double p) const;
};

struct AggregateOptions {
    const QModel* model = nullptr;
    bool pairs = false;
    int threads = 1;
};

// Sums masses session by session; mergeable, so blocks can be reduced in order.
class StreamerAccumulator {
public:
    StreamerAccumulator() = default;
    StreamerAccumulator(int n_creators, const QModel* model, bool pairs);
    void add(const SessionLog& s);
    void merge(const StreamerAccumulator& other);
    StreamerTable finish(const std::vector<std::uint8_t>& assignments) const;
    std::int64_t sessions() const { return n_sessions_; }

private:
    struct Raw {
        double suffix = 0.0, own = 0.0, repeat = 0.0, dr1 = 0.0, dr0 = 0.0;
    };
    std::vector<Raw> raw_;
    std::vector<std::unordered_map<int, double>> pairs_;
    double offset_ = 0.0;
    std::int64_t n_sessions_ = 0;
    const QModel* model_ = nullptr;
    bool with_pairs_ = false;
    // Per-session scratch: rewards still ahead of the backward sweep, by creator.
    std::vector<double> tail_;
    std::vector<int> touched_;
};

// Checks the streamer form of the DQ statistic against dq_mc (1e-9 relative).
StreamerTable aggregate_streamers(const ExperimentDataset& ds, const AggregateOptions& opt = {});

double null_variance_closed_form(std::span<const StreamerAggregate> aggregates, double p);
// Null variance of dq_dr with the outcome model frozen.
double null_variance_dr(std::span<const StreamerAggregate> aggregates, double p);

enum class VarianceMode { exact_m2, approx_m };

struct VarianceEstimate {
    double variance = 0.0;
    std::vector<std::string> warnings;
};

// Variance of StreamerTable::dq_general under the sharp null. approx_m drops
// the reciprocal pair terms (l credited to t and t credited to l).
VarianceEstimate null_variance_general_p(const StreamerTable& table, double p, VarianceMode mode);

// Share of total |suffix mass| held by the largest creator.
double max_mass_share(std::span<const StreamerAggregate> aggregates);

enum class RerandStatistic { dq_mc, dq_dr };

// Statistic under n_draws fresh Bernoulli(p) assignment vectors, outcomes frozen.
std::vector<double> rerandomize(const StreamerTable& table, double p, std::int64_t n_draws, RerandStatistic stat,
                                std::uint64_t seed, int threads = 1);

enum class TestMethod { closed_form, exact_m2, approx_m, rerandomization };
std::string to_string(TestMethod m);
TestMethod test_method_from_string(const std::string& s);

struct TestReport {
    std::string estimator = "dq";
    double statistic = 0.0;
    double variance = 0.0;
    double z = 0.0;
    double p_value_normal = 1.0;
    double p_value_chebyshev = 1.0;
    double level = 0.9;
    bool reject_normal = false;
    bool reject_chebyshev = false;
    bool degenerate = false;
    TestMethod method = TestMethod::closed_form;
    std::optional<std::int64_t> n_rerandomizations;
    std::vector<std::string> warnings;

    std::string to_json() const;
    std::string csv_header() const;
    std::string csv_row() const;
};

// level is the confidence level; rejection when the two-sided p-value is
// below 1 - level.
TestReport hypothesis_test(double statistic, double variance, double level = 0.9);

}  // namespace dqkit
