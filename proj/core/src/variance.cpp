#include "dqkit/variance.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "dqkit/error.hpp"
#include "dqkit/format.hpp"
#include "dqkit/parallel.hpp"
#include "dqkit/rng.hpp"

namespace dqkit {

namespace {

void check_p(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("treatment probability must lie in (0,1)");
}

double w(std::uint8_t a, double p) { return a ? 1.0 / p : -1.0 / (1.0 - p); }

// Weight on a reward from a creator with action y credited to a creator with
// action x, in the pi_1 minus pi_0 first-order contrast.
double credit(std::uint8_t x, std::uint8_t y, double p) {
    const double q = 1.0 - p;
    if (x && y) return (1.0 - p) / (p * p);
    if (x && !y) return 1.0 / q;
    if (!x && y) return -1.0 / p;
    return -p / (q * q);
}

void check_assignments(const StreamerTable& t, std::span<const std::uint8_t> a) {
    if (a.size() != t.creators.size()) throw ConfigError("assignment vector length differs from creator count");
}

}  // namespace

StreamerAccumulator::StreamerAccumulator(int n_creators, const QModel* model, bool pairs)
    : raw_(static_cast<size_t>(n_creators)),
      model_(model),
      with_pairs_(pairs),
      tail_(static_cast<size_t>(n_creators), 0.0) {
    if (pairs) pairs_.resize(static_cast<size_t>(n_creators));
}

void StreamerAccumulator::add(const SessionLog& s) {
    ++n_sessions_;
    const auto M = static_cast<int>(raw_.size());
    double suffix = 0.0;
    for (size_t t = s.steps.size(); t-- > 0;) {
        const Step& st = s.steps[t];
        if (st.creator < 0 || st.creator >= M) throw ModelError("creator_id", "creator outside the assignment table");
        const auto j = static_cast<size_t>(st.creator);
        suffix += st.reward;
        Raw& r = raw_[j];
        r.suffix += suffix;
        r.own += st.reward;
        r.repeat += tail_[j];
        if (model_) {
            const double q1 = model_->predict(st, 1), q0 = model_->predict(st, 0);
            offset_ += q1 - q0;
            r.dr1 += suffix - q1;
            r.dr0 += suffix - q0;
        }
        if (with_pairs_) {
            auto& row = pairs_[j];
            for (int l : touched_)
                if (l != st.creator && tail_[static_cast<size_t>(l)] != 0.0) row[l] += tail_[static_cast<size_t>(l)];
        }
        if (tail_[j] == 0.0 && std::find(touched_.begin(), touched_.end(), st.creator) == touched_.end())
            touched_.push_back(st.creator);
        tail_[j] += st.reward;
    }
    for (int l : touched_) tail_[static_cast<size_t>(l)] = 0.0;
    touched_.clear();
}

void StreamerAccumulator::merge(const StreamerAccumulator& o) {
    if (o.raw_.size() != raw_.size() || o.with_pairs_ != with_pairs_) throw Error("incompatible accumulators");
    for (size_t j = 0; j < raw_.size(); ++j) {
        raw_[j].suffix += o.raw_[j].suffix;
        raw_[j].own += o.raw_[j].own;
        raw_[j].repeat += o.raw_[j].repeat;
        raw_[j].dr1 += o.raw_[j].dr1;
        raw_[j].dr0 += o.raw_[j].dr0;
    }
    if (with_pairs_)
        for (size_t j = 0; j < pairs_.size(); ++j)
            for (const auto& [l, v] : o.pairs_[j]) pairs_[j][l] += v;
    offset_ += o.offset_;
    n_sessions_ += o.n_sessions_;
}

StreamerTable StreamerAccumulator::finish(const std::vector<std::uint8_t>& assignments) const {
    if (n_sessions_ == 0) throw EmptyDatasetError();
    if (assignments.size() != raw_.size()) throw ConfigError("assignment vector length differs from creator count");
    const double inv_n = 1.0 / static_cast<double>(n_sessions_);
    StreamerTable t;
    t.assignments = assignments;
    t.n_sessions = n_sessions_;
    t.has_pairs = with_pairs_;
    t.has_model = model_ != nullptr;
    t.dr_offset = offset_ * inv_n;
    t.creators.resize(raw_.size());
    for (size_t j = 0; j < raw_.size(); ++j) {
        StreamerAggregate& a = t.creators[j];
        const Raw& r = raw_[j];
        a.creator = static_cast<int>(j);
        a.suffix_mass = r.suffix * inv_n;
        a.own_mass = r.own * inv_n;
        a.repeat_mass = r.repeat * inv_n;
        a.cross_mass = (r.suffix - r.own - r.repeat) * inv_n;
        a.dr_treat = r.dr1 * inv_n;
        a.dr_control = r.dr0 * inv_n;
        if (with_pairs_) {
            std::vector<std::pair<int, double>> row(pairs_[j].begin(), pairs_[j].end());
            std::sort(row.begin(), row.end());
            double sq = 0.0;
            for (auto& [l, v] : row) {
                v *= inv_n;
                sq += v * v;
            }
            a.cross_sq = sq;
            a.pair_masses = std::move(row);
        }
    }
    return t;
}

double StreamerTable::dq(std::span<const std::uint8_t> a, double p) const {
    check_assignments(*this, a);
    double s = 0.0;
    for (size_t j = 0; j < creators.size(); ++j) s += w(a[j], p) * creators[j].suffix_mass;
    return s;
}

double StreamerTable::dq_dr(std::span<const std::uint8_t> a, double p) const {
    check_assignments(*this, a);
    if (!has_model) throw ConfigError("dq_dr statistic needs masses built with an outcome model");
    double s = dr_offset;
    for (size_t j = 0; j < creators.size(); ++j)
        s += a[j] ? creators[j].dr_treat / p : -creators[j].dr_control / (1.0 - p);
    return s;
}

double StreamerTable::dq_general(std::span<const std::uint8_t> a, double p) const {
    check_assignments(*this, a);
    if (!has_pairs) throw ConfigError("general-p statistic needs pair masses");
    double s = 0.0;
    for (size_t j = 0; j < creators.size(); ++j) {
        const auto& c = creators[j];
        s += w(a[j], p) * c.own_mass + credit(a[j], a[j], p) * c.repeat_mass;
        for (const auto& [l, v] : *c.pair_masses) s += credit(a[j], a[static_cast<size_t>(l)], p) * v;
    }
    return s;
}

StreamerTable aggregate_streamers(const ExperimentDataset& ds, const AggregateOptions& opt) {
    if (ds.sessions.empty()) throw EmptyDatasetError();
    const int M = static_cast<int>(ds.assignments.size());
    const auto n = static_cast<std::int64_t>(ds.sessions.size());
    const auto n_blocks = block_count(n);
    std::vector<StreamerAccumulator> parts(static_cast<size_t>(n_blocks), StreamerAccumulator(M, opt.model, opt.pairs));
    parallel_for_blocks(n_blocks, opt.threads, [&](std::int64_t b) {
        const std::int64_t lo = b * kSessionBlock, hi = std::min(n, lo + kSessionBlock);
        for (std::int64_t i = lo; i < hi; ++i) parts[static_cast<size_t>(b)].add(ds.sessions[static_cast<size_t>(i)]);
    });
    const auto all =
        pairwise_reduce(std::move(parts), [](StreamerAccumulator& x, const StreamerAccumulator& y) { x.merge(y); });
    StreamerTable t = all.finish(ds.assignments);

    const double step_form = dq_mc(ds).point;
    const double streamer_form = t.dq(t.assignments, ds.p_nominal);
    double scale = 1.0;
    for (const auto& c : t.creators) scale += std::abs(w(1, ds.p_nominal)) * std::abs(c.suffix_mass);
    if (std::abs(step_form - streamer_form) > 1e-9 * scale)
        throw Error("streamer form of the DQ statistic disagrees with the step form");
    return t;
}

double null_variance_closed_form(std::span<const StreamerAggregate> aggregates, double p) {
    check_p(p);
    const double coef = p * (1.0 - p) * std::pow(1.0 / p + 1.0 / (1.0 - p), 2);
    double v = 0.0;
    for (const auto& a : aggregates) v += coef * a.suffix_mass * a.suffix_mass;
    return v;
}

double null_variance_dr(std::span<const StreamerAggregate> aggregates, double p) {
    check_p(p);
    const double q = 1.0 - p;
    double v = 0.0;
    for (const auto& a : aggregates) {
        const double spread = a.dr_treat / p + a.dr_control / q;
        v += p * q * spread * spread;
    }
    return v;
}

double max_mass_share(std::span<const StreamerAggregate> aggregates) {
    double total = 0.0, top = 0.0;
    for (const auto& a : aggregates) {
        total += std::abs(a.suffix_mass);
        top = std::max(top, std::abs(a.suffix_mass));
    }
    return total > 0.0 ? top / total : 0.0;
}

VarianceEstimate null_variance_general_p(const StreamerTable& table, double p, VarianceMode mode) {
    check_p(p);
    if (!table.has_pairs) throw ConfigError("general-p variance needs pair masses");
    const double q = 1.0 - p;
    // Interaction part of the pair weight: credit(x, y) minus its mean given x.
    const double d11 = (1.0 - 2.0 * p) / (p * p);
    const double d00 = (1.0 - 2.0 * p) / (q * q);
    const double d10 = (2.0 * p - 1.0) / (p * q);
    // E[d(x,y)^2] and E[d(x,y) d(y,x)] coincide because d(1,0) = d(0,1); this
    // is (1-2p)^2 / (p q)^2 and vanishes at p = 1/2.
    const double coef = p * p * d11 * d11 + 2.0 * p * q * d10 * d10 + q * q * d00 * d00;
    VarianceEstimate out;
    double main = 0.0, squares = 0.0;
    for (const auto& c : table.creators) {
        const double h1 = w(1, p) * (c.own_mass + c.cross_mass) + credit(1, 1, p) * c.repeat_mass;
        const double h0 = w(0, p) * (c.own_mass + c.cross_mass) + credit(0, 0, p) * c.repeat_mass;
        main += p * q * (h1 - h0) * (h1 - h0);
        squares += c.cross_sq;
    }
    out.variance = main + coef * squares;
    if (mode == VarianceMode::exact_m2) {
        double recip = 0.0;
        for (const auto& c : table.creators) {
            for (const auto& [l, v] : *c.pair_masses) {
                if (l <= c.creator) continue;
                const auto& back = *table.creators[static_cast<size_t>(l)].pair_masses;
                auto it = std::lower_bound(back.begin(), back.end(), std::make_pair(c.creator, -HUGE_VAL));
                if (it != back.end() && it->first == c.creator) recip += v * it->second;
            }
        }
        out.variance += 2.0 * coef * recip;
    } else if (max_mass_share(table.creators) > 0.5) {
        out.warnings.push_back("approximation quality degraded");
    }
    out.variance = std::max(out.variance, 0.0);
    return out;
}

std::vector<double> rerandomize(const StreamerTable& table, double p, std::int64_t n_draws, RerandStatistic stat,
                                std::uint64_t seed, int threads) {
    check_p(p);
    if (n_draws < 1) throw ConfigError("n_draws must be >= 1");
    if (stat == RerandStatistic::dq_dr && !table.has_model)
        throw ConfigError("dq_dr rerandomization needs masses built with an outcome model");
    std::vector<double> out(static_cast<size_t>(n_draws));
    constexpr std::int64_t kDrawBlock = 256;
    parallel_for_blocks(block_count(n_draws, kDrawBlock), threads, [&](std::int64_t b) {
        std::vector<std::uint8_t> a(table.creators.size());
        const std::int64_t lo = b * kDrawBlock, hi = std::min(n_draws, lo + kDrawBlock);
        for (std::int64_t d = lo; d < hi; ++d) {
            RngStream rng(seed, domain::rerandomize, static_cast<std::uint64_t>(d));
            for (auto& x : a) x = rng.bernoulli(p) ? 1 : 0;
            out[static_cast<size_t>(d)] = stat == RerandStatistic::dq_mc ? table.dq(a, p) : table.dq_dr(a, p);
        }
    });
    return out;
}

std::string to_string(TestMethod m) {
    switch (m) {
        case TestMethod::closed_form: return "closed_form";
        case TestMethod::exact_m2: return "exact_m2";
        case TestMethod::approx_m: return "approx_m";
        case TestMethod::rerandomization: return "rerandomization";
    }
    return "?";
}

TestMethod test_method_from_string(const std::string& s) {
    for (auto m : {TestMethod::closed_form, TestMethod::exact_m2, TestMethod::approx_m, TestMethod::rerandomization})
        if (to_string(m) == s) return m;
    throw ConfigError("unknown test method: " + s);
}

TestReport hypothesis_test(double statistic, double variance, double level) {
    if (!(variance >= 0.0)) throw ConfigError("variance must be >= 0");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0,1)");
    TestReport r;
    r.statistic = statistic;
    r.variance = variance;
    r.level = level;
    if (variance == 0.0) {
        r.z = 0.0;
        if (statistic != 0.0) {
            r.degenerate = true;
            r.z = statistic > 0 ? HUGE_VAL : -HUGE_VAL;
            r.p_value_normal = 0.0;
            r.p_value_chebyshev = 0.0;
        }
    } else {
        r.z = statistic / std::sqrt(variance);
        r.p_value_normal = std::erfc(std::abs(r.z) / std::sqrt(2.0));
        r.p_value_chebyshev = r.z == 0.0 ? 1.0 : std::min(1.0, 1.0 / (r.z * r.z));
    }
    r.reject_normal = r.p_value_normal < 1.0 - level;
    r.reject_chebyshev = r.p_value_chebyshev < 1.0 - level;
    return r;
}

std::string TestReport::to_json() const {
    nlohmann::ordered_json j;
    j["estimator"] = estimator;
    j["method"] = to_string(method);
    j["statistic"] = statistic;
    j["variance"] = variance;
    j["z"] = std::isfinite(z) ? nlohmann::ordered_json(z) : nlohmann::ordered_json(z > 0 ? "inf" : "-inf");
    j["p_value_normal"] = p_value_normal;
    j["p_value_chebyshev"] = p_value_chebyshev;
    j["level"] = level;
    j["reject_normal"] = reject_normal;
    j["reject_chebyshev"] = reject_chebyshev;
    j["degenerate"] = degenerate;
    j["n_rerandomizations"] = n_rerandomizations ? nlohmann::ordered_json(*n_rerandomizations) : nullptr;
    j["warnings"] = warnings;
    return j.dump(2);
}

std::string TestReport::csv_header() const {
    return "method,statistic,variance,z,p_normal,p_chebyshev,reject_" +
           std::to_string(static_cast<int>(std::lround(level * 100)));
}

std::string TestReport::csv_row() const {
    return to_string(method) + "," + fmt_double(statistic) + "," + fmt_double(variance) + "," + fmt_double(z) + "," +
           fmt_double(p_value_normal) + "," + fmt_double(p_value_chebyshev) + "," + (reject_normal ? "1" : "0");
}

}  // namespace dqkit
