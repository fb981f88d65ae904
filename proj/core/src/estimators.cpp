#include "dqkit/estimators.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "dqkit/error.hpp"
#include "dqkit/format.hpp"

namespace dqkit {

namespace {

void check_p(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("treatment probability must lie in (0,1)");
}

LinearFit ols(const std::vector<double>& x, const std::vector<double>& y) {
    LinearFit f;
    f.n = static_cast<std::int64_t>(x.size());
    if (x.empty()) {
        f.intercept_only = true;
        return f;
    }
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    f.target_variance = syy / n;
    if (x.size() < 2 || sxx <= 1e-12 * n * (1.0 + mx * mx)) {
        f.intercept_only = true;
        f.beta0 = my;
        f.residual_variance = f.target_variance;
        return f;
    }
    f.beta = sxy / sxx;
    f.beta0 = my - f.beta * mx;
    double rss = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - f.beta0 - f.beta * x[i];
        rss += e * e;
    }
    f.residual_variance = rss / n;
    return f;
}

double policy_prob(const PolicySpec& pol, const Step& step, int a, int n_actions) {
    switch (pol.kind) {
        case PolicySpec::Kind::global_control: return a == 0 ? 1.0 : 0.0;
        case PolicySpec::Kind::global_treatment: return a == 1 ? 1.0 : 0.0;
        case PolicySpec::Kind::bernoulli_mix: return a == 1 ? pol.p : a == 0 ? 1.0 - pol.p : 0.0;
        case PolicySpec::Kind::tabular:
            if (step.state < 0 || step.state >= pol.table.rows())
                throw ModelError("state", "tabular policy needs logged states");
            if (pol.table.cols() != n_actions) throw ModelError("actions", "policy table width differs");
            return pol.table(step.state, a);
    }
    return 0.0;
}

struct Summary {
    double sum = 0.0, sumsq = 0.0;
    std::vector<double> values;
    void add(double v) {
        sum += v;
        sumsq += v * v;
        values.push_back(v);
    }
};

EstimateReport finish(std::string name, const Summary& s, std::int64_t n) {
    EstimateReport r;
    r.estimator = std::move(name);
    r.n_sessions = n;
    const double dn = static_cast<double>(n);
    r.point = s.sum / dn;
    if (n > 1) {
        const double var = std::max(0.0, (s.sumsq - dn * r.point * r.point) / (dn - 1.0));
        r.iid_variance = var / dn;
    }
    r.per_session_values = s.values;
    return r;
}

template <class Pick>
EstimateReport run(const ExperimentDataset& ds, const SessionContext& ctx, const char* name, Pick pick) {
    if (ds.sessions.empty()) throw EmptyDatasetError();
    check_p(ctx.p);
    Summary s;
    std::vector<double> suffix;
    std::int64_t steps = 0, truncated = 0;
    for (const auto& sess : ds.sessions) {
        s.add(pick(session_terms(sess, ctx, suffix)));
        steps += static_cast<std::int64_t>(sess.steps.size());
        truncated += sess.truncated ? 1 : 0;
    }
    EstimateReport r = finish(name, s, static_cast<std::int64_t>(ds.sessions.size()));
    r.diagnostics["p_used"] = ctx.p;
    r.diagnostics["n_steps"] = static_cast<double>(steps);
    r.diagnostics["truncated_sessions"] = static_cast<double>(truncated);
    return r;
}

}  // namespace

QRegressionModel fit_q_regression(std::span<const SessionLog> holdout, double p_nominal, RegressionTarget target) {
    if (holdout.empty()) throw EmptyDatasetError();
    check_p(p_nominal);
    std::array<std::vector<double>, 2> xs, ys;
    for (const auto& s : holdout) {
        double tail = 0.0;
        for (auto it = s.steps.rbegin(); it != s.steps.rend(); ++it) {
            tail += it->reward;
            const int a = it->action != 0 ? 1 : 0;
            xs[static_cast<size_t>(a)].push_back(it->watch);
            ys[static_cast<size_t>(a)].push_back(target == RegressionTarget::suffix_sum ? tail : it->reward);
        }
    }
    QRegressionModel m;
    for (size_t a = 0; a < 2; ++a) m.arms[a] = ols(xs[a], ys[a]);
    return m;
}

SessionTerms session_terms(const SessionLog& s, const SessionContext& ctx, std::vector<double>& suffix) {
    const size_t T = s.steps.size();
    if (suffix.size() < T) suffix.resize(T);
    double tail = 0.0;
    for (size_t t = T; t-- > 0;) {
        tail += s.steps[t].reward;
        suffix[t] = tail;
    }
    const double p = ctx.p;
    const double w1 = 1.0 / p, w0 = -1.0 / (1.0 - p);
    const double log_w1 = -std::log(p), log_w0 = -std::log(1.0 - p);

    SessionTerms out;
    double credit = 0.0;
    // Stepwise products for the treatment (index 1) and control (index 0) arms.
    bool alive[2] = {true, true};
    double logw[2] = {0.0, 0.0};
    double prev_rho[2] = {1.0, 1.0};
    for (size_t t = 0; t < T; ++t) {
        const Step& st = s.steps[t];
        const bool treated = st.action != 0;
        const double r = st.reward;
        const double S = suffix[t];
        const double w = treated ? w1 : w0;
        out.naive += w * r;
        out.dq += w * S;
        credit += w;
        out.dq_credit += credit * r;

        double rho[2];
        for (int b = 0; b < 2; ++b) {
            if (alive[b] && (treated == (b == 1))) {
                logw[b] += b == 1 ? log_w1 : log_w0;
            } else {
                alive[b] = false;
            }
            rho[b] = alive[b] ? std::exp(logw[b]) : 0.0;
            if (alive[b]) out.max_log_weight = std::max(out.max_log_weight, logw[b]);
        }
        out.ope += (rho[1] - rho[0]) * r;

        if (ctx.q_model) {
            const double q1 = ctx.q_model->predict(st, 1), q0 = ctx.q_model->predict(st, 0);
            out.dq_dr += q1 - q0 + (treated ? (S - q1) * w1 : (S - q0) * w0);
            out.ope_dr += rho[1] * (r - q1) + prev_rho[1] * q1 - (rho[0] * (r - q0) + prev_rho[0] * q0);
        }
        if (ctx.reward_model) {
            const double m1 = ctx.reward_model->predict(st, 1), m0 = ctx.reward_model->predict(st, 0);
            out.naive_dr += m1 - m0 + (treated ? (r - m1) * w1 : (r - m0) * w0);
        }
        prev_rho[0] = rho[0];
        prev_rho[1] = rho[1];
    }
    double scale = 1.0;
    for (size_t t = 0; t < T; ++t) scale += std::abs(s.steps[t].action ? w1 : w0) * std::abs(suffix[t]);
    if (std::abs(out.dq - out.dq_credit) > 1e-9 * scale)
        throw Error("suffix-sum and credit-assignment forms of DQ disagree");
    return out;
}

EstimateReport naive(const ExperimentDataset& ds, std::optional<double> p) {
    SessionContext ctx{p.value_or(ds.p_nominal), nullptr, nullptr};
    return run(ds, ctx, "naive", [](const SessionTerms& t) { return t.naive; });
}

EstimateReport dq_mc(const ExperimentDataset& ds, std::optional<double> p) {
    SessionContext ctx{p.value_or(ds.p_nominal), nullptr, nullptr};
    double gap = 0.0;
    auto r = run(ds, ctx, "dq", [&](const SessionTerms& t) {
        gap = std::max(gap, std::abs(t.dq - t.dq_credit));
        return t.dq;
    });
    r.diagnostics["max_form_gap"] = gap;
    return r;
}

EstimateReport dq_dr(const ExperimentDataset& ds, const QModel& model, double p_used) {
    SessionContext ctx{p_used, &model, nullptr};
    return run(ds, ctx, "dq_dr", [](const SessionTerms& t) { return t.dq_dr; });
}

EstimateReport ope_stepwise(const ExperimentDataset& ds, std::optional<double> p) {
    SessionContext ctx{p.value_or(ds.p_nominal), nullptr, nullptr};
    double max_log_w = -1e300;
    auto r = run(ds, ctx, "ope", [&](const SessionTerms& t) {
        max_log_w = std::max(max_log_w, t.max_log_weight);
        return t.ope;
    });
    r.diagnostics["max_weight"] = std::exp(max_log_w);
    return r;
}

EstimateReport naive_dr(const ExperimentDataset& ds, const QModel& reward_model, double p_used) {
    SessionContext ctx{p_used, nullptr, &reward_model};
    auto r = run(ds, ctx, "naive_dr", [](const SessionTerms& t) { return t.naive_dr; });
    r.flags.push_back("reconstructed variant");
    return r;
}

EstimateReport ope_dr(const ExperimentDataset& ds, const QModel& model, double p_used) {
    SessionContext ctx{p_used, &model, nullptr};
    double max_log_w = -1e300;
    auto r = run(ds, ctx, "ope_dr", [&](const SessionTerms& t) {
        max_log_w = std::max(max_log_w, t.max_log_weight);
        return t.ope_dr;
    });
    r.diagnostics["max_weight"] = std::exp(max_log_w);
    r.flags.push_back("reconstructed variant");
    return r;
}

EstimateReport dq_general(const ExperimentDataset& ds, const PolicySpec& pi_data, const PolicySpec& pi_new,
                          const QModel* model, int n_actions) {
    if (ds.sessions.empty()) throw EmptyDatasetError();
    Summary s;
    std::vector<double> omega, F;
    double max_w = 0.0;
    for (const auto& sess : ds.sessions) {
        const size_t T = sess.steps.size();
        omega.assign(T, 0.0);
        F.assign(T, 0.0);
        double v = 0.0;
        for (size_t t = 0; t < T; ++t) {
            const Step& st = sess.steps[t];
            for (int a = 0; a < n_actions; ++a)
                if (policy_prob(pi_new, st, a, n_actions) > 0.0 && policy_prob(pi_data, st, a, n_actions) <= 0.0)
                    throw SupportViolation();
            const double pd = policy_prob(pi_data, st, st.action, n_actions);
            if (pd <= 0.0) throw SupportViolation();
            omega[t] = policy_prob(pi_new, st, st.action, n_actions) / pd;
            max_w = std::max(max_w, omega[t]);
            if (model)
                for (int a = 0; a < n_actions; ++a)
                    v += (policy_prob(pi_new, st, a, n_actions) - policy_prob(pi_data, st, a, n_actions)) *
                         model->predict(st, a);
        }
        double tail = 0.0;
        for (size_t t = T; t-- > 0;) {
            F[t] = tail;
            tail += omega[t] * sess.steps[t].reward;
        }
        for (size_t t = 0; t < T; ++t) {
            const Step& st = sess.steps[t];
            const double base = model ? model->predict(st, st.action) : 0.0;
            v += omega[t] * st.reward + (omega[t] - 1.0) * (F[t] - base);
        }
        s.add(v);
    }
    EstimateReport r = finish("dq_general", s, static_cast<std::int64_t>(ds.sessions.size()));
    r.diagnostics["max_weight"] = max_w;
    return r;
}

void validate_dataset(const ExperimentDataset& ds) {
    auto check = [&](const std::vector<SessionLog>& sessions) {
        for (const auto& s : sessions) {
            double prev = -1e300;
            for (const auto& st : s.steps) {
                if (st.creator < 0 || static_cast<size_t>(st.creator) >= ds.assignments.size())
                    throw ModelError("creator_id", "creator missing from the assignment table");
                if (st.action != ds.assignments[static_cast<size_t>(st.creator)])
                    throw ModelError("action", "action differs from the creator assignment");
                if (!std::isfinite(st.reward) || st.reward < 0.0) throw ModelError("reward", "reward must be finite and >= 0");
                if (st.watch < prev) throw ModelError("cumulative_watch", "cumulative watch decreased");
                prev = st.watch;
            }
        }
    };
    check(ds.sessions);
    check(ds.holdout_sessions);
}

std::string EstimateReport::to_json() const {
    nlohmann::ordered_json j;
    j["estimator"] = estimator;
    j["point"] = point;
    j["n_sessions"] = n_sessions;
    j["iid_variance"] = iid_variance;
    j["diagnostics"] = diagnostics;
    j["flags"] = flags;
    return j.dump(2);
}

std::string EstimateReport::csv_header() {
    return "estimator,point,n_sessions,iid_variance,diagnostics";
}

std::string EstimateReport::csv_row() const {
    std::string diag;
    for (const auto& [k, v] : diagnostics) {
        if (!diag.empty()) diag += ';';
        diag += k + "=" + fmt_double(v);
    }
    for (const auto& f : flags) {
        if (!diag.empty()) diag += ';';
        diag += f;
    }
    return estimator + "," + fmt_double(point) + "," + std::to_string(n_sessions) + "," + fmt_double(iid_variance) +
           "," + csv_quote(diag);
}

}  // namespace dqkit
