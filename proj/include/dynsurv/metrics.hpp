#pragma once

// Out-of-sample performance at a fixed horizon: reverse Kaplan-Meier
// censoring weights, IPCW concordance, IPCW Brier score and Poisson-offset
// calibration intercept and slope.

#include "core.hpp"

#include <limits>
#include <numeric>
#include <optional>

namespace dynsurv {

struct Outcome {
    double time = 0.0;
    bool event = false;
};

struct EvalInput {
    double horizon = 0.25;
    std::vector<SurvivalPrediction> predictions;
    std::vector<Outcome> outcomes;
    // Predicted cumulative hazard of each subject at s_i = min(T_i, horizon),
    // and the model's baseline cumulative hazard at the same s_i.
    std::vector<double> cumhaz_at_s;
    std::vector<double> baseline_cumhaz_at_s;

    std::size_t size() const { return outcomes.size(); }

    void validate() const {
        if (!(horizon > 0.0)) throw DomainError("EvalInput: horizon must be > 0");
        if (predictions.size() != outcomes.size())
            throw DimensionError("EvalInput: predictions and outcomes misaligned");
        for (const auto& p : predictions) {
            if (p.horizon != horizon) throw DomainError("EvalInput: predictions must share one horizon");
            if (!(p.survival_prob >= 0.0 && p.survival_prob <= 1.0))
                throw DomainError("EvalInput: survival probability outside [0,1]");
        }
    }
};

struct BrierResult {
    double value = 0.0;
    std::size_t dropped = 0;  // subjects whose censoring weight was undefined
};

struct CalibrationResult {
    double intercept = std::numeric_limits<double>::quiet_NaN();
    double slope = std::numeric_limits<double>::quiet_NaN();
    std::size_t clamped = 0;  // cumulative hazards raised to the 1e-10 floor
};

struct MetricReport {
    std::optional<double> c_index;  // empty when no usable pair exists
    double brier = 0.0;
    double cal_intercept = 0.0;
    double cal_slope = 0.0;
    std::size_t n = 0;
    std::size_t n_events = 0;
    int period = 0;
    std::string strategy;
    std::size_t brier_dropped = 0;
    std::size_t calibration_clamped = 0;
};

// Kaplan-Meier estimate of the censoring survivor function G. Events at a
// tied time leave the risk set before the censorings at that time.
inline StepFunction censoring_km(std::span<const Outcome> outcomes) {
    std::vector<std::size_t> order(outcomes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return outcomes[a].time < outcomes[b].time; });
    std::vector<double> knots, values;
    double g = 1.0;
    std::size_t at_risk = outcomes.size();
    for (std::size_t i = 0; i < order.size();) {
        const double t = outcomes[order[i]].time;
        std::size_t d = 0, c = 0;
        std::size_t j = i;
        for (; j < order.size() && outcomes[order[j]].time == t; ++j) (outcomes[order[j]].event ? d : c) += 1;
        if (c > 0) {
            const double risk = static_cast<double>(at_risk - d);
            g *= 1.0 - static_cast<double>(c) / risk;
            knots.push_back(t);
            values.push_back(std::max(g, 0.0));
        }
        at_risk -= d + c;
        i = j;
    }
    return StepFunction(StepRole::Survival, std::move(knots), std::move(values));
}

inline StepFunction censoring_km(const EvalInput& input) { return censoring_km(input.outcomes); }

namespace detail {

class Fenwick {
public:
    explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
    void add(std::size_t i) { for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i]; }
    // Count of inserted ranks < i.
    std::size_t prefix(std::size_t i) const {
        std::size_t s = 0;
        for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
        return s;
    }

private:
    std::vector<std::size_t> tree_;
};

}  // namespace detail

// Truncated IPCW concordance. Pairs (i, j) with T_i < T_j, T_i <= v and an
// event for i are weighted by G(T_i-)^-2; higher risk is lower predicted
// survival, ties in prediction count one half.
inline std::optional<double> ipcw_cindex(const EvalInput& input) {
    input.validate();
    const std::size_t n = input.size();
    const StepFunction g = censoring_km(input);

    // Rank subjects by predicted survival; lower survival = higher risk.
    std::vector<double> surv(n);
    for (std::size_t i = 0; i < n; ++i) surv[i] = input.predictions[i].survival_prob;
    std::vector<double> distinct = surv;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::vector<std::size_t> rank(n);  // rank 0 = lowest survival = highest risk
    for (std::size_t i = 0; i < n; ++i)
        rank[i] = static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), surv[i]) - distinct.begin());

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return input.outcomes[a].time > input.outcomes[b].time; });

    detail::Fenwick later(distinct.size());
    std::size_t inserted = 0;
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < n;) {
        const double t = input.outcomes[order[k]].time;
        std::size_t e = k;
        while (e < n && input.outcomes[order[e]].time == t) ++e;
        if (t <= input.horizon && inserted > 0) {
            for (std::size_t q = k; q < e; ++q) {
                const std::size_t i = order[q];
                if (!input.outcomes[i].event) continue;
                const double gi = g.eval_left(t);
                if (!(gi > 0.0)) continue;
                const double w = 1.0 / (gi * gi);
                // Later subjects with higher survival (rank above i) are concordant.
                const std::size_t below_or_eq = later.prefix(rank[i] + 1);
                const std::size_t equal = below_or_eq - later.prefix(rank[i]);
                const std::size_t higher = inserted - below_or_eq;
                num += w * (static_cast<double>(higher) + 0.5 * static_cast<double>(equal));
                den += w * static_cast<double>(inserted);
            }
        }
        for (std::size_t q = k; q < e; ++q) later.add(rank[order[q]]);
        inserted += e - k;
        k = e;
    }
    if (!(den > 0.0)) return std::nullopt;
    return num / den;
}

// Graf IPCW Brier score at the horizon. Survivors are subjects still under
// observation at v (T_i >= v without an event by v) and are weighted by
// 1/G(v-); events by v are weighted by 1/G(T_i-); earlier censorings add 0.
inline BrierResult ipcw_brier(const EvalInput& input) {
    input.validate();
    const StepFunction g = censoring_km(input);
    const double v = input.horizon;
    const double g_v = g.eval_left(v);
    double sum = 0.0;
    BrierResult out;
    std::size_t used = 0;
    for (std::size_t i = 0; i < input.size(); ++i) {
        const auto& o = input.outcomes[i];
        const double s = input.predictions[i].survival_prob;
        if (o.event && o.time <= v) {
            const double gi = g.eval_left(o.time);
            if (!(gi > 0.0)) { ++out.dropped; continue; }
            sum += s * s / gi;
        } else if (o.time >= v) {
            if (!(g_v > 0.0)) { ++out.dropped; continue; }
            sum += (1.0 - s) * (1.0 - s) / g_v;
        }
        ++used;
    }
    out.value = used > 0 ? sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
    return out;
}

// Weak calibration by Poisson regression of the events by s_i = min(T_i, v):
// intercept a in d_i ~ exp(a) H_i(s_i), slope b in d_i ~ exp(a' + b eta_i) H_0(s_i).
inline CalibrationResult calibration(const EvalInput& input) {
    input.validate();
    const std::size_t n = input.size();
    if (input.cumhaz_at_s.size() != n || input.baseline_cumhaz_at_s.size() != n)
        throw DimensionError("calibration: cumulative hazards misaligned with outcomes");
    constexpr double floor = 1e-10;
    CalibrationResult out;

    Eigen::VectorXd d(static_cast<Eigen::Index>(n)), h(static_cast<Eigen::Index>(n)),
        h0(static_cast<Eigen::Index>(n)), eta(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const auto& o = input.outcomes[i];
        d[ii] = (o.event && o.time <= input.horizon) ? 1.0 : 0.0;
        h[ii] = input.cumhaz_at_s[i];
        h0[ii] = input.baseline_cumhaz_at_s[i];
        if (!(h[ii] >= floor)) { h[ii] = floor; ++out.clamped; }
        if (!(h0[ii] >= floor)) { h0[ii] = floor; ++out.clamped; }
        eta[ii] = input.predictions[i].linear_predictor;
    }
    const double events = d.sum();
    if (events <= 0.0 || n == 0) return out;
    out.intercept = std::log(events / h.sum());

    // Two-parameter Poisson fit by Newton with step halving; eta centred.
    const double centre = eta.mean();
    const Eigen::VectorXd x = eta.array() - centre;
    const Eigen::VectorXd log_h0 = h0.array().log();
    Eigen::Vector2d theta(std::log(events / (h0.array() * eta.array().exp()).sum()) + centre, 1.0);
    auto loglik = [&](const Eigen::Vector2d& th) {
        const Eigen::ArrayXd lin = th[0] + th[1] * x.array() + log_h0.array();
        return (d.array() * lin - lin.exp()).sum();
    };
    double ll = loglik(theta);
    for (int iter = 0; iter < 100; ++iter) {
        const Eigen::ArrayXd mu = (theta[0] + theta[1] * x.array() + log_h0.array()).exp();
        Eigen::Vector2d grad((d.array() - mu).sum(), ((d.array() - mu) * x.array()).sum());
        Eigen::Matrix2d info;
        info << mu.sum(), (mu * x.array()).sum(), (mu * x.array()).sum(), (mu * x.array().square()).sum();
        const Eigen::Vector2d step = info.ldlt().solve(grad);
        if (!step.allFinite()) break;
        double scale = 1.0;
        Eigen::Vector2d trial = theta + step;
        double tll = loglik(trial);
        for (int k = 0; k < 20 && !(tll >= ll); ++k) {
            scale *= 0.5;
            trial = theta + scale * step;
            tll = loglik(trial);
        }
        if (!(tll >= ll)) break;
        theta = trial;
        ll = tll;
        if (step.cwiseAbs().maxCoeff() < 1e-10) break;
    }
    out.slope = theta[1];
    return out;
}

inline MetricReport evaluate_metrics(const EvalInput& input, int period, std::string strategy) {
    MetricReport r;
    r.c_index = ipcw_cindex(input);
    const auto b = ipcw_brier(input);
    r.brier = b.value;
    r.brier_dropped = b.dropped;
    const auto cal = calibration(input);
    r.cal_intercept = cal.intercept;
    r.cal_slope = cal.slope;
    r.calibration_clamped = cal.clamped;
    r.n = input.size();
    r.n_events = static_cast<std::size_t>(std::count_if(input.outcomes.begin(), input.outcomes.end(),
                                                        [&](const Outcome& o) { return o.event && o.time <= input.horizon; }));
    r.period = period;
    r.strategy = std::move(strategy);
    return r;
}

}  // namespace dynsurv
