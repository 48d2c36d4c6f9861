#pragma once

// Cox proportional hazards fitting (Breslow ties), Breslow cumulative
// baseline hazard and survival prediction.

#include "core.hpp"

#include <limits>
#include <numeric>

namespace dynsurv {

struct FitOptions {
    int max_iter = 100;
    double tol = 1e-9;         // on max |score|
    double ridge_eps = 1e-8;   // added to the Hessian diagonal if it is not positive definite
    int max_halvings = 10;
    double beta_bound = 50.0;  // |beta_j| beyond this is treated as a monotone likelihood

    void validate() const {
        if (max_iter < 1) throw DomainError("FitOptions: max_iter must be >= 1");
        if (!(tol > 0.0)) throw DomainError("FitOptions: tol must be > 0");
        if (!(ridge_eps >= 0.0)) throw DomainError("FitOptions: ridge_eps must be >= 0");
    }
};

struct PartialLikelihood {
    double loglik = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd information;  // negative Hessian
};

namespace detail {

// Times sorted descending with covariates in the same order; the sweep over
// this order accumulates risk sets {j : T_j >= t}.
struct RiskSetData {
    Eigen::MatrixXd x;  // n x p
    std::vector<double> time;
    std::vector<char> event;
    Eigen::VectorXd offset;

    RiskSetData(const Dataset& data, const CovariateSpec& spec, const Eigen::VectorXd* offset_in = nullptr) {
        const std::size_t n = data.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return data.records[a].time_observed > data.records[b].time_observed;
        });
        const auto pos = data.spec.positions_of(spec);
        x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pos.size()));
        time.resize(n);
        event.resize(n);
        offset = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        for (std::size_t r = 0; r < n; ++r) {
            const auto& rec = data.records[order[r]];
            for (std::size_t j = 0; j < pos.size(); ++j)
                x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = rec.covariates[pos[j]];
            time[r] = rec.time_observed;
            event[r] = rec.event ? 1 : 0;
            if (offset_in) offset[static_cast<Eigen::Index>(r)] = (*offset_in)[static_cast<Eigen::Index>(order[r])];
        }
    }

    std::size_t size() const { return time.size(); }
};

inline PartialLikelihood partial_likelihood(const RiskSetData& rs, const Eigen::VectorXd& beta) {
    const auto n = static_cast<Eigen::Index>(rs.size());
    const auto p = beta.size();
    Eigen::VectorXd eta = rs.x * beta + rs.offset;
    const double shift = n > 0 ? eta.maxCoeff() : 0.0;
    Eigen::VectorXd w = (eta.array() - shift).exp();

    PartialLikelihood out;
    out.score = Eigen::VectorXd::Zero(p);
    out.information = Eigen::MatrixXd::Zero(p, p);

    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);

    Eigen::Index i = 0;
    while (i < n) {
        Eigen::Index j = i;
        double d = 0.0;
        double eta_events = 0.0;
        Eigen::VectorXd x_events = Eigen::VectorXd::Zero(p);
        while (j < n && rs.time[static_cast<std::size_t>(j)] == rs.time[static_cast<std::size_t>(i)]) {
            const auto xj = rs.x.row(j).transpose();
            s0 += w[j];
            s1.noalias() += w[j] * xj;
            s2.noalias() += w[j] * xj * xj.transpose();
            if (rs.event[static_cast<std::size_t>(j)]) {
                d += 1.0;
                eta_events += eta[j];
                x_events += xj;
            }
            ++j;
        }
        if (d > 0.0) {
            const Eigen::VectorXd mean = s1 / s0;
            out.loglik += eta_events - d * (std::log(s0) + shift);
            out.score += x_events - d * mean;
            out.information.noalias() += d * (s2 / s0 - mean * mean.transpose());
        }
        i = j;
    }
    return out;
}

}  // namespace detail

inline PartialLikelihood evaluate_partial_likelihood(const Dataset& data, const Eigen::VectorXd& beta) {
    if (beta.size() != static_cast<Eigen::Index>(data.spec.size()))
        throw DimensionError("beta length does not match dataset spec");
    return detail::partial_likelihood(detail::RiskSetData(data, data.spec), beta);
}

// Breslow estimator of the cumulative baseline hazard with the covariates of
// `spec` (default: the dataset's own) and an optional per-record offset.
inline StepFunction breslow_cum_hazard(const Eigen::VectorXd& beta, const Dataset& data,
                                       const CovariateSpec& spec,
                                       const Eigen::VectorXd* offset = nullptr) {
    if (beta.size() != static_cast<Eigen::Index>(spec.size()))
        throw DimensionError("beta length does not match spec");
    if (offset && offset->size() != static_cast<Eigen::Index>(data.size()))
        throw DimensionError("offset length does not match dataset");
    detail::RiskSetData rs(data, spec, offset);
    const auto n = static_cast<Eigen::Index>(rs.size());
    if (n == 0) return StepFunction::zero_hazard();

    Eigen::VectorXd eta = rs.x * beta + rs.offset;
    const double shift = eta.maxCoeff();
    Eigen::VectorXd w = (eta.array() - shift).exp();

    // Sweep descending, collect increments, then reverse into ascending order.
    std::vector<double> knots;
    std::vector<double> incr;
    double s0 = 0.0;
    Eigen::Index i = 0;
    while (i < n) {
        Eigen::Index j = i;
        double d = 0.0;
        const double t = rs.time[static_cast<std::size_t>(i)];
        while (j < n && rs.time[static_cast<std::size_t>(j)] == t) {
            s0 += w[j];
            if (rs.event[static_cast<std::size_t>(j)]) d += 1.0;
            ++j;
        }
        if (d > 0.0) {
            knots.push_back(t);
            incr.push_back(d / s0 * std::exp(-shift));
        }
        i = j;
    }
    std::reverse(knots.begin(), knots.end());
    std::reverse(incr.begin(), incr.end());
    std::vector<double> values(incr.size());
    std::partial_sum(incr.begin(), incr.end(), values.begin());
    return StepFunction(StepRole::CumulativeHazard, std::move(knots), std::move(values));
}

inline StepFunction breslow_cum_hazard(const Eigen::VectorXd& beta, const Dataset& data) {
    return breslow_cum_hazard(beta, data, data.spec);
}

inline CoxModel fit_cox(const Dataset& data, const FitOptions& opts = {}) {
    opts.validate();
    data.validate();
    const std::size_t events = data.n_events();
    const std::size_t p = data.spec.size();
    if (events == 0) throw FitError(FitFailure::NoEvents, "dataset has no events");

    const Eigen::MatrixXd raw = data.design();
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
        if ((raw.col(j).array() == raw(0, j)).all())
            throw FitError(FitFailure::DegenerateCovariate, "covariate '" + data.spec.name(static_cast<std::size_t>(j)) + "' is constant");
    }
    if (events < p) throw FitError(FitFailure::InsufficientEvents, "fewer events than covariates");

    // Centering leaves beta and the partial likelihood unchanged.
    detail::RiskSetData rs(data, data.spec);
    const Eigen::RowVectorXd means = rs.x.colwise().mean();
    rs.x.rowwise() -= means;

    const auto pp = static_cast<Eigen::Index>(p);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(pp);
    PartialLikelihood pl = detail::partial_likelihood(rs, beta);
    bool converged = false;

    for (int iter = 0; iter < opts.max_iter; ++iter) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(pl.information);
        bool ridged = false;
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0.0).any()) {
            Eigen::MatrixXd reg = pl.information;
            reg.diagonal().array() += opts.ridge_eps * (1.0 + pl.information.diagonal().array().abs());
            ldlt.compute(reg);
            ridged = true;
        }
        const Eigen::VectorXd step = ldlt.solve(pl.score);
        if (!step.allFinite()) break;

        const double max_score = pl.score.cwiseAbs().maxCoeff();
        const double max_step = step.cwiseAbs().maxCoeff();
        // A monotone likelihood keeps the Newton step near one while the score
        // decays, so both must be small.
        if (max_score < opts.tol && max_step < 1e-6) { converged = true; break; }
        if (!ridged && max_step < 1e-12 * (1.0 + beta.cwiseAbs().maxCoeff())) { converged = true; break; }

        double scale = 1.0;
        Eigen::VectorXd trial = beta + step;
        PartialLikelihood next = detail::partial_likelihood(rs, trial);
        int halvings = 0;
        while ((!std::isfinite(next.loglik) || next.loglik < pl.loglik) && halvings < opts.max_halvings) {
            scale *= 0.5;
            trial = beta + scale * step;
            next = detail::partial_likelihood(rs, trial);
            ++halvings;
        }
        if (!std::isfinite(next.loglik) || next.loglik < pl.loglik) {
            // No ascent possible from here: accept only if already stationary.
            // A diverging coefficient leaves the Newton step large.
            converged = max_score < std::sqrt(opts.tol) && max_step < 1e-3;
            break;
        }
        beta = trial;
        pl = std::move(next);
        if (beta.cwiseAbs().maxCoeff() > opts.beta_bound)
            throw FitError(FitFailure::NonConvergence, "|beta| exceeded bound (monotone likelihood)");
    }
    if (!converged) throw FitError(FitFailure::NonConvergence, "Newton-Raphson did not converge");

    Eigen::LDLT<Eigen::MatrixXd> ldlt(pl.information);
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(pp, pp));
    Eigen::VectorXd se = cov.diagonal().cwiseSqrt();
    if (!se.allFinite() || !(se.array() > 0.0).all())
        throw FitError(FitFailure::NonConvergence, "singular information at the optimum");

    CoxModel m;
    m.spec = data.spec;
    m.beta = beta;
    m.beta_se = se;
    m.baseline_cum_hazard = breslow_cum_hazard(beta, data);
    m.fit_period = data.period;
    return m;
}

inline double linear_predictor(const CoxModel& model, std::span<const double> x) {
    if (x.size() != model.spec.size()) throw DimensionError("covariate vector does not match model spec");
    return model.beta.dot(as_vector(x));
}

inline double predict_survival(const CoxModel& model, std::span<const double> x, double t) {
    const double eta = linear_predictor(model, x);
    const double h0 = model.baseline_cum_hazard.eval(t);
    return std::exp(-h0 * std::exp(eta));
}

}  // namespace dynsurv
