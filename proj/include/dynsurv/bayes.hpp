#pragma once

// Posterior inference for the exponential-baseline proportional hazards
// model: log posterior with derivatives, MAP + Laplace approximation, a
// random-walk Metropolis sampler used to validate the approximation, and
// posterior predictive survival.

#include "core.hpp"
#include "cox.hpp"

#include <array>
#include <random>

namespace dynsurv {

// Independent normal prior over (log_lambda, beta...).
struct GaussianPrior {
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;

    void validate() const {
        if (mean.size() != sd.size()) throw DimensionError("GaussianPrior: mean and sd differ in length");
        if (!(sd.array() > 0.0).all() || !sd.allFinite()) throw DomainError("GaussianPrior: sd must be > 0");
        if (!mean.allFinite()) throw DomainError("GaussianPrior: non-finite mean");
    }
};

struct SamplerDiagnostics {
    Eigen::VectorXd rhat;
    Eigen::VectorXd ess;
    double accepted_fraction = 0.0;
};

struct PosteriorSample {
    Eigen::MatrixXd draws;  // post-warmup draws of all chains, one per row
    SamplerDiagnostics diagnostics;
    bool convergence_warning = false;  // some rhat >= 1.1
};

struct LogPosteriorDerivatives {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

namespace detail {

// Design with a leading intercept column for log(lambda).
struct ExpPHData {
    Eigen::MatrixXd z;
    Eigen::VectorXd time;
    Eigen::VectorXd event;

    explicit ExpPHData(const Dataset& data) {
        const auto n = static_cast<Eigen::Index>(data.size());
        const auto p = static_cast<Eigen::Index>(data.spec.size());
        z.resize(n, p + 1);
        time.resize(n);
        event.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& r = data.records[static_cast<std::size_t>(i)];
            z(i, 0) = 1.0;
            for (Eigen::Index j = 0; j < p; ++j) z(i, j + 1) = r.covariates[static_cast<std::size_t>(j)];
            time[i] = r.time_observed;
            event[i] = r.event ? 1.0 : 0.0;
        }
    }

    Eigen::Index dim() const { return z.cols(); }
};

inline double log_prior(const Eigen::VectorXd& params, const GaussianPrior& prior) {
    return -0.5 * ((params - prior.mean).array() / prior.sd.array()).square().sum();
}

inline double log_posterior(const ExpPHData& d, const Eigen::VectorXd& params, const GaussianPrior& prior) {
    const Eigen::VectorXd lin = d.z * params;
    const double loglik = (d.event.array() * lin.array() - lin.array().exp() * d.time.array()).sum();
    return loglik + log_prior(params, prior);
}

inline LogPosteriorDerivatives derivatives(const ExpPHData& d, const Eigen::VectorXd& params,
                                           const GaussianPrior& prior) {
    const Eigen::VectorXd lin = d.z * params;
    const Eigen::VectorXd mu = lin.array().exp() * d.time.array();
    LogPosteriorDerivatives out;
    out.value = (d.event.array() * lin.array() - mu.array()).sum() + log_prior(params, prior);
    const Eigen::VectorXd prec = prior.sd.array().square().inverse();
    out.gradient = d.z.transpose() * (d.event - mu) - (params - prior.mean).cwiseProduct(prec);
    out.hessian = -(d.z.transpose() * mu.asDiagonal() * d.z);
    out.hessian.diagonal() -= prec;
    return out;
}

inline void check_dims(const Dataset& data, const GaussianPrior& prior) {
    prior.validate();
    if (prior.mean.size() != static_cast<Eigen::Index>(data.spec.size()) + 1)
        throw DimensionError("prior dimension must be 1 + number of covariates");
}

// Symmetric square root factor A with A A^T = cov; tolerates a singular cov.
inline Eigen::MatrixXd sqrt_factor(const Eigen::MatrixXd& cov) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal();
}

}  // namespace detail

inline double log_posterior(const Eigen::VectorXd& params, const Dataset& data, const GaussianPrior& prior) {
    detail::check_dims(data, prior);
    if (!params.allFinite() || params.size() != prior.mean.size())
        throw DomainError("log_posterior: params must be finite and match the prior");
    return detail::log_posterior(detail::ExpPHData(data), params, prior);
}

inline LogPosteriorDerivatives log_posterior_derivatives(const Eigen::VectorXd& params, const Dataset& data,
                                                         const GaussianPrior& prior) {
    detail::check_dims(data, prior);
    return detail::derivatives(detail::ExpPHData(data), params, prior);
}

// Newton ascent from the prior mean; covariance is the inverse negative
// Hessian at the mode.
inline BayesPHModel map_laplace(const Dataset& data, const GaussianPrior& prior, const FitOptions& opts = {},
                                double forgetting = 1.0) {
    opts.validate();
    data.validate();
    detail::check_dims(data, prior);
    const detail::ExpPHData d(data);

    Eigen::VectorXd theta = prior.mean;
    auto cur = detail::derivatives(d, theta, prior);
    bool converged = false;
    for (int iter = 0; iter < opts.max_iter; ++iter) {
        Eigen::LLT<Eigen::MatrixXd> llt(-cur.hessian);
        if (llt.info() != Eigen::Success) break;
        const Eigen::VectorXd step = llt.solve(cur.gradient);
        if (!step.allFinite()) break;
        // Newton decrement: the predicted gain of the full step.
        const double decrement = cur.gradient.dot(step);
        if (decrement < 1e-12 * (1.0 + std::abs(cur.value)) ||
            step.cwiseAbs().maxCoeff() < 1e-10 * (1.0 + theta.cwiseAbs().maxCoeff())) {
            converged = true;
            break;
        }
        double scale = 1.0;
        Eigen::VectorXd trial = theta + step;
        double value = detail::log_posterior(d, trial, prior);
        int halvings = 0;
        while ((!std::isfinite(value) || value < cur.value) && halvings < opts.max_halvings) {
            scale *= 0.5;
            trial = theta + scale * step;
            value = detail::log_posterior(d, trial, prior);
            ++halvings;
        }
        if (!std::isfinite(value) || value < cur.value) {
            converged = decrement < 1e-8 * (1.0 + std::abs(cur.value));
            break;
        }
        theta = trial;
        cur = detail::derivatives(d, theta, prior);
    }
    if (!converged || !theta.allFinite())
        throw FitError(FitFailure::NonConvergence, "posterior mode search did not converge");

    const auto dim = theta.size();
    Eigen::LLT<Eigen::MatrixXd> llt(-cur.hessian);
    Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(dim, dim));
    cov = 0.5 * (cov + cov.transpose());

    BayesPHModel m;
    m.spec = data.spec;
    m.mode = theta;
    m.covariance = cov;
    m.point_estimates = theta;
    m.fit_period = data.period;
    m.forgetting = forgetting;
    return m;
}

namespace detail {

inline double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
    // Each chain is split in half; returns the potential scale reduction.
    std::vector<Eigen::VectorXd> halves;
    for (const auto& c : chains) {
        const Eigen::Index h = c.size() / 2;
        halves.emplace_back(c.head(h));
        halves.emplace_back(c.segment(h, h));
    }
    const double m = static_cast<double>(halves.size());
    const double n = static_cast<double>(halves.front().size());
    Eigen::VectorXd means(static_cast<Eigen::Index>(halves.size()));
    double w = 0.0;
    for (std::size_t k = 0; k < halves.size(); ++k) {
        means[static_cast<Eigen::Index>(k)] = halves[k].mean();
        w += (halves[k].array() - halves[k].mean()).square().sum() / (n - 1.0);
    }
    w /= m;
    const double b = n * (means.array() - means.mean()).square().sum() / (m - 1.0);
    const double var_plus = (n - 1.0) / n * w + b / n;
    return w > 0.0 ? std::sqrt(var_plus / w) : 1.0;
}

// Geyer initial-positive-sequence estimate summed over chains.
inline double effective_sample_size(const std::vector<Eigen::VectorXd>& chains) {
    double total = 0.0;
    for (const auto& c : chains) {
        const Eigen::Index n = c.size();
        const Eigen::VectorXd x = c.array() - c.mean();
        const double var = x.squaredNorm() / static_cast<double>(n);
        if (var <= 0.0) { total += static_cast<double>(n); continue; }
        auto rho = [&](Eigen::Index lag) {
            return x.head(n - lag).dot(x.tail(n - lag)) / (static_cast<double>(n) * var);
        };
        double tau = -1.0;
        for (Eigen::Index lag = 0; lag + 1 < n; lag += 2) {
            const double pair = rho(lag) + rho(lag + 1);
            if (pair <= 0.0) break;
            tau += 2.0 * pair;
        }
        total += static_cast<double>(n) / std::max(tau, 1e-12);
    }
    return total;
}

}  // namespace detail

// Adaptive random-walk Metropolis. The first half of each chain is warmup
// during which the proposal covariance adapts to the chain history; only the
// second half is returned. Chain c is seeded from (seed, c).
inline PosteriorSample sample_posterior(const Dataset& data, const GaussianPrior& prior, int n_chains,
                                        int n_iter, std::uint64_t seed) {
    detail::check_dims(data, prior);
    if (n_chains < 2) throw DomainError("sample_posterior: need at least 2 chains for rhat");
    if (n_iter < 20) throw DomainError("sample_posterior: n_iter too small");
    const detail::ExpPHData d(data);
    const Eigen::Index dim = d.dim();
    const int warmup = n_iter / 2;
    const int kept = n_iter - warmup;

    // Start near the posterior mode found by a crude coordinate search so the
    // chains do not depend on the Laplace machinery.
    Eigen::VectorXd centre = prior.mean;
    {
        double step = 1.0;
        double best = detail::log_posterior(d, centre, prior);
        while (step > 1e-4) {
            bool improved = false;
            for (Eigen::Index j = 0; j < dim; ++j) {
                for (double dir : {1.0, -1.0}) {
                    Eigen::VectorXd trial = centre;
                    trial[j] += dir * step;
                    const double v = detail::log_posterior(d, trial, prior);
                    if (v > best) { best = v; centre = trial; improved = true; }
                }
            }
            if (!improved) step *= 0.5;
        }
    }

    std::vector<std::vector<Eigen::VectorXd>> per_param(static_cast<std::size_t>(dim));
    Eigen::MatrixXd draws(static_cast<Eigen::Index>(kept) * n_chains, dim);
    long accepted = 0;
    long proposed = 0;

    for (int c = 0; c < n_chains; ++c) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(c), 0x5eedu};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> norm(0.0, 1.0);
        std::uniform_real_distribution<double> unif(0.0, 1.0);

        Eigen::VectorXd cur = centre;
        for (Eigen::Index j = 0; j < dim; ++j) cur[j] += 0.1 * norm(rng);
        double cur_lp = detail::log_posterior(d, cur, prior);

        Eigen::MatrixXd chol = 0.1 * Eigen::MatrixXd::Identity(dim, dim);
        double log_scale = 0.0;
        Eigen::VectorXd run_mean = cur;
        Eigen::MatrixXd run_m2 = Eigen::MatrixXd::Zero(dim, dim);
        std::vector<Eigen::VectorXd> trace(static_cast<std::size_t>(dim), Eigen::VectorXd(kept));

        for (int it = 0; it < n_iter; ++it) {
            Eigen::VectorXd z(dim);
            for (Eigen::Index j = 0; j < dim; ++j) z[j] = norm(rng);
            const Eigen::VectorXd prop = cur + std::exp(log_scale) * (chol * z);
            const double prop_lp = detail::log_posterior(d, prop, prior);
            const bool accept = std::isfinite(prop_lp) && std::log(unif(rng)) < prop_lp - cur_lp;
            if (accept) { cur = prop; cur_lp = prop_lp; }

            if (it < warmup) {
                // Robbins-Monro scale tuning towards ~0.234 acceptance.
                log_scale += (accept ? 0.766 : -0.234) / std::sqrt(1.0 + it);
                const double k = static_cast<double>(it + 2);
                const Eigen::VectorXd delta = cur - run_mean;
                run_mean += delta / k;
                run_m2 += delta * (cur - run_mean).transpose();
                if (it >= 200 && it % 100 == 0) {
                    Eigen::MatrixXd emp = run_m2 / (k - 1.0);
                    emp = 0.5 * (emp + emp.transpose());
                    emp.diagonal().array() += 1e-10;
                    Eigen::LLT<Eigen::MatrixXd> llt(emp * (2.38 * 2.38 / static_cast<double>(dim)));
                    if (llt.info() == Eigen::Success) {
                        chol = llt.matrixL();
                        log_scale = 0.0;
                    }
                }
            } else {
                ++proposed;
                if (accept) ++accepted;
                const int row = it - warmup;
                draws.row(static_cast<Eigen::Index>(c) * kept + row) = cur.transpose();
                for (Eigen::Index j = 0; j < dim; ++j) trace[static_cast<std::size_t>(j)][row] = cur[j];
            }
        }
        for (Eigen::Index j = 0; j < dim; ++j)
            per_param[static_cast<std::size_t>(j)].push_back(std::move(trace[static_cast<std::size_t>(j)]));
    }

    PosteriorSample out;
    out.draws = std::move(draws);
    out.diagnostics.rhat.resize(dim);
    out.diagnostics.ess.resize(dim);
    for (Eigen::Index j = 0; j < dim; ++j) {
        out.diagnostics.rhat[j] = detail::split_rhat(per_param[static_cast<std::size_t>(j)]);
        out.diagnostics.ess[j] = detail::effective_sample_size(per_param[static_cast<std::size_t>(j)]);
    }
    out.diagnostics.accepted_fraction = proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
    out.convergence_warning = (out.diagnostics.rhat.array() >= 1.1).any();
    return out;
}

// Parameter draws from the Gaussian approximation, reused across subjects.
class PosteriorDraws {
public:
    PosteriorDraws(const BayesPHModel& model, int n_draws, std::uint64_t seed) {
        if (n_draws < 1) throw DomainError("n_draws must be >= 1");
        const Eigen::Index dim = model.dim();
        const Eigen::MatrixXd a = detail::sqrt_factor(model.covariance);
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xd7a3u};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> norm(0.0, 1.0);
        lambda_.resize(n_draws);
        beta_.resize(n_draws, dim - 1);
        Eigen::VectorXd z(dim);
        for (int k = 0; k < n_draws; ++k) {
            for (Eigen::Index j = 0; j < dim; ++j) z[j] = norm(rng);
            const Eigen::VectorXd theta = model.mode + a * z;
            lambda_[k] = std::exp(theta[0]);
            beta_.row(k) = theta.tail(dim - 1).transpose();
        }
    }

    Eigen::Index size() const { return lambda_.size(); }

    // Mean over draws of exp(-lambda_k t exp(beta_k' x)).
    double survival(const Eigen::VectorXd& x, double t) const {
        if (t < 0.0 || !std::isfinite(t)) throw DomainError("survival: t must be finite and >= 0");
        if (x.size() != beta_.cols()) throw DimensionError("covariate vector does not match model spec");
        if (t == 0.0) return 1.0;
        const Eigen::ArrayXd rate = lambda_.array() * (beta_ * x).array().exp();
        return (-rate * t).exp().mean();
    }

    // Survival at several times with one pass over the draws.
    template <std::size_t N>
    std::array<double, N> survival(const Eigen::VectorXd& x, const std::array<double, N>& ts) const {
        const Eigen::ArrayXd rate = lambda_.array() * (beta_ * x).array().exp();
        std::array<double, N> out{};
        for (std::size_t k = 0; k < N; ++k) out[k] = ts[k] == 0.0 ? 1.0 : (-rate * ts[k]).exp().mean();
        return out;
    }

private:
    Eigen::VectorXd lambda_;
    Eigen::MatrixXd beta_;
};

inline double posterior_predictive_survival(const BayesPHModel& model, std::span<const double> x, double t,
                                            int n_draws, std::uint64_t seed) {
    if (n_draws < 1) throw DomainError("n_draws must be >= 1");
    if (!(t >= 0.0) || !std::isfinite(t)) throw DomainError("t must be finite and >= 0");
    if (x.size() != model.spec.size()) throw DimensionError("covariate vector does not match model spec");
    if (t == 0.0) return 1.0;
    return PosteriorDraws(model, n_draws, seed).survival(Eigen::VectorXd(as_vector(x)), t);
}

// Plug-in survival at the point estimates.
inline double plugin_survival(const BayesPHModel& model, std::span<const double> x, double t) {
    const double eta = model.beta().dot(as_vector(x));
    return std::exp(-std::exp(model.log_lambda()) * t * std::exp(eta));
}

}  // namespace dynsurv
