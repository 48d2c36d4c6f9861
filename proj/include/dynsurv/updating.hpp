#pragma once

// Updating strategies: no update, intercept recalibration, refitting and
// Bayesian updating with a forgetting factor.

#include "bayes.hpp"
#include "cox.hpp"

#include <charconv>
#include <optional>
#include <variant>

namespace dynsurv {

enum class StrategyKind {
    NoUpdate,
    RecalibrateOnce,
    RecalibrateQuarterly,
    RefitOnce,
    RefitQuarterly,
    BayesQuarterly,
};

struct UpdateStrategy {
    StrategyKind kind = StrategyKind::NoUpdate;
    double at = 0.0;          // one-time strategies: start of the analyst's data window, years
    double forgetting = 0.9;  // BayesQuarterly
    double window = 0.25;     // years of data per update

    bool one_time() const { return kind == StrategyKind::RecalibrateOnce || kind == StrategyKind::RefitOnce; }

    void validate() const {
        if (!(forgetting > 0.0 && forgetting <= 1.0)) throw DomainError("forgetting factor must lie in (0,1]");
        if (!(at >= 0.0 && at < 1.0)) throw DomainError("update time must lie in [0,1)");
        if (!(window > 0.0)) throw DomainError("window must be > 0");
    }

    // Stable identifier used in result files, e.g. "refit_once@0.46".
    std::string name() const {
        switch (kind) {
            case StrategyKind::NoUpdate: return "no_update";
            case StrategyKind::RecalibrateQuarterly: return "recal_quarterly";
            case StrategyKind::RefitQuarterly: return "refit_quarterly";
            case StrategyKind::BayesQuarterly:
                return forgetting == 0.9 ? "bayes_quarterly" : "bayes_quarterly@" + format_number(forgetting);
            case StrategyKind::RecalibrateOnce: return "recal_once@" + format_number(at);
            case StrategyKind::RefitOnce: return "refit_once@" + format_number(at);
        }
        return "unknown";
    }

    static UpdateStrategy parse(const std::string& text) {
        const auto at_pos = text.find('@');
        const std::string head = text.substr(0, at_pos);
        std::optional<double> arg;
        if (at_pos != std::string::npos) {
            double v = 0.0;
            const std::string tail = text.substr(at_pos + 1);
            auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), v);
            if (ec != std::errc() || ptr != tail.data() + tail.size())
                throw DomainError("bad strategy argument in '" + text + "'");
            arg = v;
        }
        UpdateStrategy s;
        if (head == "no_update") s.kind = StrategyKind::NoUpdate;
        else if (head == "recal_quarterly") s.kind = StrategyKind::RecalibrateQuarterly;
        else if (head == "refit_quarterly") s.kind = StrategyKind::RefitQuarterly;
        else if (head == "bayes_quarterly") { s.kind = StrategyKind::BayesQuarterly; if (arg) s.forgetting = *arg; }
        else if (head == "recal_once") { s.kind = StrategyKind::RecalibrateOnce; s.at = arg.value_or(0.0); }
        else if (head == "refit_once") { s.kind = StrategyKind::RefitOnce; s.at = arg.value_or(0.0); }
        else throw DomainError("unknown strategy '" + text + "'");
        if (arg && (head == "no_update" || head == "recal_quarterly" || head == "refit_quarterly"))
            throw DomainError("strategy '" + head + "' takes no argument");
        s.validate();
        return s;
    }

    static std::string format_number(double v) {
        char buf[32];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, ptr);
    }
};

struct Provenance {
    std::string strategy;
    int update_count = 0;
    bool retained_previous = false;  // last attempted update failed
    std::optional<FitFailure> last_failure;
};

struct AnyModel {
    std::variant<CoxModel, BayesPHModel> model;
    Provenance provenance;

    bool is_cox() const { return std::holds_alternative<CoxModel>(model); }
    bool is_bayes() const { return std::holds_alternative<BayesPHModel>(model); }
    const CoxModel& cox() const { return std::get<CoxModel>(model); }
    const BayesPHModel& bayes() const { return std::get<BayesPHModel>(model); }

    const CovariateSpec& spec() const {
        return std::visit([](const auto& m) -> const CovariateSpec& { return m.spec; }, model);
    }

    // Named log hazard ratio point estimates.
    std::vector<std::pair<std::string, double>> coefficients() const {
        std::vector<std::pair<std::string, double>> out;
        const auto& s = spec();
        for (std::size_t j = 0; j < s.size(); ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            out.emplace_back(s.name(j), is_cox() ? cox().beta[jj] : bayes().point_estimates[jj + 1]);
        }
        return out;
    }
};

inline AnyModel no_update(const AnyModel& model, const Dataset& /*data*/) { return model; }

// Breslow estimator on the new data with the old linear predictor as a fixed
// offset (coefficient one). Hazard ratios are unchanged.
inline CoxModel recalibrate_intercept(const CoxModel& model, const Dataset& data, double horizon) {
    if (!(horizon > 0.0)) throw DomainError("horizon must be > 0");
    if (!data.spec.covers(model.spec)) throw DimensionError("dataset lacks covariates of the model");
    if (data.n_events() == 0) throw FitError(FitFailure::NoEvents, "recalibration data has no events");
    const Eigen::VectorXd offset = data.design(model.spec) * model.beta;
    CoxModel out = model;
    out.baseline_cum_hazard = breslow_cum_hazard(Eigen::VectorXd(0), data, CovariateSpec{}, &offset);
    out.fit_period = data.period;
    return out;
}

inline AnyModel refit(const Dataset& data, const FitOptions& opts, const AnyModel& previous) {
    AnyModel out;
    try {
        out.model = fit_cox(data, opts);
    } catch (const FitError& e) {
        out = previous;
        out.provenance.retained_previous = true;
        out.provenance.last_failure = e.kind();
        return out;
    }
    out.provenance = previous.provenance;
    out.provenance.update_count += 1;
    out.provenance.retained_previous = false;
    out.provenance.last_failure.reset();
    return out;
}

inline BayesPHModel seed_bayes_from_cox(const CoxModel& model, const GaussianPrior& lambda_prior,
                                        double forgetting = 0.9) {
    lambda_prior.validate();
    if (lambda_prior.mean.size() != 1) throw DimensionError("lambda prior must be one-dimensional");
    if (model.beta_se.size() != model.beta.size() || model.beta.size() != static_cast<Eigen::Index>(model.spec.size()))
        throw FitError(FitFailure::SeedingError, "model lacks standard errors");
    if (!(model.beta_se.array() > 0.0).all() || !model.beta_se.allFinite())
        throw FitError(FitFailure::SeedingError, "model standard errors must be finite and > 0");
    if (!(forgetting > 0.0 && forgetting <= 1.0)) throw DomainError("forgetting factor must lie in (0,1]");

    const Eigen::Index p = model.beta.size();
    BayesPHModel b;
    b.spec = model.spec;
    b.mode.resize(p + 1);
    b.mode << lambda_prior.mean[0], model.beta;
    b.point_estimates = b.mode;
    Eigen::VectorXd var(p + 1);
    var << lambda_prior.sd[0] * lambda_prior.sd[0], model.beta_se.array().square().matrix();
    b.covariance = var.asDiagonal();
    b.fit_period = model.fit_period;
    b.forgetting = forgetting;
    b.updates = 0;
    return b;
}

// Prior for the next update: carried coefficients get N(estimate, sd^2/xi),
// coefficients new to `data` get N(0, new_coef_sd^2). A freshly seeded
// model's log-lambda prior is used as given.
inline GaussianPrior carry_forward_prior(const BayesPHModel& model, const CovariateSpec& data_spec,
                                         double new_coef_sd = 2.5) {
    if (!data_spec.covers(model.spec)) throw DimensionError("update data lacks covariates of the model");
    const double xi = model.forgetting;
    const Eigen::VectorXd sd = model.sd();
    const auto p = static_cast<Eigen::Index>(data_spec.size());
    GaussianPrior prior{Eigen::VectorXd(p + 1), Eigen::VectorXd(p + 1)};
    prior.mean[0] = model.point_estimates[0];
    prior.sd[0] = model.updates == 0 ? sd[0] : sd[0] / std::sqrt(xi);
    for (Eigen::Index j = 0; j < p; ++j) {
        if (auto idx = model.spec.index_of(data_spec.name(static_cast<std::size_t>(j)))) {
            const auto k = static_cast<Eigen::Index>(*idx) + 1;
            prior.mean[j + 1] = model.point_estimates[k];
            prior.sd[j + 1] = sd[k] / std::sqrt(xi);
        } else {
            prior.mean[j + 1] = 0.0;
            prior.sd[j + 1] = new_coef_sd;
        }
    }
    return prior;
}

inline BayesPHModel bayes_update(const BayesPHModel& model, const Dataset& data, const FitOptions& opts = {},
                                 double new_coef_sd = 2.5) {
    const GaussianPrior prior = carry_forward_prior(model, data.spec, new_coef_sd);
    BayesPHModel out = map_laplace(data, prior, opts, model.forgetting);
    out.updates = model.updates + 1;
    return out;
}

inline AnyModel apply_bayes_update(const AnyModel& current, const Dataset& data, double forgetting,
                                   const GaussianPrior& lambda_prior, const FitOptions& opts = {}) {
    AnyModel out = current;
    try {
        const BayesPHModel base = current.is_bayes() ? current.bayes()
                                                     : seed_bayes_from_cox(current.cox(), lambda_prior, forgetting);
        out.model = bayes_update(base, data, opts);
    } catch (const FitError& e) {
        out.provenance.retained_previous = true;
        out.provenance.last_failure = e.kind();
        return out;
    }
    out.provenance.update_count += 1;
    out.provenance.retained_previous = false;
    out.provenance.last_failure.reset();
    return out;
}

inline AnyModel apply_recalibration(const AnyModel& current, const Dataset& data, double horizon) {
    AnyModel out = current;
    try {
        out.model = recalibrate_intercept(current.cox(), data, horizon);
    } catch (const FitError& e) {
        out.provenance.retained_previous = true;
        out.provenance.last_failure = e.kind();
        return out;
    }
    out.provenance.update_count += 1;
    out.provenance.retained_previous = false;
    out.provenance.last_failure.reset();
    return out;
}

struct UpdateSettings {
    FitOptions fit;
    double horizon = 0.25;
    GaussianPrior lambda_prior{Eigen::VectorXd::Constant(1, 0.0), Eigen::VectorXd::Constant(1, 2.5)};
};

// One update of `current` with `data` according to the strategy's method.
inline AnyModel apply_update(const UpdateStrategy& strategy, const AnyModel& current, const Dataset& data,
                             const UpdateSettings& settings = {}) {
    switch (strategy.kind) {
        case StrategyKind::NoUpdate: return no_update(current, data);
        case StrategyKind::RecalibrateOnce:
        case StrategyKind::RecalibrateQuarterly: return apply_recalibration(current, data, settings.horizon);
        case StrategyKind::RefitOnce:
        case StrategyKind::RefitQuarterly: return refit(data, settings.fit, current);
        case StrategyKind::BayesQuarterly:
            return apply_bayes_update(current, data, strategy.forgetting, settings.lambda_prior, settings.fit);
    }
    return current;
}

}  // namespace dynsurv
