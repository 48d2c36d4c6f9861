#pragma once

// Shared domain types: covariate specs, subject records, datasets, step
// functions and the two fitted model families.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace dynsurv {

// =============================================================================
// Errors
// =============================================================================

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

enum class FitFailure {
    NoEvents,
    DegenerateCovariate,
    InsufficientEvents,
    NonConvergence,
    SeedingError,
};

inline const char* to_string(FitFailure f) {
    switch (f) {
        case FitFailure::NoEvents: return "NoEvents";
        case FitFailure::DegenerateCovariate: return "DegenerateCovariate";
        case FitFailure::InsufficientEvents: return "InsufficientEvents";
        case FitFailure::NonConvergence: return "NonConvergence";
        case FitFailure::SeedingError: return "SeedingError";
    }
    return "Unknown";
}

// Any failure that the harness answers by retaining the previous model.
class FitError : public Error {
public:
    FitError(FitFailure kind, const std::string& what)
        : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
    FitFailure kind() const noexcept { return kind_; }

private:
    FitFailure kind_;
};

// =============================================================================
// Covariates and records
// =============================================================================

enum class CovariateKind { Continuous, Binary };

class CovariateSpec {
public:
    CovariateSpec() = default;

    CovariateSpec(std::vector<std::string> names, std::vector<CovariateKind> kinds)
        : names_(std::move(names)), kinds_(std::move(kinds)) {
        if (names_.size() != kinds_.size())
            throw DimensionError("CovariateSpec: names and kinds differ in length");
        std::unordered_set<std::string> seen;
        for (const auto& n : names_) {
            if (n.empty()) throw Error("CovariateSpec: empty covariate name");
            if (!seen.insert(n).second) throw Error("CovariateSpec: duplicate name '" + n + "'");
        }
    }

    std::size_t size() const noexcept { return names_.size(); }
    bool empty() const noexcept { return names_.empty(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::vector<CovariateKind>& kinds() const noexcept { return kinds_; }
    const std::string& name(std::size_t j) const { return names_.at(j); }
    CovariateKind kind(std::size_t j) const { return kinds_.at(j); }

    std::optional<std::size_t> index_of(const std::string& name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) return std::nullopt;
        return static_cast<std::size_t>(it - names_.begin());
    }

    bool contains(const std::string& name) const { return index_of(name).has_value(); }

    // True when every covariate of `other` is present here (order free).
    bool covers(const CovariateSpec& other) const {
        return std::all_of(other.names_.begin(), other.names_.end(),
                           [&](const std::string& n) { return contains(n); });
    }

    // Column positions of `sub`'s covariates inside this spec.
    std::vector<std::size_t> positions_of(const CovariateSpec& sub) const {
        std::vector<std::size_t> pos;
        pos.reserve(sub.size());
        for (const auto& n : sub.names_) {
            auto idx = index_of(n);
            if (!idx) throw DimensionError("covariate '" + n + "' missing from dataset spec");
            pos.push_back(*idx);
        }
        return pos;
    }

    bool operator==(const CovariateSpec&) const = default;

private:
    std::vector<std::string> names_;
    std::vector<CovariateKind> kinds_;
};

struct SubjectId {
    std::uint64_t value = 0;
    auto operator<=>(const SubjectId&) const = default;
};

struct SubjectRecord {
    SubjectId id;
    std::vector<double> covariates;
    double time_observed = 0.0;  // years since this record's origin
    bool event = false;
    int entry_period = 0;
};

struct Dataset {
    CovariateSpec spec;
    std::vector<SubjectRecord> records;
    int period = 0;

    std::size_t size() const noexcept { return records.size(); }

    std::size_t n_events() const {
        return static_cast<std::size_t>(std::count_if(
            records.begin(), records.end(), [](const SubjectRecord& r) { return r.event; }));
    }

    void validate() const {
        for (const auto& r : records) {
            if (r.covariates.size() != spec.size())
                throw DimensionError("record covariate count does not match spec");
            if (!std::isfinite(r.time_observed) || r.time_observed < 0.0)
                throw DomainError("time_observed must be finite and non-negative");
        }
    }

    // n x p matrix of the covariates named in `target`, in target order.
    Eigen::MatrixXd design(const CovariateSpec& target) const {
        const auto pos = spec.positions_of(target);
        Eigen::MatrixXd x(records.size(), target.size());
        for (std::size_t i = 0; i < records.size(); ++i)
            for (std::size_t j = 0; j < pos.size(); ++j) x(i, j) = records[i].covariates[pos[j]];
        return x;
    }

    Eigen::MatrixXd design() const { return design(spec); }
};

// =============================================================================
// Step functions
// =============================================================================

enum class StepRole { CumulativeHazard, Survival };

// Right-continuous piecewise-constant function; jumps at knots.
class StepFunction {
public:
    StepFunction() = default;

    StepFunction(StepRole role, std::vector<double> knots, std::vector<double> values)
        : role_(role), knots_(std::move(knots)), values_(std::move(values)) {
        if (knots_.size() != values_.size())
            throw DimensionError("StepFunction: knots and values differ in length");
        for (std::size_t k = 0; k < knots_.size(); ++k) {
            if (!std::isfinite(knots_[k]) || !std::isfinite(values_[k]))
                throw DomainError("StepFunction: non-finite knot or value");
            if (k > 0 && !(knots_[k] > knots_[k - 1]))
                throw DomainError("StepFunction: knots must be strictly increasing");
        }
        double prev = initial_value();
        for (double v : values_) {
            if (role_ == StepRole::CumulativeHazard) {
                if (v < prev || v < 0.0) throw DomainError("cumulative hazard must be non-decreasing and >= 0");
            } else {
                if (v > prev || v < 0.0 || v > 1.0) throw DomainError("survival function must be non-increasing in [0,1]");
            }
            prev = v;
        }
    }

    static StepFunction zero_hazard() { return StepFunction(StepRole::CumulativeHazard, {}, {}); }

    StepRole role() const noexcept { return role_; }
    const std::vector<double>& knots() const noexcept { return knots_; }
    const std::vector<double>& values() const noexcept { return values_; }
    bool is_flat() const noexcept { return knots_.empty(); }

    double initial_value() const noexcept { return role_ == StepRole::CumulativeHazard ? 0.0 : 1.0; }

    double operator()(double t) const { return eval(t); }

    double eval(double t) const {
        check_time(t);
        auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
        if (it == knots_.begin()) return initial_value();
        return values_[static_cast<std::size_t>(it - knots_.begin()) - 1];
    }

    // Left limit f(t-).
    double eval_left(double t) const {
        check_time(t);
        auto it = std::lower_bound(knots_.begin(), knots_.end(), t);
        if (it == knots_.begin()) return initial_value();
        return values_[static_cast<std::size_t>(it - knots_.begin()) - 1];
    }

    bool operator==(const StepFunction&) const = default;

private:
    static void check_time(double t) {
        if (!std::isfinite(t)) throw DomainError("StepFunction: non-finite time");
        if (t < 0.0) throw DomainError("StepFunction: negative time");
    }

    StepRole role_ = StepRole::CumulativeHazard;
    std::vector<double> knots_;
    std::vector<double> values_;
};

inline double step_eval(const StepFunction& f, double t) { return f.eval(t); }

// =============================================================================
// Models
// =============================================================================

struct CoxModel {
    CovariateSpec spec;
    Eigen::VectorXd beta;
    Eigen::VectorXd beta_se;
    StepFunction baseline_cum_hazard;
    int fit_period = 0;

    void validate() const {
        const auto p = static_cast<Eigen::Index>(spec.size());
        if (beta.size() != p || beta_se.size() != p)
            throw DimensionError("CoxModel: beta/beta_se/spec lengths disagree");
        for (Eigen::Index j = 0; j < p; ++j)
            if (!(beta_se[j] > 0.0)) throw DomainError("CoxModel: beta_se entries must be > 0");
        if (baseline_cum_hazard.role() != StepRole::CumulativeHazard)
            throw DomainError("CoxModel: baseline must have cumulative-hazard role");
    }
};

// Exponential-baseline PH posterior summary. Coordinate 0 is log(lambda),
// coordinates 1..p follow `spec`.
struct BayesPHModel {
    CovariateSpec spec;
    Eigen::VectorXd mode;
    Eigen::MatrixXd covariance;
    Eigen::VectorXd point_estimates;
    int fit_period = 0;
    double forgetting = 1.0;
    int updates = 0;  // posterior updates absorbed since seeding

    Eigen::Index dim() const { return mode.size(); }
    double log_lambda() const { return point_estimates[0]; }
    Eigen::VectorXd beta() const { return point_estimates.tail(point_estimates.size() - 1); }
    Eigen::VectorXd sd() const { return covariance.diagonal().cwiseSqrt(); }

    void validate() const {
        const auto d = static_cast<Eigen::Index>(spec.size()) + 1;
        if (mode.size() != d || point_estimates.size() != d || covariance.rows() != d ||
            covariance.cols() != d)
            throw DimensionError("BayesPHModel: dimensions disagree with spec");
        if (!(forgetting > 0.0 && forgetting <= 1.0))
            throw DomainError("BayesPHModel: forgetting must lie in (0,1]");
        if (!covariance.isApprox(covariance.transpose(), 1e-12))
            throw DomainError("BayesPHModel: covariance not symmetric");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() <= 0.0)
            throw DomainError("BayesPHModel: covariance not positive definite");
    }
};

struct SurvivalPrediction {
    SubjectId subject_id;
    double horizon = 0.0;
    double survival_prob = 1.0;
    double linear_predictor = 0.0;
};

// Covariates of `rec` taken at `positions` (see CovariateSpec::positions_of).
inline Eigen::VectorXd project(const SubjectRecord& rec, const std::vector<std::size_t>& positions) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(positions.size()));
    for (std::size_t j = 0; j < positions.size(); ++j)
        x[static_cast<Eigen::Index>(j)] = rec.covariates[positions[j]];
    return x;
}

inline Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> x) {
    return {x.data(), static_cast<Eigen::Index>(x.size())};
}

}  // namespace dynsurv
