#pragma once

// File formats: comma-separated datasets, JSON model files and JSON
// scenario configuration.

#include "simulation.hpp"
#include "updating.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace dynsurv {

using json = nlohmann::json;

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "NA";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
    if (s == "NA" || s == "nan" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError("malformed number '" + std::string(s) + "'");
    return v;
}

// =============================================================================
// Dataset CSV: id,time,event,<covariates...>
// =============================================================================

inline void write_dataset_csv(std::ostream& os, const Dataset& data) {
    os << "id,time,event";
    for (const auto& n : data.spec.names()) os << ',' << n;
    os << '\n';
    for (const auto& r : data.records) {
        os << r.id.value << ',' << format_double(r.time_observed) << ',' << (r.event ? 1 : 0);
        for (double x : r.covariates) os << ',' << format_double(x);
        os << '\n';
    }
}

inline void write_dataset_csv(const std::string& path, const Dataset& data) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write_dataset_csv(os, data);
    if (!os) throw IoError("write failed for '" + path + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace detail

// Covariate kinds are inferred: a column holding only 0/1 is binary.
inline Dataset read_dataset_csv(std::istream& is, int period = 0) {
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty dataset file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "id" || header[1] != "time" || header[2] != "event")
        throw IoError("dataset header must start with id,time,event");
    const std::vector<std::string> names(header.begin() + 3, header.end());

    Dataset d;
    d.period = period;
    std::vector<bool> binary(names.size(), true);
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != header.size()) throw IoError("line " + std::to_string(lineno) + ": wrong field count");
        SubjectRecord r;
        std::uint64_t id = 0;
        auto [ptr, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), id);
        if (ec != std::errc() || ptr != f[0].data() + f[0].size())
            throw IoError("line " + std::to_string(lineno) + ": bad id");
        r.id = SubjectId{id};
        r.time_observed = parse_double(f[1]);
        if (f[2] != "0" && f[2] != "1") throw IoError("line " + std::to_string(lineno) + ": event must be 0 or 1");
        r.event = f[2] == "1";
        r.entry_period = period;
        for (std::size_t j = 0; j < names.size(); ++j) {
            const double x = parse_double(f[3 + j]);
            if (!std::isfinite(x)) throw IoError("line " + std::to_string(lineno) + ": missing covariate");
            if (x != 0.0 && x != 1.0) binary[j] = false;
            r.covariates.push_back(x);
        }
        d.records.push_back(std::move(r));
    }
    std::vector<CovariateKind> kinds;
    for (bool b : binary) kinds.push_back(b ? CovariateKind::Binary : CovariateKind::Continuous);
    d.spec = CovariateSpec(names, kinds);
    d.validate();
    return d;
}

inline Dataset read_dataset_csv(const std::string& path, int period = 0) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    return read_dataset_csv(is, period);
}

// =============================================================================
// Model files (JSON)
// =============================================================================

namespace detail {

inline json vec_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Eigen::VectorXd vec_from_json(const json& a) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a.at(i).get<double>();
    return v;
}

inline json spec_to_json(const CovariateSpec& s) {
    json kinds = json::array();
    for (auto k : s.kinds()) kinds.push_back(k == CovariateKind::Binary ? "binary" : "continuous");
    return {{"names", s.names()}, {"kinds", kinds}};
}

inline CovariateSpec spec_from_json(const json& j) {
    std::vector<CovariateKind> kinds;
    for (const auto& k : j.at("kinds")) {
        const auto s = k.get<std::string>();
        if (s == "binary") kinds.push_back(CovariateKind::Binary);
        else if (s == "continuous") kinds.push_back(CovariateKind::Continuous);
        else throw IoError("unknown covariate kind '" + s + "'");
    }
    return CovariateSpec(j.at("names").get<std::vector<std::string>>(), kinds);
}

inline json step_to_json(const StepFunction& f) {
    return {{"role", f.role() == StepRole::CumulativeHazard ? "cumulative_hazard" : "survival"},
            {"knots", f.knots()},
            {"values", f.values()}};
}

inline StepFunction step_from_json(const json& j) {
    const auto role = j.at("role").get<std::string>();
    if (role != "cumulative_hazard" && role != "survival") throw IoError("unknown step function role '" + role + "'");
    return StepFunction(role == "survival" ? StepRole::Survival : StepRole::CumulativeHazard,
                        j.at("knots").get<std::vector<double>>(), j.at("values").get<std::vector<double>>());
}

}  // namespace detail

inline json to_json(const CoxModel& m) {
    return {{"type", "cox"},
            {"spec", detail::spec_to_json(m.spec)},
            {"beta", detail::vec_to_json(m.beta)},
            {"beta_se", detail::vec_to_json(m.beta_se)},
            {"baseline_cum_hazard", detail::step_to_json(m.baseline_cum_hazard)},
            {"fit_period", m.fit_period}};
}

inline json to_json(const BayesPHModel& m) {
    json cov = json::array();
    for (Eigen::Index i = 0; i < m.covariance.rows(); ++i) cov.push_back(detail::vec_to_json(m.covariance.row(i).transpose()));
    return {{"type", "bayes_ph"},
            {"spec", detail::spec_to_json(m.spec)},
            {"mode", detail::vec_to_json(m.mode)},
            {"covariance", cov},
            {"point_estimates", detail::vec_to_json(m.point_estimates)},
            {"fit_period", m.fit_period},
            {"forgetting", m.forgetting},
            {"updates", m.updates}};
}

inline json to_json(const AnyModel& m) {
    json j = std::visit([](const auto& x) { return to_json(x); }, m.model);
    json prov = {{"strategy", m.provenance.strategy},
                 {"update_count", m.provenance.update_count},
                 {"retained_previous", m.provenance.retained_previous}};
    if (m.provenance.last_failure) prov["last_failure"] = to_string(*m.provenance.last_failure);
    j["provenance"] = prov;
    return j;
}

inline CoxModel cox_from_json(const json& j) {
    CoxModel m;
    m.spec = detail::spec_from_json(j.at("spec"));
    m.beta = detail::vec_from_json(j.at("beta"));
    m.beta_se = detail::vec_from_json(j.at("beta_se"));
    m.baseline_cum_hazard = detail::step_from_json(j.at("baseline_cum_hazard"));
    m.fit_period = j.at("fit_period").get<int>();
    m.validate();
    return m;
}

inline BayesPHModel bayes_from_json(const json& j) {
    BayesPHModel m;
    m.spec = detail::spec_from_json(j.at("spec"));
    m.mode = detail::vec_from_json(j.at("mode"));
    const auto& cov = j.at("covariance");
    m.covariance.resize(static_cast<Eigen::Index>(cov.size()), static_cast<Eigen::Index>(cov.size()));
    for (std::size_t i = 0; i < cov.size(); ++i) {
        if (cov[i].size() != cov.size()) throw IoError("covariance must be square");
        m.covariance.row(static_cast<Eigen::Index>(i)) = detail::vec_from_json(cov[i]).transpose();
    }
    m.point_estimates = detail::vec_from_json(j.at("point_estimates"));
    m.fit_period = j.at("fit_period").get<int>();
    m.forgetting = j.at("forgetting").get<double>();
    m.updates = j.value("updates", 0);
    m.validate();
    return m;
}

inline AnyModel model_from_json(const json& j) {
    AnyModel m;
    const auto type = j.at("type").get<std::string>();
    if (type == "cox") m.model = cox_from_json(j);
    else if (type == "bayes_ph") m.model = bayes_from_json(j);
    else throw IoError("unknown model type '" + type + "'");
    if (j.contains("provenance")) {
        const auto& p = j["provenance"];
        m.provenance.strategy = p.value("strategy", "");
        m.provenance.update_count = p.value("update_count", 0);
        m.provenance.retained_previous = p.value("retained_previous", false);
        if (p.contains("last_failure")) {
            const auto s = p["last_failure"].get<std::string>();
            for (auto f : {FitFailure::NoEvents, FitFailure::DegenerateCovariate, FitFailure::InsufficientEvents,
                           FitFailure::NonConvergence, FitFailure::SeedingError})
                if (s == to_string(f)) m.provenance.last_failure = f;
        }
    }
    return m;
}

inline void write_model(const std::string& path, const AnyModel& m) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << to_json(m).dump(2) << '\n';
    if (!os) throw IoError("write failed for '" + path + "'");
}

inline AnyModel read_model(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    try {
        return model_from_json(json::parse(is));
    } catch (const json::exception& e) {
        throw IoError("malformed model file '" + path + "': " + e.what());
    }
}

// =============================================================================
// Scenario configuration
// =============================================================================

inline json to_json(const ScenarioConfig& c) {
    return {{"name", to_string(c.name)},
            {"cohort_style", to_string(c.cohort_style)},
            {"n_periods", c.n_periods},
            {"period_length", c.period_length},
            {"horizon", c.horizon},
            {"dev_followup", c.dev_followup},
            {"admin_censor", c.admin_censor},
            {"n_dev", c.n_dev},
            {"n_period", c.n_period},
            {"entries_per_period", c.entries_per_period},
            {"annual_event_rates", c.annual_event_rates},
            {"lambda_schedule", c.lambda_schedule},
            {"age_min", c.age_min},
            {"age_max", c.age_max},
            {"prog_mean", c.prog_mean},
            {"prog_sd", c.prog_sd},
            {"comorbidity_prevalence", c.comorbidity_prevalence},
            {"rare_factor", c.rare_factor},
            {"rare_age_threshold", c.rare_age_threshold},
            {"rare_prevalence", c.rare_prevalence},
            {"beta_age", c.beta_age},
            {"beta_prog", c.beta_prog},
            {"beta_comorbidity", c.beta_comorbidity},
            {"beta_treatment", c.beta_treatment},
            {"beta_interaction", c.beta_interaction},
            {"treatment", c.treatment},
            {"treatment_start", c.treatment_start},
            {"rollout_age_thresholds", c.rollout_age_thresholds},
            {"uptake", c.uptake},
            {"comorbidity_eligible", c.comorbidity_eligible},
            {"interaction", c.interaction}};
}

// Scenario defaults overlaid with the keys present in `j`. The hazard
// schedule is re-solved unless `lambda_schedule` is given explicitly.
inline ScenarioConfig scenario_from_json(const json& j, std::optional<ScenarioName> name = std::nullopt,
                                         std::optional<CohortStyle> style = std::nullopt) {
    try {
        const ScenarioName n = name ? *name : parse_scenario(j.value("name", std::string("decreasing_events")));
        const CohortStyle s = style ? *style : parse_cohort_style(j.value("cohort_style", std::string("open")));
        ScenarioConfig c = make_scenario(n, s);
        static const std::vector<std::string> known = [] {
            std::vector<std::string> k;
            const json defaults = to_json(ScenarioConfig{});
            for (auto& [key, _] : defaults.items()) k.push_back(key);
            return k;
        }();
        for (auto& [key, _] : j.items())
            if (std::find(known.begin(), known.end(), key) == known.end())
                throw ConfigError("unknown scenario key '" + key + "'");
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("n_periods", c.n_periods);
        get("period_length", c.period_length);
        get("horizon", c.horizon);
        get("dev_followup", c.dev_followup);
        get("admin_censor", c.admin_censor);
        get("n_dev", c.n_dev);
        get("n_period", c.n_period);
        get("entries_per_period", c.entries_per_period);
        get("annual_event_rates", c.annual_event_rates);
        get("age_min", c.age_min);
        get("age_max", c.age_max);
        get("prog_mean", c.prog_mean);
        get("prog_sd", c.prog_sd);
        get("comorbidity_prevalence", c.comorbidity_prevalence);
        get("rare_factor", c.rare_factor);
        get("rare_age_threshold", c.rare_age_threshold);
        get("rare_prevalence", c.rare_prevalence);
        get("beta_age", c.beta_age);
        get("beta_prog", c.beta_prog);
        get("beta_comorbidity", c.beta_comorbidity);
        get("beta_treatment", c.beta_treatment);
        get("beta_interaction", c.beta_interaction);
        get("treatment", c.treatment);
        get("treatment_start", c.treatment_start);
        get("rollout_age_thresholds", c.rollout_age_thresholds);
        get("uptake", c.uptake);
        get("comorbidity_eligible", c.comorbidity_eligible);
        get("interaction", c.interaction);
        if (j.contains("lambda_schedule") && !j.at("lambda_schedule").empty()) {
            get("lambda_schedule", c.lambda_schedule);
        } else {
            if (c.annual_event_rates.size() != static_cast<std::size_t>(c.n_periods))
                throw ConfigError("annual_event_rates must have n_periods entries");
            solve_lambda_schedule(c);
        }
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario config: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("scenario config: ") + e.what());
    }
}

}  // namespace dynsurv
