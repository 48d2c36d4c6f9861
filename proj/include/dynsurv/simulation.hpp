#pragma once

// Data-generating mechanisms for the updating study: development cohort,
// open-cohort and new-cohorts period data, treatment rollout, rare risk
// factor, exponential event times and administrative censoring.

#include "core.hpp"

#include <array>
#include <random>
#include <unordered_map>

namespace dynsurv {

enum class ScenarioName { DecreasingEvents, IncreasingEvents, Rare1Pct, NewTreatment, NewTreatmentComorbidity };
enum class CohortStyle { OpenCohort, NewCohorts };

inline std::string to_string(ScenarioName s) {
    switch (s) {
        case ScenarioName::DecreasingEvents: return "decreasing_events";
        case ScenarioName::IncreasingEvents: return "increasing_events";
        case ScenarioName::Rare1Pct: return "rare_1pct";
        case ScenarioName::NewTreatment: return "new_treatment";
        case ScenarioName::NewTreatmentComorbidity: return "new_treatment_comorbidity";
    }
    return "unknown";
}

inline std::string to_string(CohortStyle c) { return c == CohortStyle::OpenCohort ? "open" : "new"; }

inline ScenarioName parse_scenario(const std::string& s) {
    for (auto n : {ScenarioName::DecreasingEvents, ScenarioName::IncreasingEvents, ScenarioName::Rare1Pct,
                   ScenarioName::NewTreatment, ScenarioName::NewTreatmentComorbidity})
        if (to_string(n) == s) return n;
    throw DomainError("unknown scenario '" + s + "'");
}

inline CohortStyle parse_cohort_style(const std::string& s) {
    if (s == "open" || s == "open_cohort") return CohortStyle::OpenCohort;
    if (s == "new" || s == "new_cohorts") return CohortStyle::NewCohorts;
    throw DomainError("unknown cohort style '" + s + "'");
}

// Positions in the full covariate vector every generated subject carries.
enum Covariate : std::size_t { kAge = 0, kPrognostic, kComorbidity, kTreatment, kInteraction, kNumCovariates };

inline const std::array<std::string, kNumCovariates>& covariate_names() {
    static const std::array<std::string, kNumCovariates> names{"age", "prog_index", "comorbidity", "treatment",
                                                               "comorbidity_x_treatment"};
    return names;
}

using FullCovariates = std::array<double, kNumCovariates>;

struct ScenarioConfig {
    ScenarioName name = ScenarioName::DecreasingEvents;
    CohortStyle cohort_style = CohortStyle::OpenCohort;

    int n_periods = 5;
    double period_length = 0.25;  // years
    double horizon = 0.25;
    double dev_followup = 1.0;    // administrative censoring of the development cohort
    double admin_censor = 1.0;    // latent follow-up cap from each record's origin
    int n_dev = 10000;
    int n_period = 5000;          // new cohorts: fresh subjects per quarter
    int entries_per_period = 3;   // new cohorts: monthly entry

    // Target annual event fraction per period; lambda_schedule is solved from it.
    std::vector<double> annual_event_rates{0.05, 0.05, 0.05, 0.05, 0.05};
    std::vector<double> lambda_schedule;

    double age_min = 1.8, age_max = 9.5;
    double prog_mean = 1.0, prog_sd = 1.0;
    double comorbidity_prevalence = 0.05;
    bool rare_factor = false;
    double rare_age_threshold = 5.5;
    double rare_prevalence = 0.01;

    double beta_age = 0.35;
    double beta_prog = 0.5;
    double beta_comorbidity = 0.8;
    double beta_treatment = -1.5;
    double beta_interaction = 0.5;

    bool treatment = false;
    int treatment_start = 2;
    std::vector<double> rollout_age_thresholds{7.0, 5.0, 3.0, 1.8};
    double uptake = 0.6;
    bool comorbidity_eligible = false;
    bool interaction = false;

    double true_eta(const FullCovariates& x) const {
        return beta_age * x[kAge] + beta_prog * x[kPrognostic] + beta_comorbidity * x[kComorbidity] +
               beta_treatment * x[kTreatment] + beta_interaction * x[kInteraction];
    }

    double period_start(int u) const { return period_length * (u - 1); }

    // Period containing calendar time t (1-based; 0 before the first period).
    int period_at(double t) const {
        if (t < 0.0) return 0;
        return static_cast<int>(std::floor(t / period_length + 1e-9)) + 1;
    }

    // Covariates a model can use with data from period u.
    CovariateSpec spec_for_period(int u) const {
        std::vector<std::string> names{covariate_names()[kAge], covariate_names()[kPrognostic],
                                       covariate_names()[kComorbidity]};
        std::vector<CovariateKind> kinds{CovariateKind::Continuous, CovariateKind::Continuous, CovariateKind::Binary};
        if (treatment && u >= treatment_start) {
            names.push_back(covariate_names()[kTreatment]);
            kinds.push_back(CovariateKind::Binary);
            if (interaction) {
                names.push_back(covariate_names()[kInteraction]);
                kinds.push_back(CovariateKind::Binary);
            }
        }
        return {names, kinds};
    }

    double lambda_for_period(int u) const {
        if (lambda_schedule.empty()) throw DomainError("lambda schedule not solved");
        const auto idx = static_cast<std::size_t>(std::clamp(u, 1, n_periods) - 1);
        return lambda_schedule.at(idx);
    }

    void validate() const {
        if (n_dev < 1) throw DomainError("n_dev must be >= 1");
        if (n_period < 1) throw DomainError("n_period must be >= 1");
        if (n_periods < 1) throw DomainError("n_periods must be >= 1");
        if (entries_per_period < 1) throw DomainError("entries_per_period must be >= 1");
        if (!(period_length > 0.0) || !(horizon > 0.0)) throw DomainError("period_length and horizon must be > 0");
        if (!(age_max > age_min)) throw DomainError("age range empty");
        if (!(prog_sd > 0.0)) throw DomainError("prog_sd must be > 0");
        auto prob = [](double p, const char* what) {
            if (!(p >= 0.0 && p <= 1.0)) throw DomainError(std::string(what) + " must lie in [0,1]");
        };
        prob(comorbidity_prevalence, "comorbidity_prevalence");
        prob(rare_prevalence, "rare_prevalence");
        prob(uptake, "uptake");
        if (annual_event_rates.size() != static_cast<std::size_t>(n_periods))
            throw DomainError("annual_event_rates must have one entry per period");
        for (double r : annual_event_rates)
            if (!(r > 0.0 && r < 1.0)) throw DomainError("annual event rates must lie in (0,1)");
        if (!lambda_schedule.empty()) {
            if (lambda_schedule.size() != static_cast<std::size_t>(n_periods))
                throw DomainError("lambda_schedule must have one entry per period");
            for (double l : lambda_schedule)
                if (!(l > 0.0)) throw DomainError("lambda must be > 0");
        }
        for (std::size_t k = 1; k < rollout_age_thresholds.size(); ++k)
            if (rollout_age_thresholds[k] > rollout_age_thresholds[k - 1])
                throw DomainError("rollout age thresholds must be non-increasing");
        if (rare_factor && !(age_max > rare_age_threshold)) throw DomainError("rare factor threshold above age range");
    }
};

// =============================================================================
// Elementary generators
// =============================================================================

inline double gen_survival_time(double lambda, double eta, double u01) {
    if (!(lambda > 0.0)) throw DomainError("lambda must be > 0");
    if (!(u01 > 0.0 && u01 <= 1.0)) throw DomainError("u01 must lie in (0,1]");
    return -std::log(u01) / (lambda * std::exp(eta));
}

// Probability of the rare factor: zero up to the age threshold, then linear
// in age with slope chosen so the population prevalence equals the target.
inline double rare_probability(const ScenarioConfig& cfg, double age) {
    if (age <= cfg.rare_age_threshold) return 0.0;
    const double span = cfg.age_max - cfg.rare_age_threshold;
    const double slope = 2.0 * cfg.rare_prevalence * (cfg.age_max - cfg.age_min) / (span * span);
    return std::min(1.0, slope * (age - cfg.rare_age_threshold));
}

inline bool rare_risk_assignment(const ScenarioConfig& cfg, double age, double u01) {
    if (!(u01 >= 0.0 && u01 < 1.0)) throw DomainError("u01 must lie in [0,1)");
    return u01 < rare_probability(cfg, age);
}

inline double comorbidity_probability(const ScenarioConfig& cfg, double age) {
    return cfg.rare_factor ? rare_probability(cfg, age) : cfg.comorbidity_prevalence;
}

// Per-period uptake for a not-yet-treated subject.
inline double treatment_rollout(const ScenarioConfig& cfg, int period, double age, bool comorbidity) {
    if (!cfg.treatment || period < cfg.treatment_start || cfg.rollout_age_thresholds.empty()) return 0.0;
    const auto step = static_cast<std::size_t>(period - cfg.treatment_start);
    const double threshold = cfg.rollout_age_thresholds[std::min(step, cfg.rollout_age_thresholds.size() - 1)];
    const bool eligible = age >= threshold || (cfg.comorbidity_eligible && comorbidity);
    return eligible ? cfg.uptake : 0.0;
}

// Probability of having been treated by period u for a subject first seen in u.
inline double treated_by(const ScenarioConfig& cfg, int period, double age, bool comorbidity) {
    double untreated = 1.0;
    for (int k = cfg.treatment_start; k <= period; ++k) untreated *= 1.0 - treatment_rollout(cfg, k, age, comorbidity);
    return 1.0 - untreated;
}

// SplitMix64 finaliser; derives independent stream seeds from a root seed.
inline std::uint64_t mix_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    return std::mt19937_64(seq);
}

// u in (0, 1]
inline double draw_open_unit(std::mt19937_64& rng) {
    return 1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline FullCovariates draw_covariates(const ScenarioConfig& cfg, int period, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> norm(cfg.prog_mean, cfg.prog_sd);
    FullCovariates x{};
    x[kAge] = cfg.age_min + (cfg.age_max - cfg.age_min) * unif(rng);
    x[kPrognostic] = norm(rng);
    x[kComorbidity] = unif(rng) < comorbidity_probability(cfg, x[kAge]) ? 1.0 : 0.0;
    const double pt = treated_by(cfg, period, x[kAge], x[kComorbidity] > 0.5);
    x[kTreatment] = unif(rng) < pt ? 1.0 : 0.0;
    x[kInteraction] = cfg.interaction ? x[kComorbidity] * x[kTreatment] : 0.0;
    return x;
}

// =============================================================================
// Baseline hazard schedule
// =============================================================================

// Expected one-year event fraction E[1 - exp(-lambda e^eta)] under the
// untreated covariate law, by product Simpson quadrature over age and the
// prognostic index.
inline double expected_annual_event_fraction(const ScenarioConfig& cfg, double lambda) {
    constexpr int na = 200, nz = 160;
    constexpr double zmax = 8.0;
    auto simpson_w = [](int k, int n) { return (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0); };
    const double ha = (cfg.age_max - cfg.age_min) / na;
    const double hz = 2.0 * zmax / nz;
    double total = 0.0;
    for (int a = 0; a <= na; ++a) {
        const double age = cfg.age_min + a * ha;
        const double pc = comorbidity_probability(cfg, age);
        double inner = 0.0;
        for (int k = 0; k <= nz; ++k) {
            const double z = -zmax + k * hz;
            const double dens = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
            const double prog = cfg.prog_mean + cfg.prog_sd * z;
            const double base = cfg.beta_age * age + cfg.beta_prog * prog;
            const double f0 = 1.0 - std::exp(-lambda * std::exp(base));
            const double f1 = 1.0 - std::exp(-lambda * std::exp(base + cfg.beta_comorbidity));
            inner += simpson_w(k, nz) * dens * ((1.0 - pc) * f0 + pc * f1);
        }
        total += simpson_w(a, na) * inner * hz / 3.0;
    }
    return total * ha / 3.0 / (cfg.age_max - cfg.age_min);
}

inline double solve_lambda(const ScenarioConfig& cfg, double annual_rate) {
    double lo = std::log(1e-12), hi = std::log(10.0);
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (expected_annual_event_fraction(cfg, std::exp(mid)) < annual_rate ? lo : hi) = mid;
    }
    return std::exp(0.5 * (lo + hi));
}

inline void solve_lambda_schedule(ScenarioConfig& cfg) {
    cfg.lambda_schedule.clear();
    for (double r : cfg.annual_event_rates) cfg.lambda_schedule.push_back(solve_lambda(cfg, r));
}

inline std::vector<double> linear_rates(double first, double last, int n) {
    std::vector<double> r(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) r[static_cast<std::size_t>(k)] = n == 1 ? first : first + (last - first) * k / (n - 1);
    return r;
}

// Defaults for a named scenario, with the hazard schedule solved.
inline ScenarioConfig make_scenario(ScenarioName name, CohortStyle style) {
    ScenarioConfig cfg;
    cfg.name = name;
    cfg.cohort_style = style;
    switch (name) {
        case ScenarioName::DecreasingEvents: cfg.annual_event_rates = linear_rates(0.05, 0.02, cfg.n_periods); break;
        case ScenarioName::IncreasingEvents: cfg.annual_event_rates = linear_rates(0.05, 0.08, cfg.n_periods); break;
        case ScenarioName::Rare1Pct: cfg.rare_factor = true; break;
        case ScenarioName::NewTreatment: cfg.treatment = true; break;
        case ScenarioName::NewTreatmentComorbidity:
            cfg.treatment = true;
            cfg.comorbidity_eligible = true;
            cfg.interaction = true;
            break;
    }
    solve_lambda_schedule(cfg);
    cfg.validate();
    return cfg;
}

// =============================================================================
// Cohorts
// =============================================================================

struct CohortMember {
    SubjectId id;
    FullCovariates covariates{};
    double followup = 0.0;  // accumulated years under observation
};

// One subject's observation inside one period, in calendar years.
struct Episode {
    SubjectId id;
    int period = 0;
    FullCovariates covariates{};
    double start = 0.0;
    double stop = 0.0;
    bool event = false;
};

struct CohortState {
    int period = 0;  // last generated period
    std::uint64_t next_id = 1;
    std::vector<CohortMember> members;  // open cohort: current survivors
    std::vector<Episode> history;
};

namespace detail {

inline SubjectRecord make_record(SubjectId id, const FullCovariates& x, const CovariateSpec& spec, double time,
                                 bool event, int period) {
    SubjectRecord r;
    r.id = id;
    r.covariates.reserve(spec.size());
    const auto& names = covariate_names();
    for (const auto& n : spec.names()) {
        const auto it = std::find(names.begin(), names.end(), n);
        r.covariates.push_back(x[static_cast<std::size_t>(it - names.begin())]);
    }
    r.time_observed = time;
    r.event = event;
    r.entry_period = period;
    return r;
}

constexpr std::uint64_t kDevIdBase = 1ULL << 40;

inline std::uint64_t episode_key(SubjectId id, int period) {
    return (id.value << 8) | static_cast<std::uint64_t>(period & 0xff);
}

}  // namespace detail

inline Dataset gen_dev_cohort(const ScenarioConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    auto rng = make_rng(mix_seed(seed, 0xde7));
    Dataset d;
    d.spec = cfg.spec_for_period(0);
    d.period = 0;
    d.records.reserve(static_cast<std::size_t>(cfg.n_dev));
    const double lambda = cfg.lambda_for_period(1);
    for (int i = 0; i < cfg.n_dev; ++i) {
        const FullCovariates x = draw_covariates(cfg, 0, rng);
        const double t = gen_survival_time(lambda, cfg.true_eta(x), draw_open_unit(rng));
        const bool event = t < cfg.dev_followup;
        d.records.push_back(detail::make_record(SubjectId{detail::kDevIdBase + static_cast<std::uint64_t>(i)}, x, d.spec,
                                                event ? t : cfg.dev_followup, event, 0));
    }
    return d;
}

// Generates period u's data and advances the cohort. Open cohort: survivors
// gain one period of exposure under lambda_u (memoryless), members with events
// were replaced at the period start by fresh draws. New cohorts: fresh subjects
// enter at evenly spaced times within the period and are censored at its end.
inline std::pair<Dataset, CohortState> gen_period_data(const ScenarioConfig& cfg, CohortState state, int period,
                                                       std::uint64_t seed) {
    cfg.validate();
    if (period < 1 || period > cfg.n_periods) throw DomainError("period out of range");
    if (period != state.period + 1) throw DomainError("periods must be generated in order");
    auto rng = make_rng(mix_seed(seed, static_cast<std::uint64_t>(period)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double lambda = cfg.lambda_for_period(period);
    const double start = cfg.period_start(period);
    const double end = start + cfg.period_length;

    Dataset d;
    d.spec = cfg.spec_for_period(period);
    d.period = period;

    if (cfg.cohort_style == CohortStyle::OpenCohort) {
        for (auto& m : state.members) {
            if (m.covariates[kTreatment] > 0.5) continue;
            const double p = treatment_rollout(cfg, period, m.covariates[kAge], m.covariates[kComorbidity] > 0.5);
            if (unif(rng) < p) {
                m.covariates[kTreatment] = 1.0;
                if (cfg.interaction) m.covariates[kInteraction] = m.covariates[kComorbidity];
            }
        }
        while (state.members.size() < static_cast<std::size_t>(cfg.n_dev))
            state.members.push_back({SubjectId{state.next_id++}, draw_covariates(cfg, period, rng), 0.0});

        std::vector<CohortMember> survivors;
        survivors.reserve(state.members.size());
        d.records.reserve(state.members.size());
        for (auto& m : state.members) {
            const double t = gen_survival_time(lambda, cfg.true_eta(m.covariates), draw_open_unit(rng));
            const bool event = t < cfg.period_length;
            const double obs = event ? t : cfg.period_length;
            d.records.push_back(detail::make_record(m.id, m.covariates, d.spec, obs, event, period));
            state.history.push_back({m.id, period, m.covariates, start, start + obs, event});
            m.followup += obs;
            if (!event) survivors.push_back(m);
        }
        state.members = std::move(survivors);
    } else {
        const int k = cfg.entries_per_period;
        for (int e = 0; e < k; ++e) {
            const int count = cfg.n_period / k + (e < cfg.n_period % k ? 1 : 0);
            const double entry = start + cfg.period_length * e / k;
            for (int i = 0; i < count; ++i) {
                const SubjectId id{state.next_id++};
                const FullCovariates x = draw_covariates(cfg, period, rng);
                const double t = gen_survival_time(lambda, cfg.true_eta(x), draw_open_unit(rng));
                const bool latent_event = t < cfg.admin_censor;
                state.history.push_back({id, period, x, entry, entry + (latent_event ? t : cfg.admin_censor), latent_event});
                const double limit = end - entry;
                const bool event = t < limit;
                d.records.push_back(detail::make_record(id, x, d.spec, event ? t : limit, event, period));
            }
        }
    }
    state.period = period;
    return {std::move(d), std::move(state)};
}

// Data observable over the calendar window [a, b), with time reset to the
// window start (open cohort) or to each subject's entry (new cohorts).
inline Dataset window_dataset(const ScenarioConfig& cfg, const CohortState& state, double a, double b) {
    if (!(b > a) || a < 0.0) throw DomainError("window must satisfy 0 <= a < b");
    constexpr double eps = 1e-12;
    Dataset d;
    if (cfg.cohort_style == CohortStyle::OpenCohort) {
        const int period = cfg.period_at(a);
        d.spec = cfg.spec_for_period(period);
        d.period = period;
        std::unordered_map<std::uint64_t, std::size_t> next_index;
        for (std::size_t i = 0; i < state.history.size(); ++i)
            if (state.history[i].period > period) next_index.emplace(detail::episode_key(state.history[i].id, state.history[i].period), i);
        for (const auto& ep : state.history) {
            if (ep.period != period || !(ep.start <= a + eps) || !(ep.stop > a)) continue;
            const Episode* cur = &ep;
            double time = 0.0;
            bool event = false;
            for (;;) {
                if (cur->event && cur->stop < b) { event = true; time = cur->stop - a; break; }
                if (cur->stop >= b - eps) { time = b - a; break; }
                // Censored at its period end: follow the same subject into the next period.
                auto it = next_index.find(detail::episode_key(cur->id, cur->period + 1));
                if (it == next_index.end()) { time = cur->stop - a; break; }
                cur = &state.history[it->second];
            }
            d.records.push_back(detail::make_record(ep.id, ep.covariates, d.spec, time, event, period));
        }
    } else {
        const int period = cfg.period_at(b - eps);
        d.spec = cfg.spec_for_period(period);
        d.period = period;
        for (const auto& ep : state.history) {
            if (!(ep.start >= a - eps && ep.start < b - eps)) continue;
            const double limit = b - ep.start;
            const double latent = ep.stop - ep.start;
            const bool event = ep.event && latent < limit;
            d.records.push_back(detail::make_record(ep.id, ep.covariates, d.spec, event ? latent : limit, event,
                                                    cfg.period_at(ep.start)));
        }
    }
    return d;
}

struct ReplicateData {
    Dataset dev;
    std::vector<Dataset> periods;  // periods[u-1] holds D_u
    CohortState state;
};

inline ReplicateData generate_replicate(const ScenarioConfig& cfg, std::uint64_t seed) {
    ReplicateData r;
    r.dev = gen_dev_cohort(cfg, seed);
    for (int u = 1; u <= cfg.n_periods; ++u) {
        auto [data, next] = gen_period_data(cfg, std::move(r.state), u, seed);
        r.periods.push_back(std::move(data));
        r.state = std::move(next);
    }
    return r;
}

}  // namespace dynsurv
