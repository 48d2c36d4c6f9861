#pragma once

// Monte Carlo study: per replicate, fit M_0 on the development cohort, then
// for each quarter evaluate the current model on that quarter's data and
// update it. Aggregation, paired Wilcoxon tests and report files.

#include "io.hpp"
#include "metrics.hpp"
#include "simulation.hpp"
#include "updating.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <thread>

namespace dynsurv {

inline constexpr const char* kVersion = "dynsurv 1.0.0";

struct StudyPlan {
    ScenarioConfig scenario = make_scenario(ScenarioName::DecreasingEvents, CohortStyle::OpenCohort);
    std::vector<UpdateStrategy> strategies;  // empty: default_strategies(analyst_times)
    int n_sim = 100;
    std::uint64_t root_seed = 42;
    double horizon = 0.25;
    std::vector<double> analyst_times{0.0, 0.1, 0.25, 0.46, 0.5, 0.69, 0.75};
    double forgetting = 0.9;
    int bayes_draws = 400;  // posterior draws per predictive survival evaluation
    FitOptions fit;

    void validate() const {
        scenario.validate();
        if (n_sim < 1) throw DomainError("n_sim must be >= 1");
        if (!(horizon > 0.0)) throw DomainError("horizon must be > 0");
        if (bayes_draws < 1) throw DomainError("bayes_draws must be >= 1");
        if (!(forgetting > 0.0 && forgetting <= 1.0)) throw DomainError("forgetting factor must lie in (0,1]");
        for (double a : analyst_times)
            if (!(a >= 0.0 && a < 1.0)) throw DomainError("analyst times must lie in [0,1)");
        std::vector<std::string> names;
        for (const auto& s : strategies) {
            s.validate();
            names.push_back(s.name());
        }
        std::sort(names.begin(), names.end());
        if (std::adjacent_find(names.begin(), names.end()) != names.end())
            throw DomainError("duplicate strategy in plan");
    }
};

inline std::vector<UpdateStrategy> default_strategies(const std::vector<double>& analyst_times, double forgetting = 0.9) {
    std::vector<UpdateStrategy> out;
    out.push_back({StrategyKind::NoUpdate});
    out.push_back({StrategyKind::RecalibrateQuarterly});
    out.push_back({StrategyKind::RefitQuarterly});
    UpdateStrategy bayes{StrategyKind::BayesQuarterly};
    bayes.forgetting = forgetting;
    out.push_back(bayes);
    for (double a : analyst_times) out.push_back({StrategyKind::RecalibrateOnce, a});
    for (double a : analyst_times) out.push_back({StrategyKind::RefitOnce, a});
    return out;
}

inline std::vector<UpdateStrategy> plan_strategies(const StudyPlan& plan) {
    return plan.strategies.empty() ? default_strategies(plan.analyst_times, plan.forgetting) : plan.strategies;
}

// A one-time analyst starting at `at` holds data up to the last whole month
// before at + window and uses the preceding `window` years of it. The
// updated model is deployed from the quarter after the one containing
// at + window.
struct AnalystSchedule {
    double window_start = 0.0;
    double window_end = 0.0;
    int effective_period = 0;
};

inline AnalystSchedule analyst_schedule(const UpdateStrategy& s, double period_length = 0.25) {
    constexpr double eps = 1e-9;
    const double tau = s.at + s.window;
    AnalystSchedule out;
    out.window_end = std::floor(12.0 * tau + eps) / 12.0;
    out.window_start = std::max(0.0, out.window_end - s.window);
    out.effective_period = static_cast<int>(std::ceil(tau / period_length - eps)) + 1;
    return out;
}

// =============================================================================
// Evaluation of a model on one quarter
// =============================================================================

inline EvalInput make_eval_input(const AnyModel& model, const Dataset& data, double horizon, int bayes_draws,
                                 std::uint64_t seed) {
    const auto pos = data.spec.positions_of(model.spec());
    EvalInput in;
    in.horizon = horizon;
    const std::size_t n = data.records.size();
    in.predictions.resize(n);
    in.outcomes.resize(n);
    in.cumhaz_at_s.resize(n);
    in.baseline_cumhaz_at_s.resize(n);

    std::optional<PosteriorDraws> draws;
    if (model.is_bayes()) draws.emplace(model.bayes(), bayes_draws, seed);

    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = data.records[i];
        const Eigen::VectorXd x = project(r, pos);
        const double s = std::min(r.time_observed, horizon);
        double eta, surv, h, h0;
        if (model.is_cox()) {
            const auto& m = model.cox();
            eta = m.beta.dot(x);
            const double rr = std::exp(eta);
            surv = std::exp(-m.baseline_cum_hazard.eval(horizon) * rr);
            h0 = m.baseline_cum_hazard.eval(s);
            h = h0 * rr;
        } else {
            const auto& m = model.bayes();
            eta = m.beta().dot(x);
            const auto sv = draws->survival<2>(x, {horizon, s});
            surv = sv[0];
            h = sv[1] > 0.0 ? -std::log(sv[1]) : std::numeric_limits<double>::infinity();
            h0 = std::exp(m.log_lambda()) * s;
        }
        in.predictions[i] = {r.id, horizon, std::clamp(surv, 0.0, 1.0), eta};
        in.outcomes[i] = {r.time_observed, r.event};
        in.cumhaz_at_s[i] = h;
        in.baseline_cumhaz_at_s[i] = h0;
    }
    return in;
}

// =============================================================================
// Replicates
// =============================================================================

struct ReportRow {
    std::size_t strategy_index = 0;
    std::string strategy;
    int period = 0;
    int replicate = 0;
    MetricReport metrics;
    bool retained_previous = false;  // evaluated model kept after a failed update
    std::array<double, kNumCovariates> coefficients{};  // NaN where the model lacks the covariate
};

// One attempted update. `period` labels the data quarter it ended in.
struct UpdateRecord {
    std::size_t strategy_index = 0;
    std::string strategy;
    int period = 0;
    int replicate = 0;
    bool failed = false;
    std::optional<FitFailure> failure;
};

struct ReplicateResult {
    std::vector<ReportRow> rows;
    std::vector<UpdateRecord> updates;
};

inline std::uint64_t replicate_seed(std::uint64_t root_seed, int replicate) {
    return mix_seed(root_seed, 0x5eed0000ULL + static_cast<std::uint64_t>(replicate));
}

namespace detail {

inline std::array<double, kNumCovariates> coefficient_row(const AnyModel& m) {
    std::array<double, kNumCovariates> out;
    out.fill(std::numeric_limits<double>::quiet_NaN());
    const auto& names = covariate_names();
    for (const auto& [name, value] : m.coefficients()) {
        const auto it = std::find(names.begin(), names.end(), name);
        if (it != names.end()) out[static_cast<std::size_t>(it - names.begin())] = value;
    }
    return out;
}

}  // namespace detail

// Runs one strategy over the quarters of a replicate, starting from M_0.
inline ReplicateResult run_strategy(const StudyPlan& plan, const UpdateStrategy& strategy, std::size_t strategy_index,
                                    const ReplicateData& data, const AnyModel& m0, int replicate, std::uint64_t seed) {
    const auto& cfg = plan.scenario;
    UpdateSettings settings;
    settings.fit = plan.fit;
    settings.horizon = plan.horizon;
    const std::string name = strategy.name();

    ReplicateResult out;
    AnyModel current = m0;
    current.provenance.strategy = name;

    std::optional<AnalystSchedule> schedule;
    if (strategy.one_time()) schedule = analyst_schedule(strategy, cfg.period_length);

    for (int u = 1; u <= cfg.n_periods; ++u) {
        if (schedule && schedule->effective_period == u) {
            const Dataset window = window_dataset(cfg, data.state, schedule->window_start, schedule->window_end);
            current = apply_update(strategy, current, window, settings);
            out.updates.push_back({strategy_index, name, cfg.period_at(schedule->window_end - 1e-6), replicate,
                                   current.provenance.retained_previous, current.provenance.last_failure});
        }

        const Dataset& du = data.periods[static_cast<std::size_t>(u - 1)];
        const EvalInput in = make_eval_input(current, du, plan.horizon, plan.bayes_draws,
                                             mix_seed(seed, 0xba7e5000ULL + static_cast<std::uint64_t>(u)));
        ReportRow row;
        row.strategy_index = strategy_index;
        row.strategy = name;
        row.period = u;
        row.replicate = replicate;
        row.metrics = evaluate_metrics(in, u, name);
        row.retained_previous = current.provenance.retained_previous;
        row.coefficients = detail::coefficient_row(current);
        out.rows.push_back(std::move(row));

        if (!strategy.one_time() && strategy.kind != StrategyKind::NoUpdate && u < cfg.n_periods) {
            current = apply_update(strategy, current, du, settings);
            out.updates.push_back({strategy_index, name, u, replicate, current.provenance.retained_previous,
                                   current.provenance.last_failure});
        }
    }
    return out;
}

inline AnyModel fit_initial_model(const Dataset& dev, const FitOptions& opts) {
    AnyModel m0;
    m0.model = fit_cox(dev, opts);
    return m0;
}

// All strategies of the plan on one replicate, sharing its data and M_0.
inline ReplicateResult run_replicate(const StudyPlan& plan, int replicate) {
    const std::uint64_t seed = replicate_seed(plan.root_seed, replicate);
    const ReplicateData data = generate_replicate(plan.scenario, seed);
    const AnyModel m0 = fit_initial_model(data.dev, plan.fit);
    const auto strategies = plan_strategies(plan);
    ReplicateResult out;
    for (std::size_t k = 0; k < strategies.size(); ++k) {
        auto r = run_strategy(plan, strategies[k], k, data, m0, replicate, seed);
        out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
        out.updates.insert(out.updates.end(), r.updates.begin(), r.updates.end());
    }
    return out;
}

// Single strategy on a replicate drawn from `seed`.
inline std::vector<MetricReport> run_replicate(const StudyPlan& plan, const UpdateStrategy& strategy,
                                               std::uint64_t seed) {
    plan.validate();
    const ReplicateData data = generate_replicate(plan.scenario, seed);
    const AnyModel m0 = fit_initial_model(data.dev, plan.fit);
    std::vector<MetricReport> out;
    for (auto& row : run_strategy(plan, strategy, 0, data, m0, 0, seed).rows) out.push_back(std::move(row.metrics));
    return out;
}

// =============================================================================
// Aggregation and tests
// =============================================================================

struct Summary {
    std::size_t n = 0;
    double mean = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> mcse;  // empty when fewer than two values
};

inline Summary summarize(std::span<const double> values) {
    Summary s;
    double sum = 0.0;
    for (double v : values)
        if (std::isfinite(v)) { sum += v; ++s.n; }
    if (s.n == 0) return s;
    s.mean = sum / static_cast<double>(s.n);
    if (s.n < 2) return s;
    double ss = 0.0;
    for (double v : values)
        if (std::isfinite(v)) ss += (v - s.mean) * (v - s.mean);
    s.mcse = std::sqrt(ss / static_cast<double>(s.n - 1)) / std::sqrt(static_cast<double>(s.n));
    return s;
}

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v{"c_index", "brier", "cal_intercept", "cal_slope"};
        for (const auto& c : covariate_names()) v.push_back("coef_" + c);
        return v;
    }();
    return names;
}

inline double metric_value(const ReportRow& r, std::size_t metric) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    switch (metric) {
        case 0: return r.metrics.c_index.value_or(nan);
        case 1: return r.metrics.brier;
        case 2: return r.metrics.cal_intercept;
        case 3: return r.metrics.cal_slope;
        default: return r.coefficients[metric - 4];
    }
}

struct AggregateRow {
    std::string strategy;
    int period = 0;
    std::vector<Summary> metrics;  // indexed like metric_names()
};

struct FailureRow {
    std::string strategy;
    int period = 0;
    std::size_t attempts = 0;
    std::size_t failures = 0;
    double fraction() const { return attempts ? static_cast<double>(failures) / static_cast<double>(attempts) : 0.0; }
};

struct WilcoxonResult {
    double statistic = 0.0;  // sum of ranks of positive differences
    double p_value = 1.0;
    std::size_t n = 0;       // non-zero differences
    bool exact = true;
};

struct WilcoxonRow {
    std::string metric;
    std::string strategy_a;
    std::string strategy_b;
    int period = 0;
    double mean_difference = 0.0;
    WilcoxonResult test;
};

// Two-sided signed-rank test of a - b. Zero differences are dropped and tied
// magnitudes get mid-ranks; exact null distribution for n <= 25.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw DimensionError("wilcoxon: samples must be paired and non-empty");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i] - b[i];
        if (!std::isfinite(x)) throw DomainError("wilcoxon: non-finite difference");
        if (x != 0.0) d.push_back(x);
    }
    WilcoxonResult out;
    out.n = d.size();
    if (d.empty()) return out;

    const std::size_t n = d.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
    // Doubled ranks keep mid-ranks integral.
    std::vector<long> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
        const long r2 = static_cast<long>(i + 1 + j);  // 2 * mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) rank2[order[k]] = r2;
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    long w2 = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0.0) w2 += rank2[i];
    out.statistic = static_cast<double>(w2) / 2.0;

    const double nn = static_cast<double>(n);
    if (n <= 25) {
        const long total = static_cast<long>(n * (n + 1));
        std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
        count[0] = 1.0;
        for (std::size_t i = 0; i < n; ++i)
            for (long s = total; s >= rank2[i]; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - rank2[i])];
        const double all = std::ldexp(1.0, static_cast<int>(n));
        double lower = 0.0, upper = 0.0;
        for (long s = 0; s <= total; ++s) {
            if (s <= w2) lower += count[static_cast<std::size_t>(s)];
            if (s >= w2) upper += count[static_cast<std::size_t>(s)];
        }
        out.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
        out.exact = true;
    } else {
        const double mean = nn * (nn + 1.0) / 4.0;
        const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
        const double z = (std::abs(out.statistic - mean) - 0.5) / std::sqrt(var);
        out.p_value = z <= 0.0 ? 1.0 : std::min(1.0, std::erfc(z / std::sqrt(2.0)));
        out.exact = false;
    }
    return out;
}

struct StudyResult {
    StudyPlan plan;
    std::vector<std::string> strategy_names;
    std::vector<ReportRow> rows;  // ordered by strategy, replicate, period
    std::vector<UpdateRecord> updates;
    std::vector<AggregateRow> aggregate;
    std::vector<FailureRow> failures;
    std::vector<WilcoxonRow> wilcoxon;

    // Per-replicate values of one metric for (strategy, period), by replicate.
    std::vector<double> values(const std::string& strategy, int period, const std::string& metric) const {
        const auto& names = metric_names();
        const auto m = static_cast<std::size_t>(std::find(names.begin(), names.end(), metric) - names.begin());
        if (m == names.size()) throw DomainError("unknown metric '" + metric + "'");
        std::vector<double> out;
        for (const auto& r : rows)
            if (r.strategy == strategy && r.period == period) out.push_back(metric_value(r, m));
        return out;
    }

    const AggregateRow& cell(const std::string& strategy, int period) const {
        for (const auto& a : aggregate)
            if (a.strategy == strategy && a.period == period) return a;
        throw DomainError("no aggregate cell for " + strategy + " period " + std::to_string(period));
    }

    const Summary& summary(const std::string& strategy, int period, const std::string& metric) const {
        const auto& names = metric_names();
        const auto m = static_cast<std::size_t>(std::find(names.begin(), names.end(), metric) - names.begin());
        if (m == names.size()) throw DomainError("unknown metric '" + metric + "'");
        return cell(strategy, period).metrics[m];
    }

    std::optional<FailureRow> failure(const std::string& strategy, int period) const {
        for (const auto& f : failures)
            if (f.strategy == strategy && f.period == period) return f;
        return std::nullopt;
    }
};

// Paired test of `metric` between two strategies in one period, over the
// replicates where both values are finite.
inline WilcoxonRow compare_strategies(const StudyResult& result, const std::string& a, const std::string& b, int period,
                                      const std::string& metric = "c_index") {
    const auto va = result.values(a, period, metric);
    const auto vb = result.values(b, period, metric);
    if (va.size() != vb.size()) throw DimensionError("strategies have different replicate counts");
    std::vector<double> xa, xb;
    for (std::size_t i = 0; i < va.size(); ++i)
        if (std::isfinite(va[i]) && std::isfinite(vb[i])) { xa.push_back(va[i]); xb.push_back(vb[i]); }
    WilcoxonRow row{metric, a, b, period, 0.0, {}};
    if (xa.empty()) return row;
    for (std::size_t i = 0; i < xa.size(); ++i) row.mean_difference += (xa[i] - xb[i]) / static_cast<double>(xa.size());
    row.test = wilcoxon_signed_rank(xa, xb);
    return row;
}

inline void aggregate_result(StudyResult& result) {
    const auto& names = metric_names();
    const int n_periods = result.plan.scenario.n_periods;
    result.aggregate.clear();
    for (const auto& s : result.strategy_names) {
        for (int u = 1; u <= n_periods; ++u) {
            AggregateRow row{s, u, {}};
            for (const auto& m : names) {
                const auto v = result.values(s, u, m);
                row.metrics.push_back(summarize(v));
            }
            result.aggregate.push_back(std::move(row));
        }
    }
    std::map<std::pair<std::string, int>, FailureRow> fail;
    for (const auto& up : result.updates) {
        auto& f = fail[{up.strategy, up.period}];
        f.strategy = up.strategy;
        f.period = up.period;
        f.attempts += 1;
        f.failures += up.failed ? 1 : 0;
    }
    result.failures.clear();
    for (const auto& s : result.strategy_names)
        for (int u = 1; u <= n_periods; ++u)
            if (auto it = fail.find({s, u}); it != fail.end()) result.failures.push_back(it->second);

    result.wilcoxon.clear();
    const auto baseline = UpdateStrategy{StrategyKind::NoUpdate}.name();
    if (std::find(result.strategy_names.begin(), result.strategy_names.end(), baseline) != result.strategy_names.end())
        for (const auto& s : result.strategy_names) {
            if (s == baseline) continue;
            for (int u = 1; u <= n_periods; ++u) result.wilcoxon.push_back(compare_strategies(result, s, baseline, u));
        }
}

// Replicates run on `workers` threads; rows are assembled by replicate index
// so the result does not depend on scheduling.
inline StudyResult run_study(const StudyPlan& plan, int workers = 1) {
    plan.validate();
    StudyResult result;
    result.plan = plan;
    for (const auto& s : plan_strategies(plan)) result.strategy_names.push_back(s.name());

    std::vector<ReplicateResult> reps(static_cast<std::size_t>(plan.n_sim));
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= plan.n_sim) return;
            try {
                reps[static_cast<std::size_t>(i)] = run_replicate(plan, i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(plan.n_sim);
                return;
            }
        }
    };
    const int n_threads = std::clamp(workers, 1, plan.n_sim);
    if (n_threads == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);

    const std::size_t n_strategies = result.strategy_names.size();
    for (std::size_t k = 0; k < n_strategies; ++k)
        for (const auto& rep : reps) {
            for (const auto& r : rep.rows)
                if (r.strategy_index == k) result.rows.push_back(r);
            for (const auto& up : rep.updates)
                if (up.strategy_index == k) result.updates.push_back(up);
        }
    aggregate_result(result);
    return result;
}

// =============================================================================
// Reports
// =============================================================================

namespace detail {

inline std::string fmt_opt(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << content;
    os.flush();
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace detail

inline json plan_to_json(const StudyPlan& plan) {
    json strategies = json::array();
    for (const auto& s : plan_strategies(plan)) strategies.push_back(s.name());
    return {{"scenario", to_json(plan.scenario)},
            {"strategies", strategies},
            {"n_sim", plan.n_sim},
            {"root_seed", plan.root_seed},
            {"horizon", plan.horizon},
            {"analyst_times", plan.analyst_times},
            {"forgetting", plan.forgetting},
            {"bayes_draws", plan.bayes_draws},
            {"fit", {{"max_iter", plan.fit.max_iter}, {"tol", plan.fit.tol}, {"ridge_eps", plan.fit.ridge_eps},
                     {"max_halvings", plan.fit.max_halvings}, {"beta_bound", plan.fit.beta_bound}}}};
}

// Plan from a JSON document; missing keys keep their defaults.
inline StudyPlan plan_from_json(const json& j) {
    static const std::vector<std::string> known{"scenario", "strategies", "n_sim", "root_seed", "horizon",
                                                "analyst_times", "forgetting", "bayes_draws", "fit"};
    for (auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown plan key '" + key + "'");
    try {
        StudyPlan plan;
        if (j.contains("scenario")) plan.scenario = scenario_from_json(j.at("scenario"));
        if (j.contains("n_sim")) plan.n_sim = j.at("n_sim").get<int>();
        if (j.contains("root_seed")) plan.root_seed = j.at("root_seed").get<std::uint64_t>();
        if (j.contains("horizon")) plan.horizon = j.at("horizon").get<double>();
        if (j.contains("analyst_times")) plan.analyst_times = j.at("analyst_times").get<std::vector<double>>();
        if (j.contains("forgetting")) plan.forgetting = j.at("forgetting").get<double>();
        if (j.contains("bayes_draws")) plan.bayes_draws = j.at("bayes_draws").get<int>();
        if (j.contains("strategies"))
            for (const auto& s : j.at("strategies")) plan.strategies.push_back(UpdateStrategy::parse(s.get<std::string>()));
        if (j.contains("fit")) {
            const auto& f = j.at("fit");
            plan.fit.max_iter = f.value("max_iter", plan.fit.max_iter);
            plan.fit.tol = f.value("tol", plan.fit.tol);
            plan.fit.ridge_eps = f.value("ridge_eps", plan.fit.ridge_eps);
            plan.fit.max_halvings = f.value("max_halvings", plan.fit.max_halvings);
            plan.fit.beta_bound = f.value("beta_bound", plan.fit.beta_bound);
        }
        plan.validate();
        return plan;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("plan config: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("plan config: ") + e.what());
    }
}

inline std::string replicates_csv(const StudyResult& r) {
    std::ostringstream os;
    const std::string scen = to_string(r.plan.scenario.name), style = to_string(r.plan.scenario.cohort_style);
    os << "scenario,cohort_style,strategy,period,replicate,c_index,brier,cal_intercept,cal_slope,retained_previous";
    for (const auto& c : covariate_names()) os << ",coef_" << c;
    os << '\n';
    for (const auto& row : r.rows) {
        os << scen << ',' << style << ',' << row.strategy << ',' << row.period << ',' << row.replicate << ','
           << detail::fmt_opt(row.metrics.c_index) << ',' << format_double(row.metrics.brier) << ','
           << format_double(row.metrics.cal_intercept) << ',' << format_double(row.metrics.cal_slope) << ','
           << (row.retained_previous ? 1 : 0);
        for (double c : row.coefficients) os << ',' << format_double(c);
        os << '\n';
    }
    return os.str();
}

inline std::string aggregate_csv(const StudyResult& r) {
    std::ostringstream os;
    const std::string scen = to_string(r.plan.scenario.name), style = to_string(r.plan.scenario.cohort_style);
    os << "scenario,cohort_style,strategy,period,n";
    for (const auto& m : metric_names()) os << ',' << m << "_mean," << m << "_mcse";
    os << '\n';
    for (const auto& a : r.aggregate) {
        os << scen << ',' << style << ',' << a.strategy << ',' << a.period << ',' << a.metrics[0].n;
        for (const auto& s : a.metrics) os << ',' << format_double(s.mean) << ',' << detail::fmt_opt(s.mcse);
        os << '\n';
    }
    return os.str();
}

inline std::string plot_csv(const StudyResult& r, const std::string& metric) {
    const auto& names = metric_names();
    const auto m = static_cast<std::size_t>(std::find(names.begin(), names.end(), metric) - names.begin());
    if (m == names.size()) throw DomainError("unknown metric '" + metric + "'");
    std::ostringstream os;
    os << "period,strategy,mean,mcse\n";
    for (const auto& a : r.aggregate)
        os << a.period << ',' << a.strategy << ',' << format_double(a.metrics[m].mean) << ','
           << detail::fmt_opt(a.metrics[m].mcse) << '\n';
    return os.str();
}

inline std::string failures_csv(const StudyResult& r) {
    std::ostringstream os;
    os << "strategy,period,attempts,failures,fraction\n";
    for (const auto& f : r.failures)
        os << f.strategy << ',' << f.period << ',' << f.attempts << ',' << f.failures << ',' << format_double(f.fraction())
           << '\n';
    return os.str();
}

inline std::string wilcoxon_csv(const std::vector<WilcoxonRow>& rows) {
    std::ostringstream os;
    os << "metric,strategy_a,strategy_b,period,n,mean_difference,statistic,p_value,exact\n";
    for (const auto& w : rows)
        os << w.metric << ',' << w.strategy_a << ',' << w.strategy_b << ',' << w.period << ',' << w.test.n << ','
           << format_double(w.mean_difference) << ',' << format_double(w.test.statistic) << ','
           << format_double(w.test.p_value) << ',' << (w.test.exact ? 1 : 0) << '\n';
    return os.str();
}

inline void emit_reports(const StudyResult& r, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
    detail::write_file(out_dir / "replicates.csv", replicates_csv(r));
    detail::write_file(out_dir / "aggregate.csv", aggregate_csv(r));
    detail::write_file(out_dir / "plot_cindex.csv", plot_csv(r, "c_index"));
    detail::write_file(out_dir / "plot_cal_intercept.csv", plot_csv(r, "cal_intercept"));
    detail::write_file(out_dir / "failures.csv", failures_csv(r));
    detail::write_file(out_dir / "wilcoxon.csv", wilcoxon_csv(r.wilcoxon));
    json manifest = {{"version", kVersion}, {"plan", plan_to_json(r.plan)}};
    detail::write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

// =============================================================================
// Reading per-replicate results back (for paired comparisons across runs)
// =============================================================================

struct ResultTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::find(columns.begin(), columns.end(), name);
        if (it == columns.end()) throw IoError("results file lacks column '" + name + "'");
        return static_cast<std::size_t>(it - columns.begin());
    }
};

inline ResultTable read_result_table(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    ResultTable t;
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty results file '" + path + "'");
    t.columns = detail::split_csv_line(line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != t.columns.size()) throw IoError("malformed row in '" + path + "'");
        t.rows.push_back(std::move(f));
    }
    return t;
}

// Pairs rows of `strategy_a` in table a with `strategy_b` in table b by
// (period, replicate) and tests `metric` per period.
inline std::vector<WilcoxonRow> compare_result_tables(const ResultTable& a, const std::string& strategy_a,
                                                      const ResultTable& b, const std::string& strategy_b,
                                                      const std::string& metric) {
    auto collect = [&](const ResultTable& t, const std::string& strategy) {
        std::map<std::pair<int, int>, double> out;
        const auto cs = t.column("strategy"), cp = t.column("period"), cr = t.column("replicate"), cm = t.column(metric);
        for (const auto& row : t.rows)
            if (row[cs] == strategy) out[{std::stoi(row[cp]), std::stoi(row[cr])}] = parse_double(row[cm]);
        return out;
    };
    const auto va = collect(a, strategy_a), vb = collect(b, strategy_b);
    if (va.empty()) throw DomainError("strategy '" + strategy_a + "' not found");
    if (vb.empty()) throw DomainError("strategy '" + strategy_b + "' not found");
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_period;
    for (const auto& [key, x] : va) {
        const auto it = vb.find(key);
        if (it == vb.end() || !std::isfinite(x) || !std::isfinite(it->second)) continue;
        by_period[key.first].first.push_back(x);
        by_period[key.first].second.push_back(it->second);
    }
    std::vector<WilcoxonRow> out;
    for (const auto& [period, pair] : by_period) {
        WilcoxonRow row{metric, strategy_a, strategy_b, period, 0.0, {}};
        for (std::size_t i = 0; i < pair.first.size(); ++i)
            row.mean_difference += (pair.first[i] - pair.second[i]) / static_cast<double>(pair.first.size());
        row.test = wilcoxon_signed_rank(pair.first, pair.second);
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace dynsurv
