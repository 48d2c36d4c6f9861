#include <dynsurv/dynsurv.hpp>

#include <CLI11.hpp>

#include <iostream>

using namespace dynsurv;

namespace {

constexpr int kConfigError = 2;
constexpr int kIoError = 3;

struct ScenarioFlags {
    std::string scenario;
    std::string cohort_style;
    std::string config;
};

json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("malformed config '" + path + "': " + e.what());
    }
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(s);
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Config file values first, then command-line overrides.
StudyPlan build_plan(const ScenarioFlags& sf, const std::string& strategies, int n_sim, std::optional<std::uint64_t> seed) {
    json j = sf.config.empty() ? json::object() : load_json(sf.config);
    if (j.contains("plan")) j = j["plan"];
    json scen = j.contains("scenario") ? j["scenario"] : json::object();
    if (!sf.scenario.empty()) scen["name"] = sf.scenario;
    if (!sf.cohort_style.empty()) scen["cohort_style"] = sf.cohort_style;
    if ((!sf.scenario.empty() || !sf.cohort_style.empty()) && scen.contains("lambda_schedule"))
        scen.erase("lambda_schedule");
    j["scenario"] = scen;
    if (!strategies.empty()) j["strategies"] = split_list(strategies);
    if (n_sim > 0) j["n_sim"] = n_sim;
    if (seed) j["root_seed"] = *seed;
    return plan_from_json(j);
}

ScenarioConfig build_scenario(const ScenarioFlags& sf) {
    json j = sf.config.empty() ? json::object() : load_json(sf.config);
    if (j.contains("plan")) j = j["plan"];
    if (j.contains("scenario")) j = j["scenario"];
    if (!sf.scenario.empty()) j["name"] = sf.scenario;
    if (!sf.cohort_style.empty()) j["cohort_style"] = sf.cohort_style;
    if (!sf.scenario.empty() || !sf.cohort_style.empty()) j.erase("lambda_schedule");
    return scenario_from_json(j);
}

void add_scenario_flags(CLI::App* cmd, ScenarioFlags& sf) {
    cmd->add_option("--scenario", sf.scenario,
                    "decreasing_events | increasing_events | rare_1pct | new_treatment | new_treatment_comorbidity");
    cmd->add_option("--cohort-style", sf.cohort_style, "open | new");
    cmd->add_option("--config", sf.config, "JSON configuration file");
}

void print_metrics(std::ostream& os, const MetricReport& m) {
    json j = {{"n", m.n},
              {"n_events", m.n_events},
              {"c_index", m.c_index ? json(*m.c_index) : json(nullptr)},
              {"brier", m.brier},
              {"cal_intercept", m.cal_intercept},
              {"cal_slope", m.cal_slope},
              {"brier_dropped", m.brier_dropped},
              {"calibration_clamped", m.calibration_clamped}};
    os << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic updating of survival prediction models"};
    app.require_subcommand(1);

    // simulate
    ScenarioFlags sim_flags;
    std::uint64_t sim_seed = 42;
    std::string sim_out = "simulated";
    auto* sim = app.add_subcommand("simulate", "Write the development cohort and quarterly datasets of one replicate");
    add_scenario_flags(sim, sim_flags);
    sim->add_option("--seed", sim_seed, "Replicate seed");
    sim->add_option("--out", sim_out, "Output directory");

    // fit
    std::string fit_data, fit_model, fit_out = "model.json", fit_strategy = "refit_quarterly";
    double fit_horizon = 0.25;
    auto* fit = app.add_subcommand("fit", "Fit a Cox model, or update an existing model with new data");
    fit->add_option("--data", fit_data, "Dataset CSV")->required();
    fit->add_option("--model", fit_model, "Existing model JSON to update");
    fit->add_option("--strategies", fit_strategy, "Update method applied to --model");
    fit->add_option("--horizon", fit_horizon, "Prediction horizon in years");
    fit->add_option("--out", fit_out, "Output model JSON");

    // evaluate
    std::string ev_data, ev_model, ev_out;
    double ev_horizon = 0.25;
    int ev_draws = 400;
    std::uint64_t ev_seed = 42;
    auto* ev = app.add_subcommand("evaluate", "Metrics of a model on a dataset");
    ev->add_option("--model", ev_model, "Model JSON")->required();
    ev->add_option("--data", ev_data, "Dataset CSV")->required();
    ev->add_option("--horizon", ev_horizon, "Prediction horizon in years");
    ev->add_option("--draws", ev_draws, "Posterior draws for Bayesian models");
    ev->add_option("--seed", ev_seed, "Seed for posterior draws");
    ev->add_option("--out", ev_out, "Write metrics JSON here instead of stdout");

    // study
    ScenarioFlags st_flags;
    std::string st_strategies, st_out = "results";
    int st_n_sim = 0, st_workers = 1;
    std::optional<std::uint64_t> st_seed;
    auto* st = app.add_subcommand("study", "Full Monte Carlo study");
    add_scenario_flags(st, st_flags);
    st->add_option("--strategies", st_strategies, "Comma-separated strategies, e.g. no_update,refit_once@0.46");
    st->add_option("--n-sim", st_n_sim, "Number of replicates");
    st->add_option("--seed", st_seed, "Root seed");
    st->add_option("--out", st_out, "Output directory");
    st->add_option("--workers", st_workers, "Worker threads")->check(CLI::PositiveNumber);

    // compare
    std::string cmp_a, cmp_b, cmp_sa, cmp_sb, cmp_metric = "c_index", cmp_out;
    auto* cmp = app.add_subcommand("compare", "Paired Wilcoxon signed-rank test between two results files");
    cmp->add_option("a", cmp_a, "First replicates.csv")->required();
    cmp->add_option("b", cmp_b, "Second replicates.csv")->required();
    cmp->add_option("--strategy-a", cmp_sa, "Strategy in the first file")->required();
    cmp->add_option("--strategy-b", cmp_sb, "Strategy in the second file")->required();
    cmp->add_option("--metric", cmp_metric, "Metric column");
    cmp->add_option("--out", cmp_out, "Write CSV here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    try {
        if (*sim) {
            const ScenarioConfig cfg = build_scenario(sim_flags);
            const ReplicateData data = generate_replicate(cfg, sim_seed);
            std::filesystem::create_directories(sim_out);
            write_dataset_csv((std::filesystem::path(sim_out) / "dev.csv").string(), data.dev);
            for (std::size_t u = 0; u < data.periods.size(); ++u)
                write_dataset_csv((std::filesystem::path(sim_out) / ("period_" + std::to_string(u + 1) + ".csv")).string(),
                                  data.periods[u]);
            std::ofstream os(std::filesystem::path(sim_out) / "scenario.json");
            os << to_json(cfg).dump(2) << '\n';
            if (!os) throw IoError("write failed in '" + sim_out + "'");
        } else if (*fit) {
            const Dataset data = read_dataset_csv(fit_data);
            AnyModel model;
            if (fit_model.empty()) {
                model.model = fit_cox(data);
            } else {
                UpdateSettings settings;
                settings.horizon = fit_horizon;
                const auto strategy = UpdateStrategy::parse(fit_strategy);
                model = apply_update(strategy, read_model(fit_model), data, settings);
                if (model.provenance.retained_previous)
                    std::cerr << "update failed (" << to_string(*model.provenance.last_failure)
                              << "); previous model retained\n";
            }
            write_model(fit_out, model);
        } else if (*ev) {
            const AnyModel model = read_model(ev_model);
            const Dataset data = read_dataset_csv(ev_data);
            const auto report = evaluate_metrics(make_eval_input(model, data, ev_horizon, ev_draws, ev_seed),
                                                 data.period, model.provenance.strategy);
            if (ev_out.empty()) {
                print_metrics(std::cout, report);
            } else {
                std::ofstream os(ev_out);
                if (!os) throw IoError("cannot open '" + ev_out + "'");
                print_metrics(os, report);
            }
        } else if (*st) {
            const StudyPlan plan = build_plan(st_flags, st_strategies, st_n_sim, st_seed);
            const StudyResult result = run_study(plan, st_workers);
            emit_reports(result, st_out);
        } else if (*cmp) {
            const auto rows =
                compare_result_tables(read_result_table(cmp_a), cmp_sa, read_result_table(cmp_b), cmp_sb, cmp_metric);
            const std::string text = wilcoxon_csv(rows);
            if (cmp_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream os(cmp_out);
                if (!os || !(os << text)) throw IoError("cannot write '" + cmp_out + "'");
            }
        }
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kIoError;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kIoError;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const DomainError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
