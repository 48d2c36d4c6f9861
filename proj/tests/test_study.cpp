#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace dynsurv;

namespace {

StudyPlan small_plan(ScenarioName name, CohortStyle style, std::vector<std::string> strategies, int n_sim) {
    StudyPlan plan;
    plan.scenario = make_scenario(name, style);
    plan.scenario.n_dev = 3000;
    plan.scenario.n_period = 1500;
    for (const auto& s : strategies) plan.strategies.push_back(UpdateStrategy::parse(s));
    plan.n_sim = n_sim;
    plan.root_seed = 9;
    plan.bayes_draws = 100;
    return plan;
}

// Coefficient rows compared with NaN (covariate absent) equal to NaN.
bool same_coefficients(const std::array<double, kNumCovariates>& a, const std::array<double, kNumCovariates>& b) {
    for (std::size_t j = 0; j < a.size(); ++j)
        if (!(a[j] == b[j] || (std::isnan(a[j]) && std::isnan(b[j])))) return false;
    return true;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Wilcoxon, MatchesEnumerationOracle) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> norm(0.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 3 + static_cast<std::size_t>(trial % 12);
        std::vector<double> a(n), b(n, 0.0), d(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = norm(rng) + 0.3;
            // Coarse values in some trials to exercise ties and zeros.
            if (trial % 3 == 0) a[i] = std::round(a[i] * 2.0) / 2.0;
            d[i] = a[i];
        }
        const auto r = wilcoxon_signed_rank(a, b);
        EXPECT_TRUE(r.exact);
        EXPECT_NEAR(r.p_value, oracle::wilcoxon_p(d), 1e-12) << "trial " << trial;
    }
}

TEST(Wilcoxon, KnownValues) {
    const std::vector<double> a{1, 2, 3, 4, 5, 6}, zero(6, 0.0);
    const auto r = wilcoxon_signed_rank(a, zero);
    EXPECT_EQ(r.statistic, 21.0);
    EXPECT_DOUBLE_EQ(r.p_value, 2.0 / 64.0);
    const auto same = wilcoxon_signed_rank(a, a);
    EXPECT_EQ(same.n, 0u);
    EXPECT_EQ(same.p_value, 1.0);
    EXPECT_THROW(wilcoxon_signed_rank(a, std::vector<double>{1.0}), DimensionError);
}

TEST(Wilcoxon, NormalApproximationForLargeSamples) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> norm(0.0, 1.0);
    std::vector<double> a(60), b(60, 0.0);
    for (auto& x : a) x = norm(rng);
    const auto r = wilcoxon_signed_rank(a, b);
    EXPECT_FALSE(r.exact);
    // Mean of W under the null is n(n+1)/4 = 915; variance 18452.5.
    const double z = (std::abs(r.statistic - 915.0) - 0.5) / std::sqrt(18452.5);
    EXPECT_NEAR(r.p_value, std::erfc(z / std::sqrt(2.0)), 1e-12);
    for (auto& x : a) x = std::abs(x) + 0.1;
    EXPECT_LT(wilcoxon_signed_rank(a, b).p_value, 1e-8);
}

TEST(Summary, MeanAndMonteCarloError) {
    const std::vector<double> v{1.0, 2.0, 4.0, std::numeric_limits<double>::quiet_NaN()};
    const auto s = summarize(v);
    EXPECT_EQ(s.n, 3u);
    EXPECT_DOUBLE_EQ(s.mean, 7.0 / 3.0);
    const double sd = std::sqrt(((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) + (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 2.0);
    EXPECT_DOUBLE_EQ(*s.mcse, sd / std::sqrt(3.0));
    EXPECT_FALSE(summarize(std::vector<double>{5.0}).mcse.has_value());
    EXPECT_TRUE(std::isnan(summarize(std::vector<double>{}).mean));
}

TEST(AnalystSchedule, WindowsAndEffectivePeriods) {
    auto sched = [](double at) { return analyst_schedule({StrategyKind::RefitOnce, at}); };
    EXPECT_DOUBLE_EQ(sched(0.0).window_end, 0.25);
    EXPECT_DOUBLE_EQ(sched(0.0).window_start, 0.0);
    EXPECT_EQ(sched(0.0).effective_period, 2);
    EXPECT_DOUBLE_EQ(sched(0.1).window_end, 4.0 / 12.0);
    EXPECT_DOUBLE_EQ(sched(0.1).window_start, 1.0 / 12.0);
    EXPECT_EQ(sched(0.1).effective_period, 3);
    EXPECT_DOUBLE_EQ(sched(0.46).window_end, 8.0 / 12.0);
    EXPECT_EQ(sched(0.46).effective_period, 4);
    EXPECT_EQ(sched(0.5).effective_period, 4);
    EXPECT_EQ(sched(0.69).effective_period, 5);
    EXPECT_DOUBLE_EQ(sched(0.75).window_end, 1.0);
    EXPECT_EQ(sched(0.75).effective_period, 5);
    for (double at : {0.0, 0.1, 0.25, 0.46, 0.5, 0.69, 0.75}) {
        const auto s = sched(at);
        EXPECT_LE(s.window_end, at + 0.25 + 1e-12);
        EXPECT_NEAR(s.window_end - s.window_start, 0.25, 1e-12);
        // Deployment never precedes the end of the data window.
        EXPECT_GE(0.25 * (s.effective_period - 1), s.window_end - 1e-12);
    }
}

TEST(Strategies, DefaultsAndNames) {
    StudyPlan plan;
    const auto s = plan_strategies(plan);
    ASSERT_EQ(s.size(), 18u);
    EXPECT_EQ(s[0].name(), "no_update");
    EXPECT_EQ(s[3].name(), "bayes_quarterly");
    EXPECT_EQ(s[7].name(), "recal_once@0.46");
    EXPECT_EQ(s[17].name(), "refit_once@0.75");
    for (const auto& x : s) EXPECT_EQ(UpdateStrategy::parse(x.name()).name(), x.name());
    EXPECT_NE(replicate_seed(42, 0), replicate_seed(42, 1));
}

TEST(Study, NoUpdateKeepsParametersAndEvaluatesEveryQuarter) {
    auto plan = small_plan(ScenarioName::DecreasingEvents, CohortStyle::OpenCohort, {"no_update", "recal_quarterly"}, 1);
    const auto r = run_replicate(plan, 0);
    std::vector<const ReportRow*> nu, rq;
    for (const auto& row : r.rows) (row.strategy == "no_update" ? nu : rq).push_back(&row);
    ASSERT_EQ(nu.size(), 5u);
    ASSERT_EQ(rq.size(), 5u);
    for (int u = 0; u < 5; ++u) {
        EXPECT_EQ(nu[static_cast<std::size_t>(u)]->period, u + 1);
        EXPECT_TRUE(same_coefficients(nu[static_cast<std::size_t>(u)]->coefficients, nu[0]->coefficients));
        // Recalibration leaves hazard ratios and hence the ranking unchanged.
        EXPECT_TRUE(same_coefficients(rq[static_cast<std::size_t>(u)]->coefficients, nu[0]->coefficients));
        EXPECT_EQ(rq[static_cast<std::size_t>(u)]->metrics.c_index, nu[static_cast<std::size_t>(u)]->metrics.c_index);
    }
    // Same model in quarter 1 for every strategy.
    EXPECT_EQ(rq[0]->metrics.cal_intercept, nu[0]->metrics.cal_intercept);
    std::size_t updates = 0;
    for (const auto& up : r.updates) {
        EXPECT_EQ(up.strategy, "recal_quarterly");
        ++updates;
    }
    EXPECT_EQ(updates, 4u);
}

TEST(Study, SingleStrategyReplicateMatchesPlanReplicate) {
    auto plan = small_plan(ScenarioName::NewTreatment, CohortStyle::OpenCohort, {"refit_quarterly"}, 1);
    const auto reports = run_replicate(plan, plan.strategies[0], replicate_seed(plan.root_seed, 0));
    const auto r = run_replicate(plan, 0);
    ASSERT_EQ(reports.size(), 5u);
    for (std::size_t u = 0; u < 5; ++u) {
        EXPECT_EQ(reports[u].c_index, r.rows[u].metrics.c_index);
        EXPECT_EQ(reports[u].brier, r.rows[u].metrics.brier);
    }
    // Treatment enters the refitted model once it is available.
    EXPECT_TRUE(std::isnan(r.rows[1].coefficients[kTreatment]));
    EXPECT_FALSE(std::isnan(r.rows[2].coefficients[kTreatment]));
    EXPECT_LT(r.rows[4].coefficients[kTreatment], 0.0);
}

TEST(Study, OneTimeUpdateAppliesFromItsEffectivePeriod) {
    auto plan = small_plan(ScenarioName::DecreasingEvents, CohortStyle::OpenCohort, {"no_update", "refit_once@0.46"}, 1);
    const auto r = run_replicate(plan, 0);
    std::vector<const ReportRow*> nu, once;
    for (const auto& row : r.rows) (row.strategy == "no_update" ? nu : once).push_back(&row);
    for (std::size_t u = 0; u < 3; ++u) EXPECT_TRUE(same_coefficients(once[u]->coefficients, nu[u]->coefficients));
    EXPECT_FALSE(same_coefficients(once[3]->coefficients, nu[3]->coefficients));
    EXPECT_TRUE(same_coefficients(once[4]->coefficients, once[3]->coefficients));
    ASSERT_EQ(r.updates.size(), 1u);
    EXPECT_EQ(r.updates[0].period, 3);
}

TEST(Study, EvaluationUsesOnlyOutOfSampleSubjects) {
    // In new cohorts every quarter has fresh ids, so the data a model was
    // fitted on never overlaps the quarter it is evaluated on.
    auto plan = small_plan(ScenarioName::DecreasingEvents, CohortStyle::NewCohorts, {"refit_quarterly"}, 1);
    const auto data = generate_replicate(plan.scenario, replicate_seed(plan.root_seed, 0));
    std::set<std::uint64_t> seen;
    for (const auto& r : data.dev.records) seen.insert(r.id.value);
    for (const auto& d : data.periods) {
        for (const auto& r : d.records) EXPECT_EQ(seen.count(r.id.value), 0u);
        for (const auto& r : d.records) seen.insert(r.id.value);
    }
}

TEST(Study, AggregationShapeAndDeterminismAcrossWorkers) {
    auto plan = small_plan(ScenarioName::NewTreatment, CohortStyle::OpenCohort,
                           {"no_update", "refit_quarterly", "bayes_quarterly", "recal_once@0.25"}, 4);
    const auto one = run_study(plan, 1);
    const auto many = run_study(plan, 3);
    EXPECT_EQ(one.rows.size(), 4u * 4u * 5u);
    EXPECT_EQ(one.aggregate.size(), 4u * 5u);
    EXPECT_EQ(one.wilcoxon.size(), 3u * 5u);
    EXPECT_EQ(replicates_csv(one), replicates_csv(many));
    EXPECT_EQ(aggregate_csv(one), aggregate_csv(many));
    EXPECT_EQ(wilcoxon_csv(one.wilcoxon), wilcoxon_csv(many.wilcoxon));
    EXPECT_EQ(failures_csv(one), failures_csv(many));

    const auto v = one.values("refit_quarterly", 3, "c_index");
    ASSERT_EQ(v.size(), 4u);
    const auto s = summarize(v);
    EXPECT_EQ(one.summary("refit_quarterly", 3, "c_index").mean, s.mean);
    EXPECT_EQ(one.summary("refit_quarterly", 3, "c_index").mcse, s.mcse);
    const auto f = one.failure("refit_quarterly", 2);
    ASSERT_TRUE(f.has_value());
    EXPECT_EQ(f->attempts, 4u);
    EXPECT_FALSE(one.failure("no_update", 2).has_value());
    EXPECT_THROW(one.values("refit_quarterly", 3, "auc"), DomainError);

    const auto w = compare_strategies(one, "bayes_quarterly", "no_update", 4);
    EXPECT_EQ(w.test.n, 4u);
}

TEST(Study, EmitReportsWritesAllFiles) {
    auto plan = small_plan(ScenarioName::DecreasingEvents, CohortStyle::OpenCohort, {"no_update", "recal_quarterly"}, 2);
    const auto r = run_study(plan, 2);
    const auto dir = std::filesystem::temp_directory_path() / "dynsurv_test_reports";
    std::filesystem::remove_all(dir);
    emit_reports(r, dir);
    for (const char* f : {"replicates.csv", "aggregate.csv", "plot_cindex.csv", "plot_cal_intercept.csv",
                          "failures.csv", "wilcoxon.csv", "manifest.json"})
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;

    const auto rep = slurp(dir / "replicates.csv");
    EXPECT_EQ(rep.substr(0, rep.find('\n')),
              "scenario,cohort_style,strategy,period,replicate,c_index,brier,cal_intercept,cal_slope,retained_previous,"
              "coef_age,coef_prog_index,coef_comorbidity,coef_treatment,coef_comorbidity_x_treatment");
    EXPECT_EQ(std::count(rep.begin(), rep.end(), '\n'), 1 + 2 * 2 * 5);
    EXPECT_EQ(slurp(dir / "plot_cindex.csv").substr(0, 26), "period,strategy,mean,mcse\n");

    const auto manifest = json::parse(slurp(dir / "manifest.json"));
    EXPECT_EQ(manifest.at("version"), kVersion);
    EXPECT_EQ(plan_from_json(manifest.at("plan")).n_sim, 2);

    const auto table = read_result_table((dir / "replicates.csv").string());
    const auto cmp = compare_result_tables(table, "recal_quarterly", table, "no_update", "c_index");
    ASSERT_EQ(cmp.size(), 5u);
    for (const auto& row : cmp) EXPECT_EQ(row.test.n, 0u);
    EXPECT_THROW(compare_result_tables(table, "bayes_quarterly", table, "no_update", "c_index"), DomainError);
    std::filesystem::remove_all(dir);
}
