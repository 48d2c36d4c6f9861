#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace dynsurv;

namespace {

EvalInput toy(double horizon, std::vector<double> surv = {0.2, 0.5, 0.4, 0.4, 0.6, 0.9}) {
    const std::vector<Outcome> outcomes{{1, true}, {2, false}, {2, true}, {3, false}, {4, true}, {5, false}};
    EvalInput in;
    in.horizon = horizon;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        in.outcomes.push_back(outcomes[i]);
        in.predictions.push_back({SubjectId{i}, horizon, surv[i], -std::log(surv[i])});
        in.cumhaz_at_s.push_back(0.1);
        in.baseline_cumhaz_at_s.push_back(0.1);
    }
    return in;
}

EvalInput random_input(std::size_t n, std::uint64_t seed, bool coarse) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    EvalInput in;
    in.horizon = 0.6;
    for (std::size_t i = 0; i < n; ++i) {
        double t = unif(rng);
        double s = unif(rng);
        if (coarse) {
            t = std::round(t * 10.0) / 10.0;
            s = std::round(s * 5.0) / 5.0;
        }
        in.outcomes.push_back({t, unif(rng) < 0.6});
        in.predictions.push_back({SubjectId{i}, in.horizon, s, 0.0});
        in.cumhaz_at_s.push_back(0.1);
        in.baseline_cumhaz_at_s.push_back(0.1);
    }
    return in;
}

}  // namespace

TEST(Metrics, ReverseKaplanMeierHandOracle) {
    const auto g = censoring_km(toy(4.5));
    EXPECT_EQ(g.knots(), (std::vector<double>{2, 3, 5}));
    EXPECT_EQ(g.values(), (std::vector<double>{0.75, 0.5, 0.0}));
    EXPECT_EQ(g.eval_left(2.0), 1.0);
    EXPECT_EQ(g.eval_left(4.0), 0.5);
}

TEST(Metrics, CIndexHandOracle) {
    // Comparable pairs: 5 from t=1 (weight 1), 3 from t=2 (weight 1, one
    // tied prediction), 1 from t=4 (weight 1/0.5^2 = 4).
    const auto c = ipcw_cindex(toy(4.5));
    ASSERT_TRUE(c.has_value());
    EXPECT_EQ(*c, 11.5 / 12.0);
    // Horizon before t=4 drops the last event's pair.
    EXPECT_EQ(*ipcw_cindex(toy(3.0)), 7.5 / 8.0);
}

TEST(Metrics, CIndexMatchesPairEnumeration) {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const auto in = random_input(150, seed, seed % 2 == 0);
        const auto c = ipcw_cindex(in);
        ASSERT_TRUE(c.has_value());
        EXPECT_NEAR(*c, oracle::cindex_pairs(in), 1e-12) << "seed " << seed;
    }
}

TEST(Metrics, CIndexExtremesAndUndefined) {
    std::vector<double> perfect{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    EXPECT_EQ(*ipcw_cindex(toy(10.0, perfect)), 1.0);
    std::vector<double> reversed(perfect.rbegin(), perfect.rend());
    EXPECT_EQ(*ipcw_cindex(toy(10.0, reversed)), 0.0);
    EXPECT_EQ(*ipcw_cindex(toy(10.0, std::vector<double>(6, 0.5))), 0.5);
    auto none = toy(10.0);
    for (auto& o : none.outcomes) o.event = false;
    EXPECT_FALSE(ipcw_cindex(none).has_value());
}

TEST(Metrics, CIndexInvariantToMonotoneTransform) {
    auto in = random_input(300, 42, false);
    const double c = *ipcw_cindex(in);
    for (auto& p : in.predictions) p.survival_prob = std::pow(p.survival_prob, 3.0);
    EXPECT_EQ(*ipcw_cindex(in), c);
}

TEST(Metrics, BrierHandOracle) {
    // v = 3, G(3-) = 0.75: events 0.2^2 + 0.4^2, survivors at or beyond v
    // weighted 1/0.75, the censoring at 2 contributes zero.
    const auto b = ipcw_brier(toy(3.0));
    const double expected = (0.04 + 0.16 + (0.36 + 0.16 + 0.01) / 0.75) / 6.0;
    EXPECT_NEAR(b.value, expected, 1e-15);
    EXPECT_EQ(b.dropped, 0u);
}

TEST(Metrics, BrierPerfectPredictions) {
    // Everyone observed to v: survival 1 for survivors and 0 for events is perfect.
    EvalInput in;
    in.horizon = 1.0;
    for (int i = 0; i < 4; ++i) {
        const bool ev = i % 2 == 0;
        in.outcomes.push_back({ev ? 0.5 : 1.0, ev});
        in.predictions.push_back({SubjectId{static_cast<std::uint64_t>(i)}, 1.0, ev ? 0.0 : 1.0, 0.0});
    }
    EXPECT_EQ(ipcw_brier(in).value, 0.0);
}

TEST(Metrics, BrierHeavyCensoringHandOracle) {
    // Two censorings at 0.5 out of three at risk: G(0.8-) = 1/3; the one
    // survivor at v = 0.8 carries weight 3.
    EvalInput in;
    in.horizon = 0.8;
    in.outcomes = {{0.5, false}, {0.5, false}, {1.0, false}};
    for (std::uint64_t i = 0; i < 3; ++i) in.predictions.push_back({SubjectId{i}, 0.8, 0.5, 0.0});
    const auto b = ipcw_brier(in);
    EXPECT_NEAR(b.value, (0.25 * 3.0) / 3.0, 1e-15);
    EXPECT_EQ(b.dropped, 0u);
}

TEST(Metrics, CalibrationInterceptClosedForm) {
    auto in = toy(3.0);
    in.cumhaz_at_s = {0.5, 0.2, 0.3, 0.4, 0.1, 0.2};
    const auto cal = calibration(in);
    EXPECT_NEAR(cal.intercept, std::log(2.0 / 1.7), 1e-14);
}

TEST(Metrics, CalibrationSlopeMatchesProfileLikelihoodOracle) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> norm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    EvalInput in;
    in.horizon = 1.0;
    const double lambda = 0.3, true_slope = 0.7;
    for (std::uint64_t i = 0; i < 3000; ++i) {
        const double eta = norm(rng);
        const double t = -std::log(1.0 - unif(rng)) / (lambda * std::exp(true_slope * eta));
        const double c = 2.0 * unif(rng);
        const double obs = std::min({t, c});
        in.outcomes.push_back({obs, t <= c});
        const double s = std::min(obs, in.horizon);
        in.predictions.push_back({SubjectId{i}, 1.0, std::exp(-lambda * std::exp(eta)), eta});
        in.cumhaz_at_s.push_back(lambda * s * std::exp(eta));
        in.baseline_cumhaz_at_s.push_back(lambda * s);
    }
    const auto cal = calibration(in);

    // Profile out the intercept in closed form and golden-section the slope.
    std::vector<double> d, x, h0;
    for (std::size_t i = 0; i < in.size(); ++i) {
        d.push_back(in.outcomes[i].event && in.outcomes[i].time <= 1.0 ? 1.0 : 0.0);
        x.push_back(in.predictions[i].linear_predictor);
        h0.push_back(in.baseline_cumhaz_at_s[i]);
    }
    const double events = std::accumulate(d.begin(), d.end(), 0.0);
    auto profile = [&](double b) {
        double denom = 0.0, dx = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) { denom += std::exp(b * x[i]) * h0[i]; dx += d[i] * x[i]; }
        return b * dx - events * std::log(denom);
    };
    double lo = -3.0, hi = 3.0;
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int k = 0; k < 200; ++k) {
        const double m1 = hi - r * (hi - lo), m2 = lo + r * (hi - lo);
        if (profile(m1) < profile(m2)) lo = m1; else hi = m2;
    }
    EXPECT_NEAR(cal.slope, 0.5 * (lo + hi), 1e-6);
    EXPECT_NEAR(cal.slope, true_slope, 0.1);
}

TEST(Metrics, CalibrationClampsTinyHazards) {
    auto in = toy(3.0);
    in.cumhaz_at_s[0] = 0.0;
    in.baseline_cumhaz_at_s[1] = 0.0;
    const auto cal = calibration(in);
    EXPECT_EQ(cal.clamped, 2u);
    EXPECT_TRUE(std::isfinite(cal.slope));
    auto no_events = toy(3.0);
    for (auto& o : no_events.outcomes) o.event = false;
    EXPECT_TRUE(std::isnan(calibration(no_events).intercept));
}

TEST(Metrics, ValidationAndReport) {
    auto in = toy(3.0);
    in.predictions[0].survival_prob = 1.5;
    EXPECT_THROW(ipcw_cindex(in), DomainError);
    in = toy(3.0);
    in.predictions.pop_back();
    EXPECT_THROW(ipcw_brier(in), DimensionError);
    in = toy(3.0);
    in.cumhaz_at_s.pop_back();
    EXPECT_THROW(calibration(in), DimensionError);

    const auto r = evaluate_metrics(toy(3.0), 2, "refit_quarterly");
    EXPECT_EQ(r.n, 6u);
    EXPECT_EQ(r.n_events, 2u);
    EXPECT_EQ(r.period, 2);
    EXPECT_EQ(r.strategy, "refit_quarterly");
    EXPECT_EQ(*r.c_index, *ipcw_cindex(toy(3.0)));
}
