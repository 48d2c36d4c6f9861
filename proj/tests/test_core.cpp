#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace dynsurv;

TEST(CovariateSpec, RejectsDuplicatesAndMismatchedKinds) {
    EXPECT_THROW(CovariateSpec({"a", "a"}, {CovariateKind::Continuous, CovariateKind::Binary}), Error);
    EXPECT_THROW(CovariateSpec({"a"}, {}), DimensionError);
    EXPECT_THROW(CovariateSpec({""}, {CovariateKind::Binary}), Error);
}

TEST(CovariateSpec, LookupAndCoverage) {
    const CovariateSpec big({"age", "prog", "trt"}, {CovariateKind::Continuous, CovariateKind::Continuous, CovariateKind::Binary});
    const CovariateSpec small({"trt", "age"}, {CovariateKind::Binary, CovariateKind::Continuous});
    EXPECT_EQ(big.index_of("prog"), 1u);
    EXPECT_FALSE(big.index_of("x").has_value());
    EXPECT_TRUE(big.covers(small));
    EXPECT_FALSE(small.covers(big));
    EXPECT_EQ(big.positions_of(small), (std::vector<std::size_t>{2, 0}));
    EXPECT_THROW(small.positions_of(big), DimensionError);
}

TEST(StepFunction, RightContinuousWithLeftLimits) {
    const StepFunction h(StepRole::CumulativeHazard, {1.0, 2.0}, {0.1, 0.3});
    EXPECT_EQ(h.eval(0.0), 0.0);
    EXPECT_EQ(h.eval(0.999), 0.0);
    EXPECT_EQ(h.eval(1.0), 0.1);
    EXPECT_EQ(h.eval_left(1.0), 0.0);
    EXPECT_EQ(h.eval(1.5), 0.1);
    EXPECT_EQ(h.eval(2.0), 0.3);
    EXPECT_EQ(h.eval_left(2.0), 0.1);
    EXPECT_EQ(h.eval(100.0), 0.3);
    EXPECT_EQ(h(2.5), step_eval(h, 2.5));
}

TEST(StepFunction, RejectsInvalidShapesAndTimes) {
    EXPECT_THROW(StepFunction(StepRole::CumulativeHazard, {1.0, 1.0}, {0.1, 0.2}), DomainError);
    EXPECT_THROW(StepFunction(StepRole::CumulativeHazard, {1.0, 2.0}, {0.3, 0.2}), DomainError);
    EXPECT_THROW(StepFunction(StepRole::Survival, {1.0}, {1.2}), DomainError);
    EXPECT_THROW(StepFunction(StepRole::Survival, {1.0, 2.0}, {0.5, 0.6}), DomainError);
    EXPECT_THROW(StepFunction(StepRole::CumulativeHazard, {1.0}, {}), DimensionError);
    const StepFunction s(StepRole::Survival, {1.0}, {0.5});
    EXPECT_EQ(s.eval(0.5), 1.0);
    EXPECT_THROW(s.eval(-0.1), DomainError);
    EXPECT_THROW(s.eval(std::numeric_limits<double>::quiet_NaN()), DomainError);
    EXPECT_TRUE(StepFunction::zero_hazard().is_flat());
    EXPECT_EQ(StepFunction::zero_hazard().eval(5.0), 0.0);
}

TEST(Dataset, ValidateAndDesign) {
    const auto spec = testutil::continuous_spec(2);
    auto d = testutil::make_dataset(spec, {{1, 2}, {3, 4}}, {0.5, 1.0}, {1, 0});
    EXPECT_NO_THROW(d.validate());
    EXPECT_EQ(d.n_events(), 1u);
    const CovariateSpec rev({"x2"}, {CovariateKind::Continuous});
    const Eigen::MatrixXd x = d.design(rev);
    EXPECT_EQ(x.rows(), 2);
    EXPECT_EQ(x(1, 0), 4.0);
    d.records[0].time_observed = -1.0;
    EXPECT_THROW(d.validate(), DomainError);
    d.records[0].time_observed = 1.0;
    d.records[0].covariates.pop_back();
    EXPECT_THROW(d.validate(), DimensionError);
}

TEST(Models, ValidateDimensions) {
    CoxModel m;
    m.spec = testutil::continuous_spec(1);
    m.beta = Eigen::VectorXd::Constant(1, 0.5);
    m.beta_se = Eigen::VectorXd::Constant(1, 0.1);
    EXPECT_NO_THROW(m.validate());
    m.beta_se[0] = 0.0;
    EXPECT_THROW(m.validate(), DomainError);

    BayesPHModel b;
    b.spec = testutil::continuous_spec(1);
    b.mode = Eigen::VectorXd::Zero(2);
    b.point_estimates = b.mode;
    b.covariance = Eigen::MatrixXd::Identity(2, 2);
    EXPECT_NO_THROW(b.validate());
    b.covariance(0, 0) = -1.0;
    EXPECT_THROW(b.validate(), DomainError);
    b.covariance = Eigen::MatrixXd::Identity(3, 3);
    EXPECT_THROW(b.validate(), DimensionError);
}

TEST(FitError, CarriesKind) {
    const FitError e(FitFailure::DegenerateCovariate, "x");
    EXPECT_EQ(e.kind(), FitFailure::DegenerateCovariate);
    EXPECT_NE(std::string(e.what()).find("x"), std::string::npos);
}
