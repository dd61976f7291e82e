#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "mixforge/baselines.hpp"
#include "mixforge/error.hpp"
#include "mixforge/metrics.hpp"
#include "mixforge/rng.hpp"
#include "oracles.hpp"

using namespace mixforge;

TEST(Metrics, MatchHandEvaluatedFixtures) {
  for (const auto& f : oracle::metric_fixtures()) {
    SCOPED_TRACE(::testing::PrintToString(f.y));
    const auto r = evaluate(f.y, f.y_hat);
    EXPECT_NEAR(r.mae, f.mae, 1e-9);
    EXPECT_NEAR(r.mse, f.mse, 1e-9);
    EXPECT_NEAR(r.rmse, f.rmse, 1e-9);
    EXPECT_NEAR(r.maxae, f.maxae, 1e-9);
    ASSERT_EQ(r.pmae_percent.has_value(), f.pmae.has_value());
    if (f.pmae) EXPECT_NEAR(*r.pmae_percent, *f.pmae, 1e-9);
    ASSERT_EQ(r.r2.has_value(), f.r2.has_value());
    if (f.r2) EXPECT_NEAR(*r.r2, *f.r2, 1e-9);
    EXPECT_EQ(r.pmae_skipped, f.skipped);
  }
}

TEST(Metrics, Invariants) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 2 + rng.index(30);
    std::vector<double> y(m), p(m);
    for (std::size_t i = 0; i < m; ++i) {
      y[i] = rng.normal() * 10;
      p[i] = rng.normal() * 10;
    }
    const auto r = evaluate(y, p);
    EXPECT_GE(r.maxae, r.mae);
    EXPECT_NEAR(r.rmse * r.rmse, r.mse, 1e-12 * std::max(1.0, r.mse));
    ASSERT_TRUE(r.r2);
    EXPECT_LE(*r.r2, 1.0);

    double mean = 0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(m);
    EXPECT_NEAR(*evaluate(y, std::vector<double>(m, mean)).r2, 0.0, 1e-12);
  }
}

TEST(Metrics, Errors) {
  const std::vector<double> a = {1, 2}, b = {1};
  EXPECT_THROW(evaluate(a, b), DataError);
  EXPECT_THROW(evaluate(std::vector<double>{}, std::vector<double>{}), DataError);
}

TEST(Metrics, JsonRoundTripKeepsUndefinedFields) {
  const auto r = evaluate(std::vector<double>{0, 0}, std::vector<double>{1, -1});
  const auto back = MetricsReport::from_json(r.to_json());
  EXPECT_FALSE(back.r2);
  EXPECT_FALSE(back.pmae_percent);
  EXPECT_EQ(back.pmae_skipped, 2u);
}

TEST(SelectOptimal, OrdersByRmseThenR2ThenLabel) {
  auto rep = [](const char* label, double rmse, std::optional<double> r2) {
    LabeledReport r;
    r.label = label;
    r.test.rmse = rmse;
    r.test.r2 = r2;
    return r;
  };
  const std::vector<LabeledReport> reports = {rep("c", 2, 0.8), rep("b", 2, 0.9), rep("a", 1, std::nullopt),
                                              rep("d", 2, 0.9)};
  const auto res = select_optimal(reports, {1.5, 0.0});
  EXPECT_EQ(res.ranked, (std::vector<std::string>{"a", "b", "d", "c"}));
  EXPECT_TRUE(res.passing.empty());  // "a" has no R²

  const std::vector<LabeledReport> single = {rep("only", 3, 0.5)};
  EXPECT_EQ(select_optimal(single).ranked.front(), "only");
}

// The reference baseline test metrics and the stated rule (RMSE < 30 and
// R² > 0.18) do not single out the five named models: six more rows clear
// both bounds. These assertions pin what the rule does produce; the
// acceptance runner reports the mismatch against the named five.
TEST(SelectOptimal, BaselineFixtureUnderTheStatedGate) {
  std::ifstream in(MIXFORGE_FIXTURES "/baseline_reports.json");
  const auto reports = load_external_reports(nlohmann::json::parse(in));
  ASSERT_EQ(reports.size(), 21u);
  const auto res = select_optimal(reports, {30.0, 0.18});
  const std::set<std::string> passing(res.passing.begin(), res.passing.end());
  for (const char* named : {"RandomForest", "ExtraTreeRegressor", "LightGBM", "CatBoost", "XGBoost"}) {
    EXPECT_TRUE(passing.count(named)) << named;
  }
  for (const char* out : {"LinearRegression", "RidgeRegression", "RidgeCV", "Lasso", "SVM", "BayesianRidge",
                          "KernelRidge", "DecisionTree", "StackingRegressor", "ANN"}) {
    EXPECT_FALSE(passing.count(out)) << out;
  }
  EXPECT_EQ(passing.size(), 11u);
  EXPECT_EQ(res.ranked.front(), "BlendingEnsemble");
}

TEST(SelectOptimal, ScaleEquivariance) {
  Rng rng(17);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> y(10), p(10), cy(10), cp(10);
    const double c = 0.5 + 10 * rng.uniform();
    for (int i = 0; i < 10; ++i) {
      y[i] = 1 + rng.uniform() * 100;
      p[i] = y[i] + rng.normal();
      cy[i] = c * y[i];
      cp[i] = c * p[i];
    }
    const auto a = evaluate(y, p), b = evaluate(cy, cp);
    EXPECT_NEAR(b.rmse, c * a.rmse, 1e-9 * b.rmse);
    EXPECT_NEAR(b.mse, c * c * a.mse, 1e-9 * b.mse);
    EXPECT_NEAR(*b.r2, *a.r2, 1e-9);
    EXPECT_NEAR(*b.pmae_percent, *a.pmae_percent, 1e-9 * *a.pmae_percent);
  }
}
