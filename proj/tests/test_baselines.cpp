#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "mixforge/baselines.hpp"
#include "mixforge/error.hpp"
#include "mixforge/synthetic.hpp"

using namespace mixforge;
using testing_helpers::matrix;

namespace {

struct Problem {
  FeatureMatrix x;
  std::vector<double> y;
};

Problem linear_problem(std::size_t n, std::size_t d, double noise, std::uint64_t seed) {
  Rng rng(seed);
  Problem p;
  for (std::size_t j = 0; j < d; ++j) p.x.names.push_back("x" + std::to_string(j));
  p.x.rows = n;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 1.5;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = rng.normal() * static_cast<double>(j + 1);
      p.x.values.push_back(v);
      acc += v * (j % 2 ? -0.7 : 2.0);
    }
    p.y.push_back(acc + noise * rng.normal());
  }
  return p;
}

}  // namespace

TEST(Linear, OlsRecoversExactLine) {
  const auto x = matrix({"x"}, {{0}, {1}, {2}, {3}, {4}});
  const std::vector<double> y = {1, 4, 7, 10, 13};
  const auto m = fit_ols(x, y);
  EXPECT_NEAR(m.coefficients()[0], 3.0, 1e-10);
  EXPECT_NEAR(m.intercept(), 1.0, 1e-10);
}

TEST(Linear, OlsRejectsRankDeficientDesign) {
  const auto x = matrix({"a", "b"}, {{1, 2}, {2, 4}, {3, 6}, {4, 8}});
  const std::vector<double> y = {1, 2, 3, 5};
  EXPECT_THROW(fit_ols(x, y), DataError);
  EXPECT_NO_THROW(fit_ridge(x, y, 1.0));
}

TEST(Linear, RidgeApproachesOlsAsLambdaVanishes) {
  const auto p = linear_problem(80, 4, 0.3, 1);
  const auto ols = fit_ols(p.x, p.y);
  const auto ridge = fit_ridge(p.x, p.y, 1e-9);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(ridge.coefficients()[j], ols.coefficients()[j], 1e-7);
  EXPECT_NEAR(ridge.intercept(), ols.intercept(), 1e-7);
}

TEST(Linear, RidgeSatisfiesItsNormalEquations) {
  const auto p = linear_problem(60, 5, 1.0, 2);
  const double lambda = 3.7;
  const auto m = fit_ridge(p.x, p.y, lambda);
  const std::size_t n = p.x.rows, d = p.x.cols();
  std::vector<double> mean(d, 0.0);
  double ymean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += p.x.at(i, j) / static_cast<double>(n);
    ymean += p.y[i] / static_cast<double>(n);
  }
  // Xc'(yc - Xc b) - lambda b = 0
  for (std::size_t j = 0; j < d; ++j) {
    double g = -lambda * m.coefficients()[j];
    for (std::size_t i = 0; i < n; ++i) {
      double fit = 0.0;
      for (std::size_t k = 0; k < d; ++k) fit += (p.x.at(i, k) - mean[k]) * m.coefficients()[k];
      g += (p.x.at(i, j) - mean[j]) * ((p.y[i] - ymean) - fit);
    }
    EXPECT_LT(std::abs(g), 1e-8);
  }
}

TEST(Linear, LassoShrinksEverythingAtLargeAlpha) {
  const auto p = linear_problem(50, 3, 0.5, 3);
  const auto m = fit_lasso(p.x, p.y, 1e6);
  for (double c : m.coefficients()) EXPECT_EQ(c, 0.0);
  double ymean = 0.0;
  for (double v : p.y) ymean += v / 50.0;
  EXPECT_NEAR(m.intercept(), ymean, 1e-12);

  const auto tiny = fit_lasso(p.x, p.y, 1e-8);
  const auto ols = fit_ols(p.x, p.y);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(tiny.coefficients()[j], ols.coefficients()[j], 1e-5);
}

TEST(Linear, RidgeCvPicksFromTheGrid) {
  const auto p = linear_problem(100, 3, 0.2, 4);
  double chosen = -1;
  const auto grid = default_ridge_grid();
  ASSERT_EQ(grid.size(), 10u);
  EXPECT_NEAR(grid.front(), 1e-3, 1e-15);
  EXPECT_NEAR(grid.back(), 1e3, 1e-9);
  fit_ridge_cv(p.x, p.y, grid, 5, 7, &chosen);
  EXPECT_NE(std::find(grid.begin(), grid.end(), chosen), grid.end());
  EXPECT_LT(chosen, 10.0);  // nearly noiseless data wants little shrinkage
}

TEST(Trees, UnlimitedCartInterpolatesDistinctRows) {
  const auto p = linear_problem(40, 2, 1.0, 5);
  std::vector<double> w(40, 1.0);
  std::vector<std::size_t> rows(40);
  std::iota(rows.begin(), rows.end(), 0);
  const auto t = DecisionTreeRegressor::fit(p.x, p.y, w, rows, {}, 1);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_NEAR(t.predict(p.x.row(i)), p.y[i], 1e-12);

  CartParams stump;
  stump.max_depth = 1;
  const auto s = DecisionTreeRegressor::fit(p.x, p.y, w, rows, stump, 1);
  EXPECT_EQ(s.tree().depth(), 1u);
}

TEST(Trees, OneUnbootstrappedEstimatorEqualsTheBaseTree) {
  const auto p = linear_problem(30, 3, 1.0, 6);
  BaggingParams bp;
  bp.n_estimators = 1;
  bp.bootstrap = false;
  const auto bag = fit_bagged_trees(p.x, p.y, bp, 11);
  std::vector<double> w(30, 1.0);
  std::vector<std::size_t> rows(30);
  std::iota(rows.begin(), rows.end(), 0);
  const auto tree = DecisionTreeRegressor::fit(p.x, p.y, w, rows, bp.tree, derive_seed(11, 0));
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(bag.predict(p.x.row(i)), tree.predict(p.x.row(i)));
}

TEST(Ensembles, VotingIsTheExactMeanOfItsMembers) {
  const auto p = linear_problem(60, 3, 1.0, 7);
  BaselineParams params;
  params.n_estimators = 5;
  params.gbt.n_rounds = 20;
  const auto vote = fit_baseline(BaselineKind::voting_mean, p.x, p.y, params, 9);
  const auto a = fit_baseline(BaselineKind::ridge, p.x, p.y, params, derive_seed(9, 1));
  const auto b = fit_baseline(BaselineKind::random_forest, p.x, p.y, params, derive_seed(9, 2));
  const auto c = fit_baseline(BaselineKind::gradient_boosting, p.x, p.y, params, derive_seed(9, 3));
  for (std::size_t i = 0; i < 60; ++i) {
    const auto r = p.x.row(i);
    EXPECT_NEAR(vote->predict(r), (a->predict(r) + b->predict(r) + c->predict(r)) / 3.0, 1e-12);
  }
}

TEST(Ensembles, AdaBoostBeatsAConstant) {
  const auto p = linear_problem(120, 2, 0.5, 8);
  CartParams tree;
  tree.max_depth = 3;
  const auto m = fit_adaboost_r2(p.x, p.y, 30, tree, 1);
  EXPECT_GT(m.size(), 0u);
  const auto r = evaluate(p.y, m.predict(p.x));
  EXPECT_GT(*r.r2, 0.8);
}

TEST(Ensembles, EveryKindFitsAndIsDeterministic) {
  const auto p = linear_problem(60, 3, 0.5, 9);
  BaselineParams params;
  params.n_estimators = 4;
  params.gbt.n_rounds = 15;
  for (auto kind : all_baseline_kinds()) {
    SCOPED_TRACE(std::string(to_string(kind)));
    EXPECT_EQ(parse_baseline_kind(to_string(kind)), kind);
    const auto a = fit_baseline(kind, p.x, p.y, params, 3)->predict(p.x);
    const auto b = fit_baseline(kind, p.x, p.y, params, 3)->predict(p.x);
    EXPECT_EQ(a, b);
    for (double v : a) EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_THROW(parse_baseline_kind("svm"), ConfigError);
}

TEST(Preselect, RanksTrainedAndExternalRows) {
  const auto bench = make_synthetic_uhpc({.rows = 200, .corrupt_fraction = 0, .seed = 4});
  const auto [train, test] = split(bench.data, 0.7, 1);
  BaselineParams params;
  params.n_estimators = 5;
  params.gbt.n_rounds = 30;
  const std::vector<BaselineKind> kinds = {BaselineKind::ols_linear, BaselineKind::decision_tree,
                                           BaselineKind::gradient_boosting};
  LabeledReport ext;
  ext.label = "external";
  ext.test.rmse = 1e9;
  ext.test.r2 = -1;
  const std::vector<LabeledReport> external = {ext};
  const auto report =
      preselect(train, test, "Compressive strength", kinds, SelectionGate{1e6, -1e6}, params, 5, external);
  ASSERT_EQ(report.rows.size(), 4u);
  EXPECT_EQ(report.rows.back().label, "external");
  EXPECT_TRUE(report.rows.back().external);
  for (std::size_t i = 0; i + 1 < report.rows.size(); ++i) {
    EXPECT_LE(report.rows[i].test->rmse, report.rows[i + 1].test->rmse);
  }
  EXPECT_EQ(report.selection.passing.size(), 3u);
  EXPECT_NE(report.to_csv().find("ols_linear"), std::string::npos);
  EXPECT_NE(report.to_table().find("gradient_boosting"), std::string::npos);
  const auto again =
      preselect(train, test, "Compressive strength", kinds, SelectionGate{1e6, -1e6}, params, 5, external);
  EXPECT_EQ(again.to_json().dump(), report.to_json().dump());
}
