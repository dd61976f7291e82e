#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "mixforge/error.hpp"
#include "mixforge/gbtree.hpp"
#include "mixforge/metrics.hpp"
#include "oracles.hpp"

using namespace mixforge;
using testing_helpers::matrix;

namespace {

FeatureMatrix overfit_rows() {
  return matrix({"a", "b"}, {{0.1, 1}, {0.9, 3}, {0.4, 2}, {0.7, 5}, {0.2, 4}, {0.5, 8}, {0.8, 7}, {0.3, 6}});
}
const std::vector<double> kOverfitY = {3.2, -1.5, 0.7, 4.4, -2.9, 1.1, 0.0, 2.6};

GbtConfig overfit_config() {
  GbtConfig c;
  c.max_depth = 6;
  c.n_rounds = 200;
  c.lambda_l1 = 0.05;
  c.lambda_l2 = 0.05;
  c.gamma = 0.0;
  c.learning_rate = 1.0;
  return c;
}

}  // namespace

TEST(SplitGain, HandEvaluations) {
  EXPECT_NEAR(split_gain(-4, 2, 6, 3, 0, 1, 0), 6.833333333333333, 1e-9);
  EXPECT_NEAR(split_gain(3, 2, 3, 2, 0, 0, 0), 0.0, 1e-12);
  // identical children under l2 > 0: splitting loses 0.5 * (9/3 + 9/3 - 36/5)
  EXPECT_NEAR(split_gain(3, 2, 3, 2, 0, 1, 0), -0.6, 1e-12);
  EXPECT_NEAR(split_gain(-1.3, 4, 2.2, 7, 0.1, 0.6, 0.9) - split_gain(-1.3, 4, 2.2, 7, 0.1, 0.6, 0), -0.9, 1e-12);
}

TEST(LeafWeight, HandEvaluationsAndDeadZone) {
  EXPECT_NEAR(leaf_weight(-4, 2, 0, 1), 4.0 / 3.0, 1e-9);
  EXPECT_NEAR(leaf_weight(-4, 2, 0.5, 1), 3.5 / 3.0, 1e-9);
  EXPECT_EQ(leaf_weight(0.3, 2, 0.5, 1), 0.0);
  EXPECT_EQ(leaf_weight(-0.5, 2, 0.5, 1), 0.0);
  EXPECT_EQ(soft_threshold(-2, 0.5), -1.5);
}

TEST(Cuts, OneBinPerDistinctValueOrQuantiles) {
  const std::vector<double> v = {3, 1, 2, 2, 3};
  EXPECT_EQ(histogram_cuts(v, 256), (std::vector<double>{1.5, 2.5}));
  std::vector<double> many;
  for (int i = 0; i < 1000; ++i) many.push_back(i);
  const auto cuts = histogram_cuts(many, 10);
  EXPECT_EQ(cuts.size(), 9u);
  EXPECT_TRUE(std::is_sorted(cuts.begin(), cuts.end()));
}

TEST(Fit, OverfitsEightDistinctRows) {
  const auto x = overfit_rows();
  const auto model = fit_gbt(x, kOverfitY, overfit_config());
  const auto pred = model.predict(x);
  EXPECT_LT(evaluate(kOverfitY, pred).mse, 1e-3);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(model.predict_row(x.row(i)), kOverfitY[i], 0.05);
  for (const auto& t : model.trees) EXPECT_LE(t.depth(), 6u);
}

// With l1 > 0 a single-row leaf stops moving once |residual| <= l1, so smaller
// learning rates park residuals at the dead-zone edge instead of at zero.
TEST(Fit, ResidualsSettleInsideTheL1DeadZone) {
  const auto x = overfit_rows();
  auto c = overfit_config();
  c.learning_rate = 0.3;
  const auto model = fit_gbt(x, kOverfitY, c);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_LE(std::abs(model.predict_row(x.row(i)) - kOverfitY[i]), 0.05 + 1e-9);
}

TEST(Fit, SingleStumpLeavesAreResidualMeans) {
  const auto x = matrix({"a"}, {{0}, {0}, {1}, {1}, {1}});
  const std::vector<double> y = {1, 3, 10, 11, 15};
  GbtConfig c;
  c.n_rounds = 1;
  c.max_depth = 1;
  c.learning_rate = 1;
  c.lambda_l1 = c.lambda_l2 = c.gamma = 0;
  const auto m = fit_gbt(x, y, c);
  EXPECT_DOUBLE_EQ(m.base_score, 8.0);
  const std::vector<double> lo = {0}, hi = {1};
  EXPECT_NEAR(m.predict_row(lo), 2.0, 1e-12);
  EXPECT_NEAR(m.predict_row(hi), 12.0, 1e-12);
}

TEST(Fit, TrainingLossNeverIncreases) {
  Rng rng(4);
  FeatureMatrix x = matrix({"a", "b", "c"}, {});
  std::vector<double> y;
  for (int i = 0; i < 120; ++i) {
    const double a = rng.normal(), b = rng.normal(), c = rng.normal();
    x.values.insert(x.values.end(), {a, b, c});
    y.push_back(a * b + std::sin(3 * c) + 0.1 * rng.normal());
  }
  x.rows = 120;
  GbtConfig cfg;
  cfg.n_rounds = 60;
  cfg.max_depth = 3;
  const auto m = fit_gbt(x, y, cfg);
  std::vector<double> pred(120, m.base_score);
  double last = evaluate(y, pred).mse;
  for (const auto& t : m.trees) {
    for (std::size_t i = 0; i < 120; ++i) pred[i] += t.predict(x.row(i));
    const double now = evaluate(y, pred).mse;
    EXPECT_LE(now, last + 1e-12);
    last = now;
  }
}

TEST(Fit, EqualsExactSplitTreeOnRandomInstances) {
  for (std::uint64_t s = 0; s < 60; ++s) {
    const auto inst = oracle::random_tree_instance(derive_seed(98765, s));
    EXPECT_LE(oracle::tree_discrepancy(inst), 1e-9) << "instance " << s;
  }
}

TEST(Fit, DeterministicAndSeedSensitiveWithSampling) {
  const auto x = overfit_rows();
  GbtConfig c = overfit_config();
  c.subsample = 0.6;
  c.colsample_bytree = 0.5;
  c.n_rounds = 20;
  c.seed = 1;
  const auto a = fit_gbt(x, kOverfitY, c);
  const auto b = fit_gbt(x, kOverfitY, c);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  c.seed = 2;
  EXPECT_NE(fit_gbt(x, kOverfitY, c).to_json().dump(), a.to_json().dump());
}

TEST(Fit, Errors) {
  const auto x = overfit_rows();
  GbtConfig c;
  c.n_rounds = 0;
  EXPECT_THROW(fit_gbt(x, kOverfitY, c), ConfigError);
  const FeatureMatrix empty{{}, 8, {}};
  EXPECT_THROW(fit_gbt(empty, kOverfitY, GbtConfig{}), ConfigError);
}

TEST(Predict, ByNameIgnoresOrderAndNamesMissingFeature) {
  const auto m = fit_gbt(overfit_rows(), kOverfitY, overfit_config());
  const FeatureValues a = {{"a", 0.4}, {"b", 2}, {"extra", 9}};
  const FeatureValues b = {{"b", 2}, {"a", 0.4}};
  EXPECT_EQ(predict(m, a), predict(m, b));
  try {
    predict(m, FeatureValues{{"a", 0.4}});
    FAIL();
  } catch (const LookupError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
  Ensemble empty;
  empty.base_score = 4.5;
  empty.features = {"a"};
  EXPECT_EQ(predict(empty, FeatureValues{{"a", 1}}), 4.5);
}

TEST(Ensemble, JsonRoundTripIsBitExact) {
  const auto m = fit_gbt(overfit_rows(), kOverfitY, overfit_config());
  const auto back = Ensemble::from_json(nlohmann::json::parse(m.to_json().dump()));
  const auto x = overfit_rows();
  for (std::size_t i = 0; i < x.rows; ++i) EXPECT_EQ(back.predict_row(x.row(i)), m.predict_row(x.row(i)));
  EXPECT_EQ(back.config, m.config);
}

TEST(Config, JsonRoundTripAndValidation) {
  GbtConfig c;
  c.learning_rate = 0.01;
  c.max_depth = 18;
  c.max_bin = 1000;
  EXPECT_EQ(GbtConfig::from_json(c.to_json()), c);
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
