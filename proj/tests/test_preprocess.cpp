#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "mixforge/error.hpp"
#include "mixforge/preprocess.hpp"
#include "mixforge/synthetic.hpp"

using namespace mixforge;
using testing_helpers::matrix;
using testing_helpers::table;

TEST(Pearson, HandCalculation) {
  const std::vector<double> x = {1, 2, 3}, y = {1, 3, 2};
  EXPECT_NEAR(pearson(x, y), 0.5, 1e-12);
  const std::vector<double> c = {4, 4, 4};
  EXPECT_TRUE(std::isnan(pearson(x, c)));
  EXPECT_NEAR(pearson(x, x), 1.0, 1e-15);
}

TEST(Pearson, MatrixMarksConstantColumnsUndefined) {
  const auto d = table(3, {{1, 1, 5, 0}, {2, 3, 5, 0}, {3, 2, 5, 0}});
  const std::vector<std::string> cols = {"x0", "x1", "x2"};
  const auto m = correlation_matrix(d, cols);
  EXPECT_NEAR(m(0, 1), 0.5, 1e-12);
  EXPECT_NEAR(m(1, 0), 0.5, 1e-12);
  EXPECT_TRUE(m.defined(0, 1));
  EXPECT_FALSE(m.defined(0, 2));
  EXPECT_NE(m.to_csv().find("x2"), std::string::npos);
}

TEST(Prune, DropsTheMoreEntangledMemberOfEachPair) {
  // a ~ b strongly, b ~ c moderately: b has the larger mean |r| and goes
  const CorrelationMatrix corr({"a", "b", "c"}, {1, 0.9, 0.2, 0.9, 1, 0.6, 0.2, 0.6, 1});
  const auto res = prune_multicollinear(corr, 0.7);
  EXPECT_EQ(res.kept, (std::vector<std::string>{"a", "c"}));
  ASSERT_EQ(res.dropped.size(), 1u);
  EXPECT_EQ(res.dropped[0].column, "b");
  EXPECT_EQ(res.dropped[0].partner, "a");

  const std::vector<std::string> keep = {"b"};
  const auto kept_b = prune_multicollinear(corr, 0.7, keep);
  EXPECT_EQ(kept_b.kept, (std::vector<std::string>{"b", "c"}));

  const std::vector<std::string> both = {"a", "b"};
  const auto stuck = prune_multicollinear(corr, 0.7, both);
  EXPECT_EQ(stuck.kept.size(), 3u);
  EXPECT_EQ(stuck.unresolved.size(), 1u);

  const auto back = PruneResult::from_json(res.to_json());
  EXPECT_EQ(back.kept, res.kept);
  EXPECT_EQ(back.dropped.size(), 1u);
}

TEST(Prune, NothingAboveThresholdKeepsEverything) {
  const CorrelationMatrix corr({"a", "b"}, {1, 0.7, 0.7, 1});
  EXPECT_EQ(prune_multicollinear(corr, 0.7).kept.size(), 2u);
  EXPECT_THROW(prune_multicollinear(corr, 0.0), ConfigError);
}

TEST(IsolationForest, AveragePathLengthClosedForm) {
  EXPECT_NEAR(average_path_length(256), 10.2448, 1e-4);
  EXPECT_EQ(average_path_length(1), 0.0);
  EXPECT_EQ(average_path_length(2), 1.0);
  FeatureMatrix m = matrix({"a"}, {});
  for (int i = 0; i < 300; ++i) {
    m.values.push_back(i * 0.37);
    ++m.rows;
  }
  const auto model = fit_isolation_forest(m, 100, 256, 1);
  EXPECT_EQ(model.subsample_size, 256u);
  EXPECT_NEAR(model.normalizer, 10.2448, 1e-4);
  EXPECT_EQ(model.trees.size(), 100u);
  for (const auto& t : model.trees) EXPECT_LE(t.height(), model.height_limit);
}

TEST(IsolationForest, PlantedOutlierHasTheMaximumScore) {
  Rng rng(8);
  FeatureMatrix m = matrix({"u", "v"}, {});
  for (int i = 0; i < 99; ++i) m.values.insert(m.values.end(), {rng.uniform(), rng.uniform()});
  m.values.insert(m.values.end(), {10.0, 10.0});
  m.rows = 100;
  const auto model = fit_isolation_forest(m, 100, 100, 3);
  const auto scores = score_anomalies(model, m);
  EXPECT_EQ(std::max_element(scores.begin(), scores.end()) - scores.begin(), 99);
  for (double s : scores) {
    EXPECT_GT(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
  // mean path length of the planted point is strictly minimal
  double planted = 0.0;
  std::vector<double> others(99, 0.0);
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    planted += model.path_length(m.row(99), t);
    for (std::size_t i = 0; i < 99; ++i) others[i] += model.path_length(m.row(i), t);
  }
  EXPECT_LT(planted, *std::min_element(others.begin(), others.end()));
}

TEST(IsolationForest, SubsampleLargerThanDataIsRejected) {
  const auto m = matrix({"u"}, {{1}, {2}, {3}});
  EXPECT_THROW(fit_isolation_forest(m, 10, 4, 1), DataError);
  EXPECT_THROW(fit_isolation_forest(m, 10, 1, 1), ConfigError);
}

TEST(IsolationForest, SameSeedSameScores) {
  const auto bench = make_synthetic_uhpc({.rows = 200, .seed = 2});
  const auto inputs = bench.data.schema().input_names();
  const auto a = score_anomalies(fit_isolation_forest(bench.data, inputs, 50, 64, 9), bench.data);
  const auto b = score_anomalies(fit_isolation_forest(bench.data, inputs, 50, 64, 9), bench.data);
  EXPECT_EQ(a, b);
}

TEST(OutlierFilter, RemovesFloorOfContaminationTimesN) {
  for (std::size_t n : {100u, 1201u, 7u}) {
    std::vector<std::vector<double>> rows;
    std::vector<double> scores;
    for (std::size_t i = 0; i < n; ++i) {
      rows.push_back({static_cast<double>(i), 0.0});
      scores.push_back(static_cast<double>((i * 37) % 101) / 101.0);
    }
    const auto d = table(1, rows);
    const auto out = filter_outliers(d, scores, 0.10);
    EXPECT_EQ(out.removed.size(), static_cast<std::size_t>(std::floor(0.1 * static_cast<double>(n))));
    EXPECT_EQ(out.kept.rows() + out.removed.size(), n);
    EXPECT_TRUE(std::is_sorted(out.removed_scores.rbegin(), out.removed_scores.rend()));
  }
}

TEST(OutlierFilter, TiesAreRemovedInRowOrder) {
  const auto d = table(1, {{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}, {6, 0}, {7, 0}, {8, 0}, {9, 0}, {10, 0}});
  const std::vector<double> scores(10, 0.5);
  const auto out = filter_outliers(d, scores, 0.2);
  EXPECT_EQ(out.removed, (std::vector<RowId>{1, 2}));
}
