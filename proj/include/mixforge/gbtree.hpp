#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixforge/data.hpp"

namespace mixforge {

/// Hyperparameters of the histogram gradient-boosted tree learner.
///
/// The tuning ranges used by random search live in `SearchSpace` (tune.hpp);
/// `validate()` only enforces what the learner needs to be well defined, so
/// hand-built configs may switch regularization off entirely (lambda = 0).
struct GbtConfig {
  double learning_rate = 0.1;
  int max_depth = 6;
  double subsample = 1.0;
  double colsample_bytree = 1.0;
  double lambda_l1 = 0.05;
  double lambda_l2 = 1.0;
  int max_bin = 256;
  double min_child_weight = 1.0;
  double gamma = 0.0;
  int n_rounds = 500;
  std::uint64_t seed = 0;

  void validate() const;

  nlohmann::json to_json() const;
  static GbtConfig from_json(const nlohmann::json& doc);

  bool operator==(const GbtConfig&) const = default;
};

/// Soft threshold S(G) = sign(G) * max(|G| - l1, 0).
// A split gain must beat the incumbent by this fraction of (parent score +
// |incumbent gain|); smaller differences are ties kept by the lower feature/bin.
inline constexpr double kGainTieTolerance = 1e-12;

double soft_threshold(double grad_sum, double lambda_l1);

/// Regularized split gain:
///   0.5 * [S(GL)^2/(HL+l2) + S(GR)^2/(HR+l2) - S(GL+GR)^2/(HL+HR+l2)] - gamma
double split_gain(double grad_left, double hess_left, double grad_right, double hess_right, double lambda_l1,
                  double lambda_l2, double gamma);

/// Optimal leaf value -S(G)/(H+l2) (before learning-rate scaling).
double leaf_weight(double grad_sum, double hess_sum, double lambda_l1, double lambda_l2);

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;  // x < threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output, already scaled by the learning rate
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // root at 0

  double predict(std::span<const double> x) const;
  /// Index of the leaf reached by x.
  std::size_t leaf_index(std::span<const double> x) const;
  std::size_t depth() const;
};

using FeatureValues = std::map<std::string, double, std::less<>>;

/// A fitted boosted ensemble: prediction is base_score plus the sum of the
/// routed leaf values of every tree.
struct Ensemble {
  double base_score = 0.0;
  std::vector<RegressionTree> trees;
  std::vector<std::string> features;
  GbtConfig config;

  /// `x` is aligned with `features`.
  double predict_row(std::span<const double> x) const;
  /// Columns of `x` are matched to `features` by name.
  std::vector<double> predict(const FeatureMatrix& x) const;

  nlohmann::json to_json() const;
  static Ensemble from_json(const nlohmann::json& doc);
};

/// Looks every model feature up by name; throws LookupError naming the
/// first one that is missing. Extra entries are ignored.
double predict(const Ensemble& model, const FeatureValues& row);

/// Squared-error boosting on rows of `x` (columns in `x.names` order).
Ensemble fit_gbt(const FeatureMatrix& x, std::span<const double> y, const GbtConfig& config);

/// Fits on every input column of the schema.
Ensemble fit_gbt(const Dataset& train, std::string_view target, const GbtConfig& config);
Ensemble fit_gbt(const Dataset& train, std::string_view target, std::span<const std::string> features,
                 const GbtConfig& config);

/// Per-feature cut points; value x falls in bin = #cuts <= x.
/// Equal-frequency quantiles when a feature has more than `max_bin`
/// distinct values, otherwise one bin per distinct value.
std::vector<double> histogram_cuts(std::span<const double> values, int max_bin);

}  // namespace mixforge
