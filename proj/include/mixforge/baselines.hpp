#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixforge/data.hpp"
#include "mixforge/gbtree.hpp"
#include "mixforge/metrics.hpp"

namespace mixforge {

enum class BaselineKind {
  ols_linear,
  ridge,
  ridge_cv,
  lasso,
  decision_tree,
  random_forest,
  extra_trees,
  bagging,
  adaboost_r2,
  gradient_boosting,
  least_squares_boosting,
  voting_mean,
};

std::string_view to_string(BaselineKind kind);
BaselineKind parse_baseline_kind(std::string_view name);
std::vector<BaselineKind> all_baseline_kinds();

class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual double predict(std::span<const double> x) const = 0;
  std::vector<double> predict(const FeatureMatrix& x) const;
};

// ---------------------------------------------------------------------------
// Linear models (intercept is never penalized)

class LinearRegressor final : public Regressor {
 public:
  LinearRegressor(std::vector<double> coefficients, double intercept)
      : coef_(std::move(coefficients)), intercept_(intercept) {}

  using Regressor::predict;
  double predict(std::span<const double> x) const override;
  const std::vector<double>& coefficients() const { return coef_; }
  double intercept() const { return intercept_; }

 private:
  std::vector<double> coef_;
  double intercept_;
};

/// Least squares; throws DataError on a rank-deficient design.
LinearRegressor fit_ols(const FeatureMatrix& x, std::span<const double> y);
/// Solves (Xc'Xc + lambda I) b = Xc'yc on centered data.
LinearRegressor fit_ridge(const FeatureMatrix& x, std::span<const double> y, double lambda);
/// Picks lambda from `grid` by k-fold RMSE, then refits on all rows.
LinearRegressor fit_ridge_cv(const FeatureMatrix& x, std::span<const double> y, std::span<const double> grid,
                             std::size_t k, std::uint64_t seed, double* chosen = nullptr);
/// Coordinate descent on (1/2n)||yc - Xc b||^2 + alpha ||b||_1.
LinearRegressor fit_lasso(const FeatureMatrix& x, std::span<const double> y, double alpha, double tol = 1e-10,
                          std::size_t max_iter = 20000);

/// 10 log-spaced values over [1e-3, 1e3].
std::vector<double> default_ridge_grid();

// ---------------------------------------------------------------------------
// CART-style trees and ensembles

struct CartParams {
  int max_depth = -1;  // -1: unlimited
  std::size_t min_samples_split = 2;
  std::size_t min_samples_leaf = 1;
  double max_features = 1.0;  // fraction of columns tried per node
  bool random_thresholds = false;  // extra-trees splits
};

class DecisionTreeRegressor final : public Regressor {
 public:
  using Regressor::predict;
  double predict(std::span<const double> x) const override;
  const RegressionTree& tree() const { return tree_; }

  /// Weighted variance-reduction CART with exact (or random) thresholds.
  static DecisionTreeRegressor fit(const FeatureMatrix& x, std::span<const double> y, std::span<const double> weights,
                                   std::span<const std::size_t> rows, const CartParams& params, std::uint64_t seed);

 private:
  RegressionTree tree_;
};

/// Averages member predictions: random forest, extra trees, bagging, voting.
class MeanEnsemble final : public Regressor {
 public:
  explicit MeanEnsemble(std::vector<std::unique_ptr<Regressor>> members) : members_(std::move(members)) {}
  using Regressor::predict;
  double predict(std::span<const double> x) const override;
  const std::vector<std::unique_ptr<Regressor>>& members() const { return members_; }

 private:
  std::vector<std::unique_ptr<Regressor>> members_;
};

struct BaggingParams {
  std::size_t n_estimators = 10;
  double max_samples = 1.0;
  bool bootstrap = true;
  CartParams tree;
};

MeanEnsemble fit_bagged_trees(const FeatureMatrix& x, std::span<const double> y, const BaggingParams& params,
                              std::uint64_t seed);

/// AdaBoost.R2 with linear loss; prediction is the weighted median.
class AdaBoostR2 final : public Regressor {
 public:
  AdaBoostR2(std::vector<DecisionTreeRegressor> trees, std::vector<double> weights)
      : trees_(std::move(trees)), weights_(std::move(weights)) {}
  using Regressor::predict;
  double predict(std::span<const double> x) const override;
  std::size_t size() const { return trees_.size(); }

 private:
  std::vector<DecisionTreeRegressor> trees_;
  std::vector<double> weights_;
};

AdaBoostR2 fit_adaboost_r2(const FeatureMatrix& x, std::span<const double> y, std::size_t n_estimators,
                           const CartParams& tree, std::uint64_t seed);

class GbtRegressor final : public Regressor {
 public:
  explicit GbtRegressor(Ensemble model) : model_(std::move(model)) {}
  using Regressor::predict;
  double predict(std::span<const double> x) const override { return model_.predict_row(x); }
  const Ensemble& model() const { return model_; }

 private:
  Ensemble model_;
};

// ---------------------------------------------------------------------------
// Uniform entry point

struct BaselineParams {
  double alpha = 1.0;                // ridge / lasso
  std::vector<double> alpha_grid;    // ridge_cv (empty: default grid)
  std::size_t cv_folds = 5;          // ridge_cv
  std::optional<std::size_t> n_estimators;  // per-kind default when empty
  CartParams tree;
  GbtConfig gbt = default_gbt();

  static GbtConfig default_gbt();
  static BaselineParams from_json(const nlohmann::json& doc);
};

std::unique_ptr<Regressor> fit_baseline(BaselineKind kind, const FeatureMatrix& x, std::span<const double> y,
                                        const BaselineParams& params, std::uint64_t seed);
std::unique_ptr<Regressor> fit_baseline(BaselineKind kind, const Dataset& train, std::string_view target,
                                        const BaselineParams& params, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Pre-selection harness

struct PreselectRow {
  std::string label;
  std::optional<MetricsReport> train;
  std::optional<MetricsReport> test;
  std::optional<std::string> error;
  bool external = false;  // metrics supplied by the caller, not trained here
  bool passes = false;
};

struct PreselectReport {
  std::vector<PreselectRow> rows;  // rank order; failed fits last
  SelectionResult selection;
  SelectionGate gate;

  std::string to_csv() const;
  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Reads externally measured rows: JSON array of {label, train, test}
/// where train/test carry MetricsReport fields.
std::vector<LabeledReport> load_external_reports(const nlohmann::json& doc);

PreselectReport preselect(const Dataset& train, const Dataset& test, std::string_view target,
                          std::span<const BaselineKind> kinds, const SelectionGate& gate,
                          const BaselineParams& params, std::uint64_t seed,
                          std::span<const LabeledReport> external = {});

/// Gate and ranking over already-computed reports.
PreselectReport preselect_reports(std::span<const LabeledReport> reports, const SelectionGate& gate);

}  // namespace mixforge
