#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixforge/data.hpp"
#include "mixforge/gbtree.hpp"
#include "mixforge/rng.hpp"

namespace mixforge {

/// One tunable hyperparameter: sampled uniformly in [lower, upper], or
/// log-uniformly when `log_scale`; integer dimensions are rounded.
struct SearchDimension {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  bool integer = false;
  bool log_scale = false;
};

class SearchSpace {
 public:
  explicit SearchSpace(std::vector<SearchDimension> dims);

  /// Gradient-boosted tree ranges: learning_rate [0.01, 0.3], max_depth
  /// [2, 20], subsample and colsample_bytree [0.5, 1], lambda_l1 and
  /// lambda_l2 [0.05, 1], max_bin [10, 2000], min_child_weight [1, 10],
  /// gamma [0, 0.9].
  static SearchSpace gbt_default();

  const std::vector<SearchDimension>& dimensions() const { return dims_; }

  /// Draws every dimension independently; fields not in the space keep
  /// their value from `base`.
  GbtConfig sample(Rng& rng, const GbtConfig& base) const;
  bool contains(const GbtConfig& config) const;

  nlohmann::json to_json() const;
  static SearchSpace from_json(const nlohmann::json& doc);

 private:
  std::vector<SearchDimension> dims_;
};

/// Seeded shuffle followed by a contiguous partition; the first n % k folds
/// get one extra element.
std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed);

struct TrialResult {
  std::size_t index = 0;
  GbtConfig config;
  std::vector<double> fold_rmse;
  double mean_rmse = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::string> failure;

  bool ok() const { return !failure.has_value(); }
  nlohmann::json to_json() const;
  static TrialResult from_json(const nlohmann::json& doc);
};

/// Rows and target of a tuning problem, already restricted to the model's
/// feature columns.
struct TuningData {
  FeatureMatrix x;
  std::vector<double> y;

  static TuningData from(const Dataset& data, std::string_view target, std::span<const std::string> features);
};

TrialResult cross_validate(const GbtConfig& config, const TuningData& data,
                           const std::vector<std::vector<std::size_t>>& folds);
TrialResult cross_validate(const GbtConfig& config, const Dataset& data, std::string_view target,
                           std::size_t k, std::uint64_t seed);

struct SearchOptions {
  std::size_t n_trials = 60;
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0: hardware concurrency
  GbtConfig base;           // fields outside the search space (n_rounds, ...)
  std::vector<GbtConfig> extra_candidates;  // evaluated after the sampled trials
};

struct SearchResult {
  TrialResult best;
  std::vector<TrialResult> trials;  // ordered by trial index

  /// One JSON object per line, in trial order.
  std::string trial_log() const;
};

/// Random search minimizing mean k-fold RMSE. Folds are drawn once and
/// shared by all trials; trial i samples its config from
/// derive_seed(seed, i), so the log does not depend on scheduling.
SearchResult random_search(const SearchSpace& space, const TuningData& data, const SearchOptions& options);
SearchResult random_search(const SearchSpace& space, std::size_t n_trials, const Dataset& data,
                           std::string_view target, std::size_t k, std::uint64_t seed);

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace mixforge
