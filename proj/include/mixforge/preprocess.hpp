#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixforge/data.hpp"

namespace mixforge {

// ---------------------------------------------------------------------------
// Correlation and multicollinearity

/// Symmetric matrix of pairwise Pearson r. Entries involving a zero-variance
/// column are undefined (`defined(i, j) == false`, value NaN).
class CorrelationMatrix {
 public:
  CorrelationMatrix(std::vector<std::string> labels, std::vector<double> values);

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * size() + j]; }
  bool defined(std::size_t i, std::size_t j) const;

  std::string to_csv() const;
  nlohmann::json to_json() const;

 private:
  std::vector<std::string> labels_;
  std::vector<double> values_;
};

double pearson(std::span<const double> x, std::span<const double> y);

CorrelationMatrix correlation_matrix(const Dataset& data, std::span<const std::string> columns);

struct DropRecord {
  std::string column;
  std::string partner;  // the column it was too correlated with
  double r = 0.0;
};

struct PruneResult {
  std::vector<std::string> kept;
  std::vector<DropRecord> dropped;
  // Pairs above threshold where both members were protected by keep_overrides.
  std::vector<DropRecord> unresolved;

  nlohmann::json to_json() const;
  static PruneResult from_json(const nlohmann::json& doc);
};

/// Repeatedly removes one member of the most correlated kept pair while any
/// |r| exceeds `threshold`. The member dropped is the one with the larger mean
/// |r| against the other kept columns (ties: larger index); a column named in
/// `keep_overrides` is never dropped.
PruneResult prune_multicollinear(const CorrelationMatrix& corr, double threshold,
                                 std::span<const std::string> keep_overrides = {});

// ---------------------------------------------------------------------------
// Isolation forest

/// Average path length of an unsuccessful BST search over n points.
double average_path_length(std::size_t n);

struct IsolationNode {
  int feature = -1;  // -1 marks an external node
  double split = 0.0;
  int left = -1;
  int right = -1;
  std::size_t size = 0;  // samples reaching an external node
};

struct IsolationTree {
  std::vector<IsolationNode> nodes;  // root at 0
  std::size_t height() const;
};

struct IsolationForestModel {
  std::vector<std::string> columns;
  std::size_t subsample_size = 0;
  std::size_t height_limit = 0;
  double normalizer = 0.0;  // c(subsample_size)
  std::vector<IsolationTree> trees;

  /// Path length of one point through one tree, including the c(size)
  /// adjustment at external nodes.
  double path_length(std::span<const double> x, std::size_t tree) const;
  double score(std::span<const double> x) const;
};

inline constexpr std::size_t kDefaultIsolationTrees = 100;
inline constexpr std::size_t kDefaultIsolationSubsample = 256;

IsolationForestModel fit_isolation_forest(const FeatureMatrix& data, std::size_t n_trees, std::size_t psi,
                                          std::uint64_t seed);
IsolationForestModel fit_isolation_forest(const Dataset& data, std::span<const std::string> columns,
                                          std::size_t n_trees, std::size_t psi, std::uint64_t seed);

/// Scores in (0, 1]; higher is more anomalous. `data` must contain every
/// column the model was fitted on.
std::vector<double> score_anomalies(const IsolationForestModel& model, const Dataset& data);
std::vector<double> score_anomalies(const IsolationForestModel& model, const FeatureMatrix& data);

struct OutlierFilterResult {
  Dataset kept;
  std::vector<RowId> removed;  // highest score first
  std::vector<double> removed_scores;
};

/// Removes exactly floor(contamination * n) rows with the highest scores;
/// equal scores are removed in row order.
OutlierFilterResult filter_outliers(const Dataset& data, std::span<const double> scores, double contamination);

}  // namespace mixforge
