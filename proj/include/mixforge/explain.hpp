#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixforge/data.hpp"
#include "mixforge/gbtree.hpp"

namespace mixforge {

/// Interventional Shapley attribution of one prediction. `base_value` is the
/// mean model output over the background rows; contributions are aligned
/// with `features` and sum with the base to `prediction`.
struct Attribution {
  std::vector<std::string> features;
  std::vector<double> contributions;
  double base_value = 0.0;
  double prediction = 0.0;

  nlohmann::json to_json() const;
};

/// Exact interventional SHAP for a tree ensemble. `row` is aligned with
/// `model.features`; `background` must hold the same columns (matched by
/// name). For every (tree, background row) pair the tree is walked once,
/// so the cost is linear in the number of leaves reachable by mixing the
/// two rows.
Attribution shap_values(const Ensemble& model, std::span<const double> row, const FeatureMatrix& background);

/// Reference implementation: enumerates all 2^d coalitions. Refuses d > 16.
Attribution brute_force_shapley(const Ensemble& model, std::span<const double> row, const FeatureMatrix& background);

inline constexpr std::size_t kBruteForceMaxFeatures = 16;

struct FeatureImportance {
  std::string feature;
  double mean_abs_shap = 0.0;
};

/// Mean |phi_j| over the rows of `data`, sorted descending (ties keep model
/// feature order).
std::vector<FeatureImportance> rank_features(const Ensemble& model, const FeatureMatrix& data,
                                             const FeatureMatrix& background);

nlohmann::json to_json(const std::vector<FeatureImportance>& ranking);

enum class SelectionPolicyKind { fixed_list, bottom_k, threshold };

struct SelectionPolicy {
  SelectionPolicyKind kind = SelectionPolicyKind::fixed_list;
  std::vector<std::string> excluded;  // fixed_list
  std::size_t k = 0;                  // bottom_k
  double fraction = 0.0;              // threshold: drop mean|phi| < fraction * total

  static SelectionPolicy fixed(std::vector<std::string> excluded);
  static SelectionPolicy bottom(std::size_t k);
  static SelectionPolicy below_fraction(double fraction);

  nlohmann::json to_json() const;
  static SelectionPolicy from_json(const nlohmann::json& doc);
};

struct FeatureSelection {
  std::string target;
  std::vector<std::string> included;  // schema order
  std::vector<std::string> excluded;  // schema order
  SelectionPolicy policy;

  nlohmann::json to_json() const;
  static FeatureSelection from_json(const nlohmann::json& doc);
};

/// Partitions `all_inputs` into included/excluded columns. For bottom_k and
/// threshold policies, inputs missing from `ranking` count as zero
/// importance.
FeatureSelection select_features(std::string_view target, std::span<const std::string> all_inputs,
                                 std::span<const FeatureImportance> ranking, const SelectionPolicy& policy);

/// Per-target exclusion lists for the UHPC schema (the shipped defaults).
SelectionPolicy uhpc_default_selection(std::string_view target);

/// Up to `max_rows` rows drawn without replacement with a fixed seed.
FeatureMatrix sample_background(const FeatureMatrix& data, std::size_t max_rows, std::uint64_t seed);

inline constexpr std::size_t kDefaultBackgroundRows = 128;

}  // namespace mixforge
