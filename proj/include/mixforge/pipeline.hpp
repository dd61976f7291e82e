#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixforge/data.hpp"
#include "mixforge/explain.hpp"
#include "mixforge/gbtree.hpp"
#include "mixforge/metrics.hpp"
#include "mixforge/preprocess.hpp"
#include "mixforge/tune.hpp"

namespace mixforge {

enum class FilterScope { full, train_only };

std::string_view to_string(FilterScope scope);
FilterScope parse_filter_scope(std::string_view text);

struct PipelineConfig {
  std::vector<std::string> targets;  // empty: every target of the schema
  double train_fraction = 0.7;
  std::uint64_t seed = 42;
  double prune_threshold = 0.7;
  std::vector<std::string> keep_overrides;
  double contamination = 0.10;
  std::size_t isolation_trees = kDefaultIsolationTrees;
  std::size_t isolation_subsample = kDefaultIsolationSubsample;
  // Per-target policy; targets not listed use the shipped UHPC lists.
  std::map<std::string, SelectionPolicy, std::less<>> selection;
  std::size_t n_trials = 60;
  std::size_t k = 10;
  FilterScope filter_scope = FilterScope::full;
  bool retune = true;
  GbtConfig base;  // fields outside the search space, notably n_rounds
  SearchSpace space = SearchSpace::gbt_default();
  std::size_t threads = 0;
  std::size_t background_rows = kDefaultBackgroundRows;

  /// Starts from the defaults and applies every key in `doc`; unknown keys
  /// are a ConfigError.
  static PipelineConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  std::vector<std::string> resolved_targets(const FeatureSchema& schema) const;
  SelectionPolicy policy_for(std::string_view target) const;
};

/// Seeds of the independent random components, all derived from config.seed.
struct PipelineSeeds {
  std::uint64_t split = 0;
  std::uint64_t forest = 0;
  std::uint64_t background = 0;
  std::uint64_t root = 0;
  std::uint64_t search(std::size_t target_index) const;

  static PipelineSeeds from(std::uint64_t seed);
};

struct ModelMetrics {
  MetricsReport train;
  MetricsReport test;
};

struct Stage1Entry {
  std::string target;
  std::vector<std::string> features;
  SearchResult search;
  Ensemble model;
  ModelMetrics metrics;
};

struct Stage1Result {
  StandardizationParams standardizer;
  std::vector<RowId> train_ids;
  std::vector<RowId> test_ids;
  std::vector<Stage1Entry> entries;
};

/// Standardizes inputs, splits, tunes and fits Model 1 for every target on
/// every input column.
Stage1Result run_stage1(const Dataset& data, const PipelineConfig& config);

struct BundleEntry {
  std::string target;
  std::string unit;
  FeatureSelection selection;
  Ensemble model1;
  Ensemble model2;  // the deployed model
  ModelMetrics metrics1;
  ModelMetrics metrics2;
  std::vector<RowId> removed;  // outlier audit, highest score first
  std::vector<double> removed_scores;
  std::vector<RowId> train1_ids, test1_ids, train2_ids, test2_ids;
  FeatureMatrix background;  // standardized rows for explanations
  std::size_t best_trial1 = 0;
  std::size_t best_trial2 = 0;
  std::string trial_log;  // sidecar file name

  nlohmann::json to_json() const;
  static BundleEntry from_json(const nlohmann::json& doc);
};

struct ModelBundle {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  FeatureSchema schema = FeatureSchema::uhpc();
  StandardizationParams standardizer;
  PruneResult pruning;
  std::vector<BundleEntry> entries;
  nlohmann::json metadata = nlohmann::json::object();

  /// Throws LookupError for a target without an entry.
  const BundleEntry& entry(std::string_view target) const;
  std::vector<std::string> targets() const;

  /// Standardized row aligned with the model's features; throws LookupError
  /// for a missing feature. Extra features are ignored.
  std::vector<double> model_row(const Ensemble& model, const FeatureValues& raw) const;
  double predict(std::string_view target, const FeatureValues& raw) const;
  Attribution explain(std::string_view target, const FeatureValues& raw) const;

  /// Checks internal consistency (feature subsets, standardizer coverage).
  void validate() const;

  nlohmann::json to_json() const;
  static ModelBundle from_json(const nlohmann::json& doc);
};

using Stage2Searches = std::vector<std::pair<std::string, SearchResult>>;

/// Prunes, filters outliers, selects features, re-tunes (or reuses the
/// Model 1 config) and fits Model 2, then assembles the bundle. Searches run
/// in this stage are appended to `searches` when given.
ModelBundle run_stage2(const Dataset& data, const Stage1Result& stage1, const PipelineConfig& config,
                       Stage2Searches* searches = nullptr);

struct PipelineRun {
  ModelBundle bundle;
  std::string trials_jsonl;
  std::string audit_csv;
  nlohmann::json report;
};

PipelineRun run_pipeline(const Dataset& data, const PipelineConfig& config);

/// One JSON line per trial with "target" and "stage" keys.
std::string trial_log_lines(const Stage1Result& stage1, const Stage2Searches& stage2);
std::string audit_csv(const ModelBundle& bundle);
/// Model 1 vs Model 2 metrics side by side per target.
nlohmann::json comparison_report(const ModelBundle& bundle);

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);
ModelBundle parse_bundle(std::string_view text, std::string_view source = "<memory>");

struct OutOfSetRow {
  RowId row_id = 0;
  double actual = 0.0;
  double predicted = 0.0;
  std::optional<double> percent_error;  // 100 (pred - actual) / actual; empty when |actual| < 1e-9
};

struct OutOfSetReport {
  std::string target;
  std::vector<OutOfSetRow> rows;
  std::size_t flagged = 0;
  std::optional<double> max_abs_percent_error;
  std::optional<double> signed_at_max;  // the signed error with the largest magnitude
  MetricsReport metrics;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

OutOfSetReport validate_out_of_set(const ModelBundle& bundle, const Dataset& data, std::string_view target);
/// The per-row rule on raw pairs.
OutOfSetReport percent_errors(std::span<const RowId> ids, std::span<const double> actual,
                              std::span<const double> predicted);

}  // namespace mixforge
