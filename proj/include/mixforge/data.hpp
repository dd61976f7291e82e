#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace mixforge {

using RowId = std::uint64_t;

enum class ColumnKind { input, target };

struct ColumnSpec {
  std::string name;
  std::string unit;
  double observed_min = 0.0;
  double observed_max = 0.0;
  ColumnKind kind = ColumnKind::input;

  bool in_range(double v) const { return v >= observed_min && v <= observed_max; }
};

/// Ordered column contract of a dataset. Names are unique and every column
/// carries the observed range used for range validation.
class FeatureSchema {
 public:
  FeatureSchema(std::vector<ColumnSpec> columns, std::string version = "1");

  /// The 17-input / 5-target UHPC mixture-design schema.
  static FeatureSchema uhpc();

  static FeatureSchema from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  const std::string& version() const { return version_; }
  std::size_t size() const { return columns_.size(); }
  const std::vector<ColumnSpec>& columns() const { return columns_; }
  const ColumnSpec& column(std::size_t i) const { return columns_.at(i); }
  const ColumnSpec& column(std::string_view name) const { return columns_[require_index(name)]; }

  std::optional<std::size_t> index_of(std::string_view name) const;
  /// Throws LookupError naming the column.
  std::size_t require_index(std::string_view name) const;

  std::vector<std::string> input_names() const;
  std::vector<std::string> target_names() const;

  /// Accepts a full column name or a short alias ("compressive", "porosity", ...).
  std::string resolve_target(std::string_view name_or_alias) const;

  bool operator==(const FeatureSchema& other) const;

 private:
  std::vector<ColumnSpec> columns_;
  std::string version_;
};

/// Dense row-major matrix used wherever only numbers (no schema) are needed,
/// e.g. feature rows aligned with a model's feature list.
struct FeatureMatrix {
  std::vector<std::string> names;
  std::size_t rows = 0;
  std::vector<double> values;

  std::size_t cols() const { return names.size(); }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * cols(), cols()};
  }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
};

/// Immutable numeric table bound to a schema. Row ids are unique and survive
/// filtering, so any derived dataset can be traced back to its source rows.
class Dataset {
 public:
  Dataset(std::shared_ptr<const FeatureSchema> schema, std::vector<double> values,
          std::vector<RowId> row_ids);

  const FeatureSchema& schema() const { return *schema_; }
  const std::shared_ptr<const FeatureSchema>& schema_ptr() const { return schema_; }

  std::size_t rows() const { return row_ids_.size(); }
  std::size_t cols() const { return schema_->size(); }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<RowId>& row_ids() const { return row_ids_; }

  std::vector<double> column(std::size_t c) const;
  std::vector<double> column(std::string_view name) const;

  /// Rows at the given positions, in the given order.
  Dataset select_rows(std::span<const std::size_t> positions) const;
  /// Rows whose ids are in `ids` (original order kept).
  Dataset select_ids(std::span<const RowId> ids) const;
  /// Columns `names` as a plain matrix, in the given order.
  FeatureMatrix extract(std::span<const std::string> names) const;

 private:
  std::shared_ptr<const FeatureSchema> schema_;
  std::vector<double> values_;
  std::vector<RowId> row_ids_;
};

/// Reads a UTF-8 CSV with a header row. Header names must cover the schema
/// (order-insensitive); an optional "row_id" column provides stable ids,
/// otherwise ids are the 1-based data line numbers.
Dataset load_dataset(const std::filesystem::path& path, std::shared_ptr<const FeatureSchema> schema,
                     bool strict = false);
Dataset parse_dataset(std::string_view csv_text, std::shared_ptr<const FeatureSchema> schema,
                      bool strict = false, std::string_view source = "<memory>");

/// Shortest round-trip decimal representation; reloading is bit-identical.
void write_dataset(const Dataset& data, const std::filesystem::path& path);
std::string format_dataset(const Dataset& data);

struct StandardizationParams {
  std::vector<std::string> columns;
  std::vector<double> mean;
  std::vector<double> sd;
  std::size_t fitted_rows = 0;

  std::optional<std::size_t> index_of(std::string_view column) const;

  nlohmann::json to_json() const;
  static StandardizationParams from_json(const nlohmann::json& doc);
};

/// Mean and n-1 sample standard deviation per column. Target columns are
/// rejected: predictions stay in physical units.
StandardizationParams fit_standardizer(const Dataset& data, std::span<const std::string> columns);

/// (x - mean) / sd on each fitted column; other columns are copied unchanged.
Dataset apply_standardizer(const StandardizationParams& params, const Dataset& data);
Dataset invert_standardizer(const StandardizationParams& params, const Dataset& data);

/// In-place transform of a matrix whose columns are all covered by `params`.
void standardize(const StandardizationParams& params, FeatureMatrix& matrix);

/// Seeded uniform partition; train gets round(train_fraction * n) rows.
/// Both parts keep the input row order.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed);

}  // namespace mixforge
