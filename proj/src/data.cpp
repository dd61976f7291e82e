#include "mixforge/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "mixforge/error.hpp"
#include "mixforge/log.hpp"
#include "mixforge/rng.hpp"

namespace mixforge {

namespace {

const char* kind_name(ColumnKind kind) { return kind == ColumnKind::input ? "input" : "target"; }

ColumnKind parse_kind(const std::string& s) {
  if (s == "input") return ColumnKind::input;
  if (s == "target") return ColumnKind::target;
  throw SchemaError("unknown column kind '" + s + "'");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// RFC-4180 style field splitting; quotes are allowed around names that
// contain commas.
std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back(trim(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  fields.emplace_back(trim(current));
  return fields;
}

std::string quote_csv(const std::string& field) {
  if (field.find_first_of(",\"") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

std::optional<double> parse_number(std::string_view cell) {
  cell = trim(cell);
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// FeatureSchema

FeatureSchema::FeatureSchema(std::vector<ColumnSpec> columns, std::string version)
    : columns_(std::move(columns)), version_(std::move(version)) {
  if (columns_.empty()) throw SchemaError("schema has no columns");
  std::unordered_set<std::string> seen;
  for (const auto& c : columns_) {
    if (c.name.empty()) throw SchemaError("schema column with empty name");
    if (!seen.insert(c.name).second) throw SchemaError("duplicate column name '" + c.name + "'");
    if (!(c.observed_min <= c.observed_max)) {
      throw SchemaError("column '" + c.name + "' has observed_min > observed_max");
    }
  }
}

FeatureSchema FeatureSchema::uhpc() {
  using K = ColumnKind;
  return FeatureSchema(
      {
          {"Cement content", "Kg/m³", 369, 1097, K::input},
          {"Coarse aggregate", "Kg/m³", 0, 1931, K::input},
          {"Silica fume content", "Kg/m³", 0, 279.2, K::input},
          {"Fly ash content", "Kg/m³", 0, 301.76, K::input},
          {"Slag powder content", "Kg/m³", 0, 468.9, K::input},
          {"Sand content", "Kg/m³", 0, 1213, K::input},
          {"Superplasticizer", "Kg/m³", 0, 88.2, K::input},
          {"Water content", "Kg/m³", 0, 293, K::input},
          {"HPWR", "Kg/m³", 0, 256, K::input},
          {"Water/binder ratio", "%", 0, 0.36, K::input},
          {"Steel fiber content", "%", 0, 7, K::input},
          {"Steel fiber diameter", "μm", 0, 500, K::input},
          {"Steel fiber length", "Mm", 0, 30, K::input},
          {"SF Tensile strength", "MPa", 0, 3842, K::input},
          {"SF Elastic modulus", "GPa", 0, 700, K::input},
          {"Hydration Temperature", "°C", 0, 26, K::input},
          {"Curing Age", "Day", 1, 91, K::input},
          {"Compressive strength", "MPa", 12.2, 404, K::target},
          {"Flexural strength", "MPa", 0, 36.2, K::target},
          {"Tensile strength", "MPa", 0, 17.1, K::target},
          {"Slump flow", "Mm", 0, 924, K::target},
          {"Porosity", "%", 0, 18.6, K::target},
      },
      "uhpc-1");
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& doc) {
  try {
    std::vector<ColumnSpec> cols;
    for (const auto& c : doc.at("columns")) {
      cols.push_back({c.at("name").get<std::string>(), c.at("unit").get<std::string>(),
                      c.at("min").get<double>(), c.at("max").get<double>(),
                      parse_kind(c.at("kind").get<std::string>())});
    }
    return FeatureSchema(std::move(cols), doc.value("version", std::string("1")));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema document: ") + e.what());
  }
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns_) {
    cols.push_back({{"name", c.name},
                    {"unit", c.unit},
                    {"min", c.observed_min},
                    {"max", c.observed_max},
                    {"kind", kind_name(c.kind)}});
  }
  return {{"version", version_}, {"columns", cols}};
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t FeatureSchema::require_index(std::string_view name) const {
  if (auto i = index_of(name)) return *i;
  throw LookupError("unknown column '" + std::string(name) + "'");
}

std::vector<std::string> FeatureSchema::input_names() const {
  std::vector<std::string> out;
  for (const auto& c : columns_) {
    if (c.kind == ColumnKind::input) out.push_back(c.name);
  }
  return out;
}

std::vector<std::string> FeatureSchema::target_names() const {
  std::vector<std::string> out;
  for (const auto& c : columns_) {
    if (c.kind == ColumnKind::target) out.push_back(c.name);
  }
  return out;
}

std::string FeatureSchema::resolve_target(std::string_view name_or_alias) const {
  static const std::unordered_map<std::string, std::string> aliases = {
      {"compressive", "Compressive strength"}, {"flexural", "Flexural strength"},
      {"tensile", "Tensile strength"},         {"flowability", "Slump flow"},
      {"slump", "Slump flow"},                 {"porosity", "Porosity"},
  };
  std::string key(name_or_alias);
  if (auto it = aliases.find(key); it != aliases.end()) key = it->second;
  const auto idx = index_of(key);
  if (!idx || columns_[*idx].kind != ColumnKind::target) {
    throw LookupError("unknown target '" + std::string(name_or_alias) + "'");
  }
  return key;
}

bool FeatureSchema::operator==(const FeatureSchema& other) const {
  if (version_ != other.version_ || columns_.size() != other.columns_.size()) return false;
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    const auto& a = columns_[i];
    const auto& b = other.columns_[i];
    if (a.name != b.name || a.unit != b.unit || a.observed_min != b.observed_min ||
        a.observed_max != b.observed_max || a.kind != b.kind) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::shared_ptr<const FeatureSchema> schema, std::vector<double> values,
                 std::vector<RowId> row_ids)
    : schema_(std::move(schema)), values_(std::move(values)), row_ids_(std::move(row_ids)) {
  if (!schema_) throw SchemaError("dataset without schema");
  if (row_ids_.empty()) throw DataError("dataset has no rows");
  if (values_.size() != row_ids_.size() * schema_->size()) {
    throw DataError("dataset value count does not match rows x columns");
  }
  std::unordered_set<RowId> seen(row_ids_.begin(), row_ids_.end());
  if (seen.size() != row_ids_.size()) throw DataError("dataset row ids are not unique");
}

std::vector<double> Dataset::column(std::size_t c) const {
  std::vector<double> out(rows());
  for (std::size_t r = 0; r < rows(); ++r) out[r] = at(r, c);
  return out;
}

std::vector<double> Dataset::column(std::string_view name) const {
  return column(schema_->require_index(name));
}

Dataset Dataset::select_rows(std::span<const std::size_t> positions) const {
  std::vector<double> values;
  values.reserve(positions.size() * cols());
  std::vector<RowId> ids;
  ids.reserve(positions.size());
  for (std::size_t p : positions) {
    if (p >= rows()) throw DataError("row position out of range");
    const auto r = row(p);
    values.insert(values.end(), r.begin(), r.end());
    ids.push_back(row_ids_[p]);
  }
  return Dataset(schema_, std::move(values), std::move(ids));
}

Dataset Dataset::select_ids(std::span<const RowId> ids) const {
  std::unordered_set<RowId> wanted(ids.begin(), ids.end());
  std::vector<std::size_t> positions;
  for (std::size_t r = 0; r < rows(); ++r) {
    if (wanted.contains(row_ids_[r])) positions.push_back(r);
  }
  if (positions.size() != wanted.size()) throw LookupError("requested row id not present in dataset");
  return select_rows(positions);
}

FeatureMatrix Dataset::extract(std::span<const std::string> names) const {
  FeatureMatrix m;
  m.names.assign(names.begin(), names.end());
  m.rows = rows();
  std::vector<std::size_t> idx;
  for (const auto& n : names) idx.push_back(schema_->require_index(n));
  m.values.resize(m.rows * idx.size());
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::size_t c = 0; c < idx.size(); ++c) m.values[r * idx.size() + c] = at(r, idx[c]);
  }
  return m;
}

// ---------------------------------------------------------------------------
// CSV

Dataset parse_dataset(std::string_view text, std::shared_ptr<const FeatureSchema> schema, bool strict,
                      std::string_view source) {
  if (!schema) throw SchemaError("no schema given");
  std::vector<std::string_view> lines;
  for (std::size_t pos = 0; pos < text.size();) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(std::string(source) + ": empty file");

  std::string_view header_line = lines.front();
  if (header_line.starts_with("\xEF\xBB\xBF")) header_line.remove_prefix(3);
  const auto header = split_csv_line(header_line);

  std::unordered_map<std::string, std::size_t> header_pos;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!header_pos.emplace(header[i], i).second) {
      throw SchemaError(std::string(source) + ": duplicate header '" + header[i] + "'");
    }
  }
  std::vector<std::size_t> source_col(schema->size());
  for (std::size_t c = 0; c < schema->size(); ++c) {
    const auto it = header_pos.find(schema->column(c).name);
    if (it == header_pos.end()) {
      throw SchemaError(std::string(source) + ": missing column '" + schema->column(c).name + "'");
    }
    source_col[c] = it->second;
  }
  std::optional<std::size_t> id_col;
  if (auto it = header_pos.find("row_id"); it != header_pos.end()) id_col = it->second;

  if (lines.size() < 2) throw ParseError(std::string(source) + ": no data rows");

  std::vector<double> values;
  values.reserve((lines.size() - 1) * schema->size());
  std::vector<RowId> ids;
  ids.reserve(lines.size() - 1);
  std::size_t warnings = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (trim(lines[li]).empty()) continue;
    const auto fields = split_csv_line(lines[li]);
    RowId id = static_cast<RowId>(li);
    if (id_col) {
      if (*id_col >= fields.size()) throw ParseError(std::string(source) + ": line " + std::to_string(li + 1) + ": missing row_id");
      const auto& f = fields[*id_col];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), id);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw ParseError(std::string(source) + ": line " + std::to_string(li + 1) + ": bad row_id '" + f + "'");
      }
    }
    for (std::size_t c = 0; c < schema->size(); ++c) {
      const auto& spec = schema->column(c);
      const std::string cell = source_col[c] < fields.size() ? fields[source_col[c]] : std::string();
      const auto v = parse_number(cell);
      if (!v) {
        throw ParseError(std::string(source) + ": row " + std::to_string(id) + ", column '" + spec.name +
                         "': cannot parse '" + cell + "'");
      }
      if (!spec.in_range(*v)) {
        std::ostringstream msg;
        msg << source << ": row " << id << ", column '" << spec.name << "': value " << *v
            << " outside observed range [" << spec.observed_min << ", " << spec.observed_max << "]";
        if (strict) throw RangeError(msg.str());
        ++warnings;
        log().warn("{}", msg.str());
      }
      values.push_back(*v);
    }
    ids.push_back(id);
  }
  if (warnings > 0) log().info("{}: {} out-of-range cells", source, warnings);
  return Dataset(std::move(schema), std::move(values), std::move(ids));
}

Dataset load_dataset(const std::filesystem::path& path, std::shared_ptr<const FeatureSchema> schema,
                     bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), std::move(schema), strict, path.string());
}

std::string format_dataset(const Dataset& data) {
  std::string out = "row_id";
  for (const auto& c : data.schema().columns()) {
    out += ',';
    out += quote_csv(c.name);
  }
  out += '\n';
  for (std::size_t r = 0; r < data.rows(); ++r) {
    out += std::to_string(data.row_ids()[r]);
    for (double v : data.row(r)) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << format_dataset(data);
}

// ---------------------------------------------------------------------------
// Standardization

std::optional<std::size_t> StandardizationParams::index_of(std::string_view column) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == column) return i;
  }
  return std::nullopt;
}

nlohmann::json StandardizationParams::to_json() const {
  return {{"columns", columns}, {"mean", mean}, {"sd", sd}, {"fitted_rows", fitted_rows}};
}

StandardizationParams StandardizationParams::from_json(const nlohmann::json& doc) {
  StandardizationParams p;
  p.columns = doc.at("columns").get<std::vector<std::string>>();
  p.mean = doc.at("mean").get<std::vector<double>>();
  p.sd = doc.at("sd").get<std::vector<double>>();
  p.fitted_rows = doc.at("fitted_rows").get<std::size_t>();
  if (p.mean.size() != p.columns.size() || p.sd.size() != p.columns.size()) {
    throw ParseError("standardizer arrays have inconsistent lengths");
  }
  return p;
}

StandardizationParams fit_standardizer(const Dataset& data, std::span<const std::string> columns) {
  if (data.rows() < 2) throw DataError("standardizer needs at least 2 rows");
  StandardizationParams p;
  p.fitted_rows = data.rows();
  const double n = static_cast<double>(data.rows());
  for (const auto& name : columns) {
    const auto c = data.schema().require_index(name);
    if (data.schema().column(c).kind == ColumnKind::target) {
      throw ConfigError("target column '" + name + "' is never standardized");
    }
    const auto col = data.column(c);
    // long double sums plus one correction pass keep the mean within an ulp
    long double sum = 0.0L;
    for (double v : col) sum += v;
    double mean = static_cast<double>(sum / n);
    long double resid = 0.0L, ss = 0.0L;
    for (double v : col) {
      const long double dv = static_cast<long double>(v) - mean;
      resid += dv;
      ss += dv * dv;
    }
    mean = static_cast<double>(mean + resid / n);
    ss -= resid * resid / n;
    const double sd = static_cast<double>(std::sqrt(ss / (n - 1.0L)));
    if (!(sd > 0.0)) throw DataError("column '" + name + "' has zero variance");
    p.columns.push_back(name);
    p.mean.push_back(mean);
    p.sd.push_back(sd);
  }
  return p;
}

namespace {

Dataset transform(const StandardizationParams& params, const Dataset& data, bool inverse) {
  std::vector<std::pair<std::size_t, std::size_t>> map;  // (data column, param slot)
  for (std::size_t i = 0; i < params.columns.size(); ++i) {
    const auto c = data.schema().index_of(params.columns[i]);
    if (!c) throw LookupError("standardized column '" + params.columns[i] + "' missing from dataset");
    map.emplace_back(*c, i);
  }
  std::vector<double> values = data.values();
  const std::size_t d = data.cols();
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (const auto& [c, i] : map) {
      double& v = values[r * d + c];
      v = inverse ? v * params.sd[i] + params.mean[i] : (v - params.mean[i]) / params.sd[i];
    }
  }
  return Dataset(data.schema_ptr(), std::move(values), data.row_ids());
}

}  // namespace

Dataset apply_standardizer(const StandardizationParams& params, const Dataset& data) {
  return transform(params, data, false);
}

Dataset invert_standardizer(const StandardizationParams& params, const Dataset& data) {
  return transform(params, data, true);
}

void standardize(const StandardizationParams& params, FeatureMatrix& matrix) {
  std::vector<std::size_t> slot(matrix.cols());
  for (std::size_t c = 0; c < matrix.cols(); ++c) {
    const auto i = params.index_of(matrix.names[c]);
    if (!i) throw LookupError("column '" + matrix.names[c] + "' lacks standardization parameters");
    slot[c] = *i;
  }
  for (std::size_t r = 0; r < matrix.rows; ++r) {
    for (std::size_t c = 0; c < matrix.cols(); ++c) {
      double& v = matrix.values[r * matrix.cols() + c];
      v = (v - params.mean[slot[c]]) / params.sd[slot[c]];
    }
  }
}

// ---------------------------------------------------------------------------
// Split

std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  const std::size_t n = data.rows();
  if (n < 2) throw DataError("split needs at least 2 rows");
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {data.select_rows(train), data.select_rows(test)};
}

}  // namespace mixforge
