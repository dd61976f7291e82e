#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mixforge/data.hpp"
#include "mixforge/rng.hpp"

namespace testing_helpers {

// d unbounded inputs x0..x{d-1} followed by one target "y".
inline std::shared_ptr<const mixforge::FeatureSchema> numeric_schema(std::size_t d) {
  std::vector<mixforge::ColumnSpec> cols;
  for (std::size_t j = 0; j < d; ++j) {
    cols.push_back({"x" + std::to_string(j), "", -1e9, 1e9, mixforge::ColumnKind::input});
  }
  cols.push_back({"y", "", -1e9, 1e9, mixforge::ColumnKind::target});
  return std::make_shared<const mixforge::FeatureSchema>(std::move(cols));
}

// Rows given as {x0, ..., y}; ids are 1-based positions.
inline mixforge::Dataset table(std::size_t d, const std::vector<std::vector<double>>& rows) {
  std::vector<double> values;
  std::vector<mixforge::RowId> ids;
  for (const auto& r : rows) {
    values.insert(values.end(), r.begin(), r.end());
    ids.push_back(ids.size() + 1);
  }
  return mixforge::Dataset(numeric_schema(d), std::move(values), std::move(ids));
}

inline mixforge::FeatureMatrix matrix(std::vector<std::string> names, const std::vector<std::vector<double>>& rows) {
  mixforge::FeatureMatrix m;
  m.names = std::move(names);
  m.rows = rows.size();
  for (const auto& r : rows) m.values.insert(m.values.end(), r.begin(), r.end());
  return m;
}

}  // namespace testing_helpers
