#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mixforge {

/// The six regression indicators for one (y, y_hat) pair of vectors.
/// `pmae_percent` skips pairs with |y| < 1e-9 (counted in `pmae_skipped`)
/// and is empty when every pair was skipped. `r2` is empty for constant y.
struct MetricsReport {
  double mae = 0.0;
  std::optional<double> pmae_percent;
  double mse = 0.0;
  double rmse = 0.0;
  double maxae = 0.0;
  std::optional<double> r2;
  std::size_t m = 0;
  std::size_t pmae_skipped = 0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& doc);
};

inline constexpr double kPmaeZeroTolerance = 1e-9;

MetricsReport evaluate(std::span<const double> y, std::span<const double> y_hat);

struct LabeledReport {
  std::string label;
  MetricsReport train;
  MetricsReport test;
};

/// Pass rule on test metrics: rmse < rmse_max and r2 > r2_min.
struct SelectionGate {
  double rmse_max = 30.0;
  double r2_min = 0.18;

  bool passes(const MetricsReport& test) const;
};

struct SelectionResult {
  std::vector<std::string> ranked;   // best first
  std::vector<std::string> passing;  // gate survivors, in rank order
};

/// Orders by test RMSE ascending, then test R² descending (undefined R²
/// sorts last), then label, so the result does not depend on input order.
SelectionResult select_optimal(std::span<const LabeledReport> reports, const SelectionGate& gate = {});

}  // namespace mixforge
