#include "mixforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mixforge/error.hpp"

namespace mixforge {

MetricsReport evaluate(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) {
    throw DataError("evaluate: length mismatch (" + std::to_string(y.size()) + " vs " +
                    std::to_string(y_hat.size()) + ")");
  }
  if (y.empty()) throw DataError("evaluate: no pairs");

  MetricsReport r;
  r.m = y.size();
  const double m = static_cast<double>(r.m);
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double pct_sum = 0.0;
  std::size_t pct_count = 0;
  for (std::size_t i = 0; i < r.m; ++i) {
    const double e = y_hat[i] - y[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    r.maxae = std::max(r.maxae, std::abs(e));
    if (std::abs(y[i]) >= kPmaeZeroTolerance) {
      pct_sum += std::abs(e) / std::abs(y[i]);
      ++pct_count;
    }
  }
  r.mae = abs_sum / m;
  r.mse = sq_sum / m;
  r.rmse = std::sqrt(r.mse);
  r.pmae_skipped = r.m - pct_count;
  if (pct_count > 0) r.pmae_percent = pct_sum / static_cast<double>(pct_count) * 100.0;

  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / m;
  double ss_tot = 0.0;
  for (double v : y) ss_tot += (v - mean) * (v - mean);
  if (ss_tot > 0.0) r.r2 = 1.0 - sq_sum / ss_tot;
  return r;
}

namespace {

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> read_optional(const nlohmann::json& doc, const char* key) {
  const auto& v = doc.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  return {{"mae", mae},     {"pmae_percent", optional_number(pmae_percent)},
          {"mse", mse},     {"rmse", rmse},
          {"maxae", maxae}, {"r2", optional_number(r2)},
          {"m", m},         {"pmae_skipped", pmae_skipped}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& doc) {
  MetricsReport r;
  r.mae = doc.at("mae").get<double>();
  r.pmae_percent = read_optional(doc, "pmae_percent");
  r.mse = doc.at("mse").get<double>();
  r.rmse = doc.at("rmse").get<double>();
  r.maxae = doc.at("maxae").get<double>();
  r.r2 = read_optional(doc, "r2");
  r.m = doc.at("m").get<std::size_t>();
  r.pmae_skipped = doc.at("pmae_skipped").get<std::size_t>();
  return r;
}

bool SelectionGate::passes(const MetricsReport& test) const {
  return test.rmse < rmse_max && test.r2 && *test.r2 > r2_min;
}

SelectionResult select_optimal(std::span<const LabeledReport> reports, const SelectionGate& gate) {
  std::vector<const LabeledReport*> order;
  for (const auto& r : reports) order.push_back(&r);
  constexpr double kNoR2 = -std::numeric_limits<double>::infinity();
  std::sort(order.begin(), order.end(), [&](const LabeledReport* a, const LabeledReport* b) {
    if (a->test.rmse != b->test.rmse) return a->test.rmse < b->test.rmse;
    const double ra = a->test.r2.value_or(kNoR2);
    const double rb = b->test.r2.value_or(kNoR2);
    if (ra != rb) return ra > rb;
    return a->label < b->label;
  });
  SelectionResult out;
  for (const auto* r : order) {
    out.ranked.push_back(r->label);
    if (gate.passes(r->test)) out.passing.push_back(r->label);
  }
  return out;
}

}  // namespace mixforge
