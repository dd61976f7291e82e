#include "mixforge/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

#include "mixforge/error.hpp"
#include "mixforge/rng.hpp"

namespace mixforge {

namespace {

constexpr std::size_t kInputs = 17;
constexpr std::size_t kTargets = 5;

double round_to(double v, double per_unit) { return std::round(v * per_unit) / per_unit; }

// Mean of two uniforms: concentrated in the interior like real mix tables.
double tri(Rng& rng, double lo, double hi) { return lo + (hi - lo) * 0.5 * (rng.uniform() + rng.uniform()); }

double zero_inflated(Rng& rng, double p_zero, double lo, double hi) {
  const double v = tri(rng, lo, hi);
  return rng.uniform() < p_zero ? 0.0 : v;
}

template <std::size_t N>
double level(Rng& rng, const std::array<double, N>& levels) {
  return levels[rng.index(N)];
}

std::array<double, kInputs> draw_inputs(Rng& rng) {
  std::array<double, kInputs> x{};
  x[0] = std::round(tri(rng, 550, 1000));                 // cement
  x[1] = std::round(zero_inflated(rng, 0.6, 400, 1200));  // coarse aggregate
  x[2] = std::round(tri(rng, 0, 240));                    // silica fume
  x[3] = std::round(zero_inflated(rng, 0.5, 20, 250));    // fly ash
  x[4] = std::round(zero_inflated(rng, 0.5, 30, 400));    // slag
  x[5] = std::round(tri(rng, 400, 1150));                 // sand
  x[6] = round_to(tri(rng, 4, 50), 10);                  // superplasticizer
  x[8] = round_to(zero_inflated(rng, 0.7, 5, 150), 10);  // HPWR
  x[9] = round_to(tri(rng, 0.14, 0.32), 100);            // water/binder
  const double binder = x[0] + x[2] + x[3] + x[4];
  x[7] = std::round(std::min(x[9] * binder, 290.0));  // water
  x[10] = level(rng, std::array<double, 8>{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0});
  x[11] = level(rng, std::array<double, 5>{120, 160, 200, 220, 300});
  x[12] = level(rng, std::array<double, 6>{6, 8, 10, 13, 14, 20});
  x[13] = level(rng, std::array<double, 5>{1100, 1500, 2000, 2500, 2850});
  x[14] = level(rng, std::array<double, 3>{40, 200, 210});
  x[15] = level(rng, std::array<double, 4>{15, 18, 20, 23});
  x[16] = level(rng, std::array<double, 7>{1, 3, 7, 14, 28, 56, 90});
  return x;
}

std::array<double, kTargets> targets_of(const std::array<double, kInputs>& x) {
  const double cement = x[0], coarse = x[1], silica = x[2], slag = x[4];
  const double sp = x[6], water = x[7], wb = x[9], vf = x[10], dia = x[11], sts = x[13];
  const double a = std::log1p(x[16]) / std::log(92.0);  // curing maturity in (0, 1]

  const double compressive =
      20 + std::pow(a, 0.7) * (170 + 405 * (0.30 - wb) + 0.08 * (cement - 750) + 0.12 * silica + 0.04 * slag +
                               12 * vf + 0.002 * (sts - 1800) * vf);
  const double flexural = 3.5 + std::pow(a, 0.6) * (7 + 3.6 * vf + 40 * (0.30 - wb) + 0.004 * (cement - 750) +
                                                    0.001 * (sts - 1500) * vf - 0.01 * (dia - 200));
  const double tensile =
      2 + std::sqrt(a) * (2.5 + 1.6 * vf + 0.0004 * (sts - 1500) * vf + 0.01 * silica + 10 * (0.3 - wb)) -
      0.004 * (dia - 200);
  const double slump =
      std::clamp(560 + 5 * sp - 35 * vf + 1.4 * (water - 180) - 0.08 * coarse + 900 * (wb - 0.22), 150.0, 900.0);
  const double porosity = 1.5 + 24 * wb * (1 - 0.45 * a) - 0.01 * silica + 0.001 * coarse;
  return {compressive, flexural, tensile, slump, porosity};
}

double sample_sd(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

SyntheticBenchmark make_synthetic_uhpc(const SyntheticOptions& options) {
  if (options.rows < 2) throw ConfigError("synthetic benchmark needs at least 2 rows");
  if (!(options.corrupt_fraction >= 0.0 && options.corrupt_fraction < 1.0)) {
    throw ConfigError("corrupt_fraction must be in [0, 1)");
  }
  auto schema = std::make_shared<const FeatureSchema>(FeatureSchema::uhpc());
  const std::size_t n = options.rows;
  const std::size_t width = kInputs + kTargets;

  Rng input_rng(derive_seed(options.seed, 1));
  std::vector<std::array<double, kInputs>> inputs(n);
  std::vector<std::vector<double>> clean(kTargets, std::vector<double>(n));
  for (std::size_t r = 0; r < n; ++r) {
    inputs[r] = draw_inputs(input_rng);
    const auto t = targets_of(inputs[r]);
    for (std::size_t k = 0; k < kTargets; ++k) clean[k][r] = t[k];
  }
  std::array<double, kTargets> sd{};
  for (std::size_t k = 0; k < kTargets; ++k) sd[k] = sample_sd(clean[k]);

  Rng noise_rng(derive_seed(options.seed, 2));
  std::vector<double> values(n * width);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(inputs[r].begin(), inputs[r].end(), values.begin() + static_cast<std::ptrdiff_t>(r * width));
    for (std::size_t k = 0; k < kTargets; ++k) {
      values[r * width + kInputs + k] = clean[k][r] + options.noise_fraction * sd[k] * noise_rng.normal();
    }
  }

  Rng corrupt_rng(derive_seed(options.seed, 3));
  const auto n_bad = static_cast<std::size_t>(std::floor(options.corrupt_fraction * static_cast<double>(n) + 1e-9));
  const auto bad = corrupt_rng.sample_without_replacement(n, n_bad);
  for (std::size_t r : bad) {
    for (std::size_t c : corrupt_rng.sample_without_replacement(kInputs, 3)) {
      const ColumnSpec& spec = schema->column(c);
      values[r * width + c] = corrupt_rng.uniform() < 0.5 ? spec.observed_max : spec.observed_min;
    }
    for (std::size_t k = 0; k < kTargets; ++k) {
      const double sign = corrupt_rng.uniform() < 0.5 ? -1.0 : 1.0;
      values[r * width + kInputs + k] += sign * corrupt_rng.uniform(0.5, 0.75) * sd[k];
    }
  }

  // Keep every target inside the schema range.
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < kTargets; ++k) {
      const ColumnSpec& spec = schema->column(kInputs + k);
      double& v = values[r * width + kInputs + k];
      v = std::clamp(v, spec.observed_min, spec.observed_max);
    }
  }

  std::vector<RowId> ids(n);
  for (std::size_t r = 0; r < n; ++r) ids[r] = r + 1;
  SyntheticBenchmark out{Dataset(schema, std::move(values), std::move(ids)), {}};
  for (std::size_t r : bad) out.corrupted.push_back(r + 1);
  return out;
}

}  // namespace mixforge
