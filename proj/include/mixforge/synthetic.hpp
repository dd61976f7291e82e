#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mixforge/data.hpp"

namespace mixforge {

struct SyntheticOptions {
  std::size_t rows = 1200;
  double corrupt_fraction = 0.10;
  double noise_fraction = 0.04;  // clean-row noise sd as a fraction of the target sd
  std::uint64_t seed = 0;
};

struct SyntheticBenchmark {
  Dataset data;
  std::vector<RowId> corrupted;  // ascending
};

/// UHPC-shaped benchmark on the uhpc() schema. Inputs stay inside the schema
/// ranges; several are drawn from small sets of levels (fiber geometry,
/// curing age) the way literature mixes are. Each target is a fixed
/// nonlinear function of the inputs that the default per-target selection
/// keeps, plus Gaussian noise.
///
/// Corrupted rows imitate transcription errors: three inputs are replaced by
/// a range endpoint and every target is shifted by 0.5-0.75 target sd with a
/// random sign.
SyntheticBenchmark make_synthetic_uhpc(const SyntheticOptions& options);

}  // namespace mixforge
