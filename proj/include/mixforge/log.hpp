#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace mixforge {

/// Shared stderr logger. Level comes from the MIXFORGE_LOG environment
/// variable (trace, debug, info, warn, error, off); default is warn.
spdlog::logger& log();

}  // namespace mixforge
