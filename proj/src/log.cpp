#include "mixforge/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace mixforge {

spdlog::logger& log() {
  static const std::shared_ptr<spdlog::logger> instance = [] {
    auto logger = spdlog::stderr_color_mt("mixforge");
    auto level = spdlog::level::warn;
    if (const char* env = std::getenv("MIXFORGE_LOG")) {
      level = spdlog::level::from_str(env);
    }
    logger->set_level(level);
    logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    return logger;
  }();
  return *instance;
}

}  // namespace mixforge
