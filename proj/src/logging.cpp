#include "vift/logging.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <string>

namespace vift {

void configure_logging() {
  const char* env = std::getenv(kLogEnvVar);
  configure_logging(env ? std::string_view(env) : std::string_view());
}

void configure_logging(std::string_view level) {
  static bool sink_installed = false;
  if (!sink_installed) {
    auto logger = spdlog::stderr_color_mt("vift");
    logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    spdlog::set_default_logger(logger);
    sink_installed = true;
  }
  spdlog::set_level(spdlog::level::info);
  if (level.empty()) return;
  const auto parsed = spdlog::level::from_str(std::string(level));
  // from_str maps unknown names to off; only accept "off" when asked for.
  if (parsed == spdlog::level::off && level != "off") {
    spdlog::warn("ignoring unknown {} value '{}'", kLogEnvVar, level);
    return;
  }
  spdlog::set_level(parsed);
}

}  // namespace vift
