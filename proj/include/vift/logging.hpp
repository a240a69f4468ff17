#pragma once

#include <string_view>

namespace vift {

inline constexpr const char* kLogEnvVar = "VIFT_LOG";

/// Routes log output to stderr and sets the level from VIFT_LOG (trace,
/// debug, info, warn, error, off; default info). An unknown value keeps
/// the default and logs a warning.
void configure_logging();

/// Same as configure_logging with an explicit level string; empty means
/// the default.
void configure_logging(std::string_view level);

}  // namespace vift
