#pragma once

// Command-line front end: synth, train, infer, eval and plot.

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vift/model.hpp"
#include "vift/training.hpp"

namespace vift::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Bad flags, config keys or values, or missing input paths.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a training run depends on. Serialized as one flat JSON object.
struct RunConfig {
  ViftConfig model;
  TrainConfig train;
  std::vector<std::string> data;  // sequence directories
  std::string out;                // output directory
};

nlohmann::ordered_json to_json(const RunConfig& c);
/// Starts from `base` and overrides every key present in `j`. Throws
/// UsageError for unknown keys, wrong types or invalid values.
RunConfig apply_json(RunConfig base, const nlohmann::json& j);

/// `args` excludes the program name. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vift::cli
