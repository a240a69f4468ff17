#pragma once

// Binary weight and optimizer-state files. All integers and reals are
// little-endian.
//
// Weights ("VIFW"):
//   char[4]  magic "VIFW"
//   u32      format version (kCheckpointVersion)
//   config   u8 architecture, u8 head_mode, u8 rotation_param, then u64
//            visual_dim, inertial_dim, d_model, d_ff, n_layers, n_heads,
//            window, head_hidden, mlp_hidden, then f64 dropout
//   u64      tensor count
//   per tensor, in ViftWeights::named_parameters() order:
//            u32 rank, u64 dims[rank], f64 values[prod(dims)]
//
// Training state ("VIFS"): magic, u32 version, u64 epoch, u64 adam step,
// u64 moment count, then the first and second moments as tensors above.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vift/model.hpp"

namespace vift {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct AdamState {
  std::uint64_t step = 0;
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct TrainingState {
  std::uint64_t epoch = 0;  // completed epochs
  AdamState adam;

  friend bool operator==(const TrainingState&, const TrainingState&) = default;
};

/// Throws std::runtime_error if the file cannot be written.
void save_weights(const ViftWeights& w, const std::filesystem::path& path);
/// Throws std::runtime_error on I/O failure, bad magic, unsupported version,
/// truncated data or shapes that disagree with the stored config.
ViftWeights load_weights(const std::filesystem::path& path);
/// As above and additionally rejects a stored config different from
/// `expected`.
ViftWeights load_weights(const std::filesystem::path& path, const ViftConfig& expected);

void save_training_state(const TrainingState& s, const std::filesystem::path& path);
TrainingState load_training_state(const std::filesystem::path& path);

}  // namespace vift
