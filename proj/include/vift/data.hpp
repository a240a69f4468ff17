#pragma once

// Sequences of precomputed visual-inertial latents with ground-truth poses,
// the on-disk directory format, windowing, and a synthetic generator.
//
// Directory format (version kSequenceFormatVersion):
//   meta.json    {"format_version", "sequence_id", "latent_dim", "count",
//                 optional "visual_dim", "inertial_dim", "synthetic"}
//   latents.bin  count x latent_dim little-endian float32, row-major;
//                row t encodes the transition from frame t to frame t+1
//   poses.txt    count + 1 lines of 12 reals, row-major [R | t] (KITTI)

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vift/geometry.hpp"
#include "vift/model.hpp"

namespace vift {

inline constexpr int kSequenceFormatVersion = 1;

struct SequenceDataset {
  std::string id;
  RowMatrix latents;                // T x latent_dim
  std::vector<SE3Pose> absolute;    // T + 1
  std::vector<SE3Pose> relative;    // T; relative[t] = abs[t]^-1 abs[t+1]
  std::size_t visual_dim = 0;       // 0 when unknown
  std::size_t inertial_dim = 0;

  std::size_t length() const { return relative.size(); }
  /// Fills `relative` from `absolute`.
  void derive_relative();
};

struct LatentWindow {
  RowMatrix latents;              // N x latent_dim
  std::vector<SE3Pose> gt_rel;    // N
  std::string sequence_id;
  std::size_t offset = 0;         // index of the first transition
};

/// One pose per nonempty line of 12 reals. Rotations that are off SO(3) by
/// more than 1e-6 are re-projected (with a warning). Throws
/// std::runtime_error naming the line on a wrong field count or a
/// non-finite value.
std::vector<SE3Pose> parse_kitti_poses(std::string_view text);
/// `digits` significant digits per value, one line per pose.
std::string format_kitti_poses(const std::vector<SE3Pose>& poses, int digits = 17);
std::vector<SE3Pose> read_kitti_file(const std::filesystem::path& path);
void write_kitti_file(const std::vector<SE3Pose>& poses, const std::filesystem::path& path, int digits = 17);

/// Throws std::runtime_error when meta, latent bytes and pose count
/// disagree (the message names all three) or a file is missing.
SequenceDataset load_sequence(const std::filesystem::path& dir);
/// Latents are rounded to float32 on write.
void write_sequence(const SequenceDataset& seq, const std::filesystem::path& dir);

/// Windows at offsets 0, stride, 2 stride, ...; floor((T - N) / stride) + 1
/// of them. Throws std::invalid_argument if N > T, N == 0 or stride == 0.
std::vector<LatentWindow> window_dataset(const SequenceDataset& seq, std::size_t n, std::size_t stride);

struct WindowSplit {
  std::vector<LatentWindow> train;
  std::vector<LatentWindow> held_out;
};
/// Per sequence, the last ceil(fraction * count) windows are held out and
/// training windows that overlap them are dropped.
WindowSplit split_windows(const std::vector<LatentWindow>& windows, double held_out_fraction);

/// Translation followed by the axis-angle of the rotation.
Eigen::Matrix<double, 6, 1> pose_features(const SE3Pose& rel);

enum class Mixing { kLinear, kNonlinear };
std::string to_string(Mixing m);
Mixing parse_mixing(std::string_view s);

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t length = 1000;       // transitions T
  Mixing mixing = Mixing::kLinear;
  double noise_std = 0.01;         // visual block
  double inertial_noise_scale = 0.5;
  double speed_min = 5.0;          // m/s
  double speed_max = 12.0;
  double yaw_rate_max = 0.3;       // rad/s, symmetric range
  double frame_dt = 0.1;           // s
  std::size_t visual_dim = 512;
  std::size_t inertial_dim = 256;
  std::string id = "synthetic";

  void validate() const;
};

struct SyntheticSequence {
  SequenceDataset dataset;
  Eigen::MatrixXd mixing;          // latent_dim x 6
  Eigen::VectorXd offset;          // latent_dim
  Eigen::VectorXd gains;           // latent_dim, nonlinear mode only
};

/// Ground-vehicle-like trajectory in camera axes (x right, y down, z
/// forward) with latent rows mixing(pose_features(rel_t)) + offset + noise;
/// the nonlinear mode applies tanh(gains * (.)) before the noise.
SyntheticSequence generate_synthetic(const SyntheticSpec& spec);

/// Max absolute residual of the least-squares fit latents ~ [features, 1],
/// divided by the max absolute latent. Near zero when the latents are an
/// exact affine function of the pose features.
double affine_fit_residual(const SequenceDataset& seq);

}  // namespace vift
