#pragma once

// KITTI odometry drift metrics over fixed-length subsequences and
// trajectory export (CSV and a two-panel SVG plot).

#include <filesystem>
#include <vector>

#include "vift/geometry.hpp"

namespace vift {

struct LengthMetrics {
  double length = 0.0;  // m
  double t_rel = 0.0;   // percent
  double r_rel = 0.0;   // degrees per 100 m
  std::size_t count = 0;
};

struct TrajectoryMetrics {
  double t_rel = 0.0;   // mean over every evaluated subsequence, percent
  double r_rel = 0.0;   // degrees per 100 m
  std::size_t count = 0;
  std::vector<LengthMetrics> per_length;
};

struct EvalProtocol {
  std::vector<double> lengths{100, 200, 300, 400, 500, 600, 700, 800};
  std::size_t start_step = 10;  // frames between subsequence starts

  void validate() const;
};

/// d[0] = 0, d[k] = d[k-1] + |t_k - t_{k-1}|. Empty input gives an empty result.
std::vector<double> cumulative_distance(const std::vector<SE3Pose>& poses);

/// For every start frame i = 0, step, 2 step, ... and every length L, the
/// end frame is the first j with d[j] - d[i] >= L; starts that never reach
/// L are skipped. Each pair contributes the translation and rotation of
/// (gt_i^-1 gt_j)^-1 (est_i^-1 est_j), normalized by L. Throws
/// std::invalid_argument for trajectories of different or < 2 length.
TrajectoryMetrics kitti_relative_errors(const std::vector<SE3Pose>& gt, const std::vector<SE3Pose>& est,
                                        const EvalProtocol& protocol = {});

struct TrajectoryFiles {
  std::filesystem::path csv;
  std::filesystem::path svg;
};

inline constexpr std::size_t kPlotMarkerEvery = 50;  // frames (5 s at 10 Hz)

/// Writes <stem>.csv (frame,x,y,z) and <stem>.svg with a top-down x-z panel
/// and an altitude-over-distance panel (altitude is -y in camera axes),
/// with a marker every kPlotMarkerEvery frames. `reference` is drawn
/// underneath when given. Throws std::runtime_error if a file cannot be
/// written and std::invalid_argument for an empty trajectory.
TrajectoryFiles export_trajectory(const std::vector<SE3Pose>& poses, const std::filesystem::path& stem,
                                  const std::vector<SE3Pose>* reference = nullptr);

/// Positions from a CSV written by export_trajectory.
std::vector<Vec3> read_trajectory_csv(const std::filesystem::path& path);

}  // namespace vift
