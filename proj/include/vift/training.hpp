#pragma once

// Pose loss L = L_t + alpha L_r, AdamW with decoupled weight decay, cosine
// annealing with warm restarts, rotation-histogram sample weights and the
// mini-batch training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "vift/checkpoint.hpp"
#include "vift/data.hpp"
#include "vift/model.hpp"
#include "vift/rpmg.hpp"

namespace vift {

std::string to_string(Norm n);
Norm parse_norm(std::string_view s);

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t epochs = 200;
  std::size_t batch = 128;
  double alpha = 40.0;
  Norm norm = Norm::kL1;
  std::size_t restart_period = 25;  // epochs
  double lr_min = 1e-6;
  bool balance = false;
  std::size_t bins = 10;
  std::uint64_t seed = 0;
  RpmgParams rpmg;
  std::size_t stride = 1;
  double held_out_fraction = 0.1;

  void validate() const;
};

/// lr_min + (lr - lr_min)(1 + cos(pi c / P)) / 2 with c = progress mod P.
double lr_schedule(double epoch_progress, const TrainConfig& config);

struct LossOptions {
  double alpha = 40.0;
  Norm norm = Norm::kL1;
  HeadMode head_mode = HeadMode::kRpmgEuler;
  RotationParam rotation_param = RotationParam::kEuler;
  RpmgParams rpmg;

  static LossOptions from(const ViftConfig& model, const TrainConfig& train);
};

struct PoseLossResult {
  double value = 0.0;        // translation + alpha * rotation
  double translation = 0.0;
  double rotation = 0.0;
  RowMatrix grad;            // backward signal for each prediction entry
};

/// `pred` has one row per step (pose_width columns). In the RPMG modes the
/// rotation part of `grad` is the RPMG signal, scaled by alpha / N, instead
/// of the Euclidean derivative. Rotation differences within
/// kRotationDeadband count as zero in every mode. Throws std::invalid_argument if the row
/// count differs from gt.size() or the width does not match the head mode.
PoseLossResult pose_loss(const RowMatrix& pred, std::span<const SE3Pose> gt, const LossOptions& options);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// p <- p - lr m_hat / (sqrt(v_hat) + eps) - lr wd p, with bias-corrected
/// moments at step t >= 1. Moments are created on first use. Throws
/// std::runtime_error naming the parameter if a gradient is non-finite; no
/// parameter is modified in that case.
void adamw_step(std::span<const NamedTensor> params, std::span<const ad::Tensor* const> grads, AdamState& state,
                std::uint64_t t, const AdamConfig& config);

/// Per window, the largest per-step rotation angle; windows are weighted
/// by the inverse count of their bin among `bins` equal-width bins on
/// [0, max angle], normalized to mean 1.
std::vector<double> rotation_histogram_weights(const std::vector<LatentWindow>& windows, std::size_t bins);

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the untrained network
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_seconds = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  /// When set, receives train_log.csv, weights.vifw, state.vifs and
  /// weights_epoch<E>.vifw at every restart boundary and at the end.
  std::filesystem::path out_dir;
  std::optional<ViftWeights> resume_weights;
  std::optional<TrainingState> resume_state;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ViftWeights weights;
  TrainingState state;
  std::vector<EpochRecord> log;
};

/// Mean of pose_loss over windows (no weighting); NaN for an empty set or
/// a rotation estimate that cannot be projected.
double mean_window_loss(const ViftWeights& w, const std::vector<LatentWindow>& windows, const LossOptions& options);

/// Throws std::invalid_argument for an empty training set or windows whose
/// length differs from model.window, and TrainingDiverged (after writing
/// the last good weights) when the loss or a gradient becomes non-finite.
TrainResult train(const ViftConfig& model, const TrainConfig& config, const std::vector<LatentWindow>& train_set,
                  const std::vector<LatentWindow>& held_out, const TrainOptions& options = {});

struct StepErrors {
  std::vector<double> rotation_deg;   // geodesic angle per step
  std::vector<double> translation_m;  // translation error norm per step
  std::vector<double> step_length_m;  // ground-truth translation norm
};
StepErrors window_step_errors(const ViftWeights& w, const std::vector<LatentWindow>& windows);

double median(std::vector<double> values);

}  // namespace vift
