#pragma once

// Fusion network: per-timestep linear projection, window-local sinusoidal
// positions, a stack of causal post-norm transformer encoder layers and a
// two-layer pose head. An MLP over single timesteps is provided as the
// ablation baseline and shares the weight container.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vift/autodiff.hpp"
#include "vift/geometry.hpp"

namespace vift {

using ad::RowMatrix;

enum class Architecture { kTransformer, kMlp };
/// Rotation output: 3 parameters with a plain loss, 3 parameters through
/// RPMG, or 9 raw matrix entries through RPMG.
enum class HeadMode { kEuler, kRpmgEuler, kRpmg9d };
/// Meaning of a 3-parameter rotation output.
enum class RotationParam { kEuler, kAxisAngle };

std::string to_string(Architecture a);
std::string to_string(HeadMode m);
std::string to_string(RotationParam p);
Architecture parse_architecture(std::string_view s);
HeadMode parse_head_mode(std::string_view s);
RotationParam parse_rotation_param(std::string_view s);

struct ViftConfig {
  Architecture architecture = Architecture::kTransformer;
  std::size_t visual_dim = 512;
  std::size_t inertial_dim = 256;
  std::size_t d_model = 768;
  std::size_t d_ff = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 6;
  std::size_t window = 11;
  double dropout = 0.0;
  HeadMode head_mode = HeadMode::kRpmgEuler;
  RotationParam rotation_param = RotationParam::kEuler;
  std::size_t head_hidden = 128;
  std::size_t mlp_hidden = 128;

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
  std::size_t rotation_width() const { return head_mode == HeadMode::kRpmg9d ? 9 : 3; }
  std::size_t pose_width() const { return 3 + rotation_width(); }

  friend bool operator==(const ViftConfig&, const ViftConfig&) = default;
};

struct Affine {
  ad::Tensor weight;  // [in x out]
  ad::Tensor bias;    // {out}
};

struct LayerNormParams {
  ad::Tensor gain;
  ad::Tensor bias;
};

// The key projection has no bias: a per-query constant added to every
// logit cancels in the softmax, so such a bias would never receive gradient.
struct EncoderLayerParams {
  Affine query;
  ad::Tensor key;  // [d_model x d_model]
  Affine value, output;
  LayerNormParams norm_attention;
  Affine ff_in, ff_out;
  LayerNormParams norm_ff;
};

struct NamedTensor {
  std::string name;
  ad::Tensor* tensor;
};
struct ConstNamedTensor {
  std::string name;
  const ad::Tensor* tensor;
};

struct ViftWeights {
  ViftConfig config;
  Affine projection;
  std::vector<EncoderLayerParams> layers;
  Affine head_hidden, head_out;
  std::vector<Affine> mlp;

  /// Fixed parameter order, also used by the checkpoint format:
  /// transformer: projection, then per layer query, key (weight only), value, output,
  /// norm_attention, ff_in, ff_out, norm_ff, then head_hidden, head_out;
  /// mlp: mlp.0 .. mlp.3. Affine entries contribute weight then bias,
  /// layer norms gain then bias.
  std::vector<NamedTensor> named_parameters();
  std::vector<ConstNamedTensor> named_parameters() const;
  std::size_t parameter_count() const;
};

/// Deterministic given the seed. Affine weights and biases are uniform in
/// +-1/sqrt(fan_in); layer norms start at gain 1, bias 0.
ViftWeights init_weights(const ViftConfig& config, std::uint64_t seed);

// ---- tape-level building blocks -----------------------------------------

struct AffineVars {
  ad::Var weight, bias;
};
struct LayerNormVars {
  ad::Var gain, bias;
};
struct EncoderLayerVars {
  AffineVars query;
  ad::Var key;
  AffineVars value, output;
  LayerNormVars norm_attention;
  AffineVars ff_in, ff_out;
  LayerNormVars norm_ff;
};

struct BoundWeights {
  AffineVars projection;
  std::vector<EncoderLayerVars> layers;
  AffineVars head_hidden, head_out;
  std::vector<AffineVars> mlp;
  /// Same order as ViftWeights::named_parameters().
  std::vector<ad::Var> parameters;
};

/// Registers every weight of `w` as a trainable leaf of `tape`. `w` must
/// outlive the tape.
BoundWeights bind(ad::Tape& tape, const ViftWeights& w);

ad::Var affine(ad::Var x, const AffineVars& a);

/// Per-row affine map. Throws std::invalid_argument on width mismatch.
ad::Var input_projection(ad::Var x, const AffineVars& projection);

/// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same).
ad::Tensor positional_encoding(std::size_t n, std::size_t d_model);

/// Additive mask: 0 where key <= query, -inf elsewhere.
ad::Tensor causal_mask(std::size_t n);

/// x1 = LN(x + MMHA(x)); out = LN(x1 + FF(x1)). `x` stacks windows of
/// `window_length` rows.
ad::Var encoder_layer(ad::Var x, const EncoderLayerVars& layer, const ad::Tensor& mask, std::size_t window_length,
                      std::size_t heads);

/// Linear -> ReLU -> linear, per row.
ad::Var pose_head(ad::Var x, const AffineVars& hidden, const AffineVars& out);

/// Four affine layers with ReLU between, per row.
ad::Var mlp_baseline(ad::Var x, const std::vector<AffineVars>& layers);

/// Full network on windows stacked row-wise ([windows * window_length x
/// d_model]); returns [rows x pose_width].
ad::Var forward(const BoundWeights& bound, const ViftConfig& config, ad::Var latents, std::size_t window_length);

// ---- inference ------------------------------------------------------------

struct PoseEstimate {
  Vec3 translation = Vec3::Zero();
  Eigen::VectorXd rotation_params;  // 3 (Euler or axis-angle) or 9 (row-major)
};

PoseEstimate decode_pose(const RowMatrix& outputs, Eigen::Index row, const ViftConfig& config);
std::vector<PoseEstimate> decode_poses(const RowMatrix& outputs, const ViftConfig& config);
/// Rotation from a raw estimate: Euler or exp map, or SVD projection of the
/// 9 entries.
RotationMatrix estimate_rotation(const PoseEstimate& p, const ViftConfig& config);
SE3Pose to_se3(const PoseEstimate& p, const ViftConfig& config);

/// Windows stacked row-wise, evaluated without gradients.
RowMatrix forward_batch(const ViftWeights& w, const RowMatrix& stacked, std::size_t window_length);
/// One window of any length n >= 1; returns n x pose_width.
RowMatrix forward_window(const ViftWeights& w, const RowMatrix& latents);

/// One output row per input row. The first min(T, N) rows come from the
/// first window; every later row is the last row of the window ending at
/// that step. `batch_windows` bounds how many windows share one pass.
RowMatrix sliding_window_infer(const ViftWeights& w, const RowMatrix& stream, std::size_t batch_windows = 64);

}  // namespace vift
