#include "vift/model.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace vift {

namespace {

[[noreturn]] void bad_enum(std::string_view kind, std::string_view s) {
  throw std::invalid_argument("unknown " + std::string(kind) + " '" + std::string(s) + "'");
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("config: " + message);
}

}  // namespace

std::string to_string(Architecture a) { return a == Architecture::kTransformer ? "transformer" : "mlp"; }

std::string to_string(HeadMode m) {
  switch (m) {
    case HeadMode::kEuler: return "euler";
    case HeadMode::kRpmgEuler: return "rpmg-euler";
    case HeadMode::kRpmg9d: return "rpmg-9d";
  }
  return "?";
}

std::string to_string(RotationParam p) { return p == RotationParam::kEuler ? "euler" : "axis-angle"; }

Architecture parse_architecture(std::string_view s) {
  if (s == "transformer") return Architecture::kTransformer;
  if (s == "mlp") return Architecture::kMlp;
  bad_enum("architecture", s);
}

HeadMode parse_head_mode(std::string_view s) {
  if (s == "euler") return HeadMode::kEuler;
  if (s == "rpmg-euler") return HeadMode::kRpmgEuler;
  if (s == "rpmg-9d") return HeadMode::kRpmg9d;
  bad_enum("head mode", s);
}

RotationParam parse_rotation_param(std::string_view s) {
  if (s == "euler") return RotationParam::kEuler;
  if (s == "axis-angle") return RotationParam::kAxisAngle;
  bad_enum("rotation parameterization", s);
}

void ViftConfig::validate() const {
  require(d_model == visual_dim + inertial_dim, "d_model (" + std::to_string(d_model) +
                                                    ") must equal visual_dim + inertial_dim (" +
                                                    std::to_string(visual_dim + inertial_dim) + ")");
  require(d_model >= 2, "d_model must be at least 2");
  require(window >= 1, "window must be at least 1");
  require(dropout == 0.0, "dropout is not supported; it must be 0");
  require(head_hidden >= 1, "head_hidden must be at least 1");
  if (architecture == Architecture::kTransformer) {
    require(n_heads >= 1 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
    require(n_layers >= 1, "n_layers must be at least 1");
    require(d_ff >= 1, "d_ff must be at least 1");
  } else {
    require(mlp_hidden >= 1, "mlp_hidden must be at least 1");
  }
}

// ---- weights ----------------------------------------------------------------

std::vector<NamedTensor> ViftWeights::named_parameters() {
  std::vector<NamedTensor> out;
  const auto affine = [&out](const std::string& name, Affine& a) {
    out.push_back({name + ".weight", &a.weight});
    out.push_back({name + ".bias", &a.bias});
  };
  const auto norm = [&out](const std::string& name, LayerNormParams& n) {
    out.push_back({name + ".gain", &n.gain});
    out.push_back({name + ".bias", &n.bias});
  };
  if (config.architecture == Architecture::kMlp) {
    for (std::size_t i = 0; i < mlp.size(); ++i) affine("mlp." + std::to_string(i), mlp[i]);
    return out;
  }
  affine("projection", projection);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    EncoderLayerParams& l = layers[i];
    affine(p + "query", l.query);
    out.push_back({p + "key.weight", &l.key});
    affine(p + "value", l.value);
    affine(p + "output", l.output);
    norm(p + "norm_attention", l.norm_attention);
    affine(p + "ff_in", l.ff_in);
    affine(p + "ff_out", l.ff_out);
    norm(p + "norm_ff", l.norm_ff);
  }
  affine("head_hidden", head_hidden);
  affine("head_out", head_out);
  return out;
}

std::vector<ConstNamedTensor> ViftWeights::named_parameters() const {
  std::vector<ConstNamedTensor> out;
  for (const NamedTensor& n : const_cast<ViftWeights*>(this)->named_parameters()) out.push_back({n.name, n.tensor});
  return out;
}

std::size_t ViftWeights::parameter_count() const {
  std::size_t n = 0;
  for (const ConstNamedTensor& p : named_parameters()) n += p.tensor->size();
  return n;
}

namespace {

Affine make_affine(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Affine a{ad::Tensor({in, out}), ad::Tensor({out})};
  for (double& v : a.weight.values()) v = u(rng);
  for (double& v : a.bias.values()) v = u(rng);
  return a;
}

LayerNormParams make_norm(std::size_t d) { return {ad::Tensor({d}, 1.0), ad::Tensor({d}, 0.0)}; }

}  // namespace

ViftWeights init_weights(const ViftConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ViftWeights w;
  w.config = config;
  const std::size_t d = config.d_model;
  if (config.architecture == Architecture::kMlp) {
    const std::size_t h = config.mlp_hidden;
    w.mlp.push_back(make_affine(d, h, rng));
    w.mlp.push_back(make_affine(h, h, rng));
    w.mlp.push_back(make_affine(h, h, rng));
    w.mlp.push_back(make_affine(h, config.pose_width(), rng));
  } else {
    w.projection = make_affine(d, d, rng);
    for (std::size_t i = 0; i < config.n_layers; ++i) {
      EncoderLayerParams l;
      l.query = make_affine(d, d, rng);
      l.key = make_affine(d, d, rng).weight;
      l.value = make_affine(d, d, rng);
      l.output = make_affine(d, d, rng);
      l.norm_attention = make_norm(d);
      l.ff_in = make_affine(d, config.d_ff, rng);
      l.ff_out = make_affine(config.d_ff, d, rng);
      l.norm_ff = make_norm(d);
      w.layers.push_back(std::move(l));
    }
    w.head_hidden = make_affine(d, config.head_hidden, rng);
    w.head_out = make_affine(config.head_hidden, config.pose_width(), rng);
  }
  spdlog::debug("initialized {} network with {} parameters", to_string(config.architecture), w.parameter_count());
  return w;
}

// ---- tape-level blocks --------------------------------------------------------

BoundWeights bind(ad::Tape& tape, const ViftWeights& w) {
  BoundWeights b;
  const auto affine_vars = [&](const Affine& a) {
    AffineVars v{tape.parameter(a.weight), tape.parameter(a.bias)};
    b.parameters.push_back(v.weight);
    b.parameters.push_back(v.bias);
    return v;
  };
  const auto norm_vars = [&](const LayerNormParams& n) {
    LayerNormVars v{tape.parameter(n.gain), tape.parameter(n.bias)};
    b.parameters.push_back(v.gain);
    b.parameters.push_back(v.bias);
    return v;
  };
  if (w.config.architecture == Architecture::kMlp) {
    for (const Affine& a : w.mlp) b.mlp.push_back(affine_vars(a));
    return b;
  }
  b.projection = affine_vars(w.projection);
  for (const EncoderLayerParams& l : w.layers) {
    EncoderLayerVars v;
    v.query = affine_vars(l.query);
    v.key = tape.parameter(l.key);
    b.parameters.push_back(v.key);
    v.value = affine_vars(l.value);
    v.output = affine_vars(l.output);
    v.norm_attention = norm_vars(l.norm_attention);
    v.ff_in = affine_vars(l.ff_in);
    v.ff_out = affine_vars(l.ff_out);
    v.norm_ff = norm_vars(l.norm_ff);
    b.layers.push_back(v);
  }
  b.head_hidden = affine_vars(w.head_hidden);
  b.head_out = affine_vars(w.head_out);
  return b;
}

ad::Var affine(ad::Var x, const AffineVars& a) { return ad::add(ad::matmul(x, a.weight), a.bias); }

ad::Var input_projection(ad::Var x, const AffineVars& projection) {
  if (x.value().cols() != projection.weight.value().rows()) {
    throw std::invalid_argument("input_projection: latent width " + std::to_string(x.value().cols()) +
                                " does not match d_model " + std::to_string(projection.weight.value().rows()));
  }
  return affine(x, projection);
}

ad::Tensor positional_encoding(std::size_t n, std::size_t d_model) {
  ad::Tensor pe({n, d_model});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t j = 0; j < d_model; j += 2) {
      const double arg = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(j) / d_model);
      pe.at(pos, j) = std::sin(arg);
      if (j + 1 < d_model) pe.at(pos, j + 1) = std::cos(arg);
    }
  }
  return pe;
}

ad::Tensor causal_mask(std::size_t n) {
  if (n == 0) throw std::invalid_argument("causal_mask: length must be at least 1");
  ad::Tensor m({n, n});
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = q + 1; k < n; ++k) m.at(q, k) = -std::numeric_limits<double>::infinity();
  return m;
}

ad::Var encoder_layer(ad::Var x, const EncoderLayerVars& layer, const ad::Tensor& mask, std::size_t window_length,
                      std::size_t heads) {
  const std::size_t d = x.value().cols();
  if (layer.query.weight.value().rows() != d) {
    throw std::invalid_argument("encoder_layer: input width " + std::to_string(d) + " does not match layer width " +
                                std::to_string(layer.query.weight.value().rows()));
  }
  const ad::Var q = affine(x, layer.query);
  const ad::Var k = ad::matmul(x, layer.key);
  const ad::Var v = affine(x, layer.value);
  const ad::Var attended = affine(ad::masked_attention(q, k, v, window_length, heads, mask), layer.output);
  const ad::Var x1 = ad::layer_norm(ad::add(x, attended), layer.norm_attention.gain, layer.norm_attention.bias);
  const ad::Var ff = affine(ad::relu(affine(x1, layer.ff_in)), layer.ff_out);
  return ad::layer_norm(ad::add(x1, ff), layer.norm_ff.gain, layer.norm_ff.bias);
}

ad::Var pose_head(ad::Var x, const AffineVars& hidden, const AffineVars& out) {
  return affine(ad::relu(affine(x, hidden)), out);
}

ad::Var mlp_baseline(ad::Var x, const std::vector<AffineVars>& layers) {
  ad::Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = affine(h, layers[i]);
    if (i + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

ad::Var forward(const BoundWeights& bound, const ViftConfig& config, ad::Var latents, std::size_t window_length) {
  const ad::Tensor& in = latents.value();
  if (in.cols() != config.d_model) {
    throw std::invalid_argument("forward: latent width " + std::to_string(in.cols()) + " does not match d_model " +
                                std::to_string(config.d_model));
  }
  if (window_length == 0 || in.rows() % window_length != 0) {
    throw std::invalid_argument("forward: " + std::to_string(in.rows()) + " rows do not form windows of length " +
                                std::to_string(window_length));
  }
  if (config.architecture == Architecture::kMlp) return mlp_baseline(latents, bound.mlp);

  ad::Tape& tape = latents.tape();
  const std::size_t windows = in.rows() / window_length;
  const ad::Tensor pe = positional_encoding(window_length, config.d_model);
  ad::Tensor tiled({in.rows(), config.d_model});
  for (std::size_t w = 0; w < windows; ++w)
    tiled.matrix().middleRows(Eigen::Index(w * window_length), Eigen::Index(window_length)) = pe.matrix();

  ad::Var h = ad::add(input_projection(latents, bound.projection), tape.constant(std::move(tiled)));
  const ad::Tensor mask = causal_mask(window_length);
  for (const EncoderLayerVars& layer : bound.layers) h = encoder_layer(h, layer, mask, window_length, config.n_heads);
  return pose_head(h, bound.head_hidden, bound.head_out);
}

// ---- inference ----------------------------------------------------------------

PoseEstimate decode_pose(const RowMatrix& outputs, Eigen::Index row, const ViftConfig& config) {
  PoseEstimate p;
  p.translation = outputs.row(row).head<3>().transpose();
  p.rotation_params = outputs.row(row).segment(3, Eigen::Index(config.rotation_width())).transpose();
  return p;
}

std::vector<PoseEstimate> decode_poses(const RowMatrix& outputs, const ViftConfig& config) {
  std::vector<PoseEstimate> out;
  out.reserve(std::size_t(outputs.rows()));
  for (Eigen::Index r = 0; r < outputs.rows(); ++r) out.push_back(decode_pose(outputs, r, config));
  return out;
}

RotationMatrix estimate_rotation(const PoseEstimate& p, const ViftConfig& config) {
  if (config.head_mode == HeadMode::kRpmg9d) {
    Mat3 x;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) x(r, c) = p.rotation_params(3 * r + c);
    return svd_orthogonalize(x);
  }
  const Vec3 v = p.rotation_params.head<3>();
  if (config.rotation_param == RotationParam::kAxisAngle) return so3_exp(v);
  return euler_to_matrix(EulerAngles::from_vector(v));
}

SE3Pose to_se3(const PoseEstimate& p, const ViftConfig& config) {
  return {estimate_rotation(p, config), p.translation};
}

RowMatrix forward_batch(const ViftWeights& w, const RowMatrix& stacked, std::size_t window_length) {
  ad::Tape tape;
  const BoundWeights bound = bind(tape, w);
  const ad::Var x = tape.constant(ad::Tensor::from_matrix(stacked));
  return forward(bound, w.config, x, window_length).value().matrix();
}

RowMatrix forward_window(const ViftWeights& w, const RowMatrix& latents) {
  return forward_batch(w, latents, std::size_t(latents.rows()));
}

RowMatrix sliding_window_infer(const ViftWeights& w, const RowMatrix& stream, std::size_t batch_windows) {
  const Eigen::Index T = stream.rows();
  if (T < 1) throw std::invalid_argument("sliding_window_infer: empty latent stream");
  if (batch_windows == 0) throw std::invalid_argument("sliding_window_infer: batch_windows must be positive");
  const Eigen::Index N = std::min<Eigen::Index>(T, Eigen::Index(w.config.window));
  const Eigen::Index width = Eigen::Index(w.config.pose_width());

  RowMatrix out(T, width);
  out.topRows(N) = forward_window(w, stream.topRows(N));

  // Window ending at step t starts at t - N + 1; t = N .. T-1 remain.
  for (Eigen::Index first = N; first < T; first += Eigen::Index(batch_windows)) {
    const Eigen::Index count = std::min<Eigen::Index>(Eigen::Index(batch_windows), T - first);
    RowMatrix stacked(count * N, stream.cols());
    for (Eigen::Index i = 0; i < count; ++i) stacked.middleRows(i * N, N) = stream.middleRows(first + i - N + 1, N);
    const RowMatrix y = forward_batch(w, stacked, std::size_t(N));
    for (Eigen::Index i = 0; i < count; ++i) out.row(first + i) = y.row(i * N + N - 1);
  }
  return out;
}

}  // namespace vift
