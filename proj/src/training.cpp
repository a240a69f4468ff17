#include "vift/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace vift {

std::string to_string(Norm n) { return n == Norm::kL1 ? "l1" : "l2"; }

Norm parse_norm(std::string_view s) {
  if (s == "l1" || s == "L1") return Norm::kL1;
  if (s == "l2" || s == "L2") return Norm::kL2;
  throw std::invalid_argument("unknown norm '" + std::string(s) + "' (expected l1 or l2)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(lr_min >= 0.0) || lr_min > lr) fail("lr_min must lie in [0, lr]");
  if (!(beta1 > 0.0 && beta1 < 1.0)) fail("beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) fail("beta2 must lie in (0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha must be nonnegative");
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch < 1) fail("batch must be at least 1");
  if (restart_period < 1) fail("restart_period must be at least 1");
  if (bins < 1) fail("bins must be at least 1");
  if (stride < 1) fail("stride must be at least 1");
  if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0)) fail("held_out_fraction must lie in [0, 1)");
  rpmg.validate();
}

double lr_schedule(double epoch_progress, const TrainConfig& config) {
  if (!(epoch_progress >= 0.0)) throw std::invalid_argument("lr_schedule: progress must be nonnegative");
  const double period = static_cast<double>(config.restart_period);
  const double c = std::fmod(epoch_progress, period);
  return config.lr_min + 0.5 * (config.lr - config.lr_min) * (1.0 + std::cos(std::numbers::pi * c / period));
}

LossOptions LossOptions::from(const ViftConfig& model, const TrainConfig& train) {
  return {train.alpha, train.norm, model.head_mode, model.rotation_param, train.rpmg};
}

namespace {

// Elementwise criterion with its derivative, scaled by 1/count.
double criterion(double d, Norm norm) { return norm == Norm::kL1 ? std::abs(d) : d * d; }
double criterion_grad(double d, Norm norm) {
  if (norm == Norm::kL2) return 2.0 * d;
  return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
}

Vec3 gt_rotation_params(const RotationMatrix& R, RotationParam p) {
  return p == RotationParam::kEuler ? matrix_to_euler(R).as_vector() : Vec3(so3_log(R));
}

}  // namespace

PoseLossResult pose_loss(const RowMatrix& pred, std::span<const SE3Pose> gt, const LossOptions& options) {
  const Eigen::Index n = pred.rows();
  if (static_cast<std::size_t>(n) != gt.size())
    throw std::invalid_argument("pose_loss: " + std::to_string(n) + " predictions for " +
                                std::to_string(gt.size()) + " ground-truth poses");
  if (n == 0) throw std::invalid_argument("pose_loss: empty window");
  const bool nine = options.head_mode == HeadMode::kRpmg9d;
  const Eigen::Index width = nine ? 12 : 6;
  if (pred.cols() != width)
    throw std::invalid_argument("pose_loss: prediction width " + std::to_string(pred.cols()) + ", expected " +
                                std::to_string(width));

  PoseLossResult r;
  r.grad = RowMatrix::Zero(n, width);
  const double dn = static_cast<double>(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double d = pred(i, c) - gt[i].translation(c);
      r.translation += criterion(d, options.norm);
      r.grad(i, c) = criterion_grad(d, options.norm) / (3.0 * dn);
    }
  }
  r.translation /= 3.0 * dn;

  if (options.head_mode == HeadMode::kEuler) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 target = gt_rotation_params(gt[i].rotation, options.rotation_param);
      for (int c = 0; c < 3; ++c) {
        double d = pred(i, 3 + c) - target(c);
        if (std::abs(d) <= kRotationDeadband) d = 0.0;
        r.rotation += criterion(d, options.norm);
        r.grad(i, 3 + c) = options.alpha * criterion_grad(d, options.norm) / (3.0 * dn);
      }
    }
    r.rotation /= 3.0 * dn;
  } else {
    const double scale = options.alpha / dn;
    for (Eigen::Index i = 0; i < n; ++i) {
      Mat3 x;
      Vec3 p;
      if (nine) {
        for (int k = 0; k < 9; ++k) x(k / 3, k % 3) = pred(i, 3 + k);
      } else {
        p = pred.block<1, 3>(i, 3).transpose();
        x = options.rotation_param == RotationParam::kEuler ? Mat3(euler_to_matrix(EulerAngles::from_vector(p)))
                                                             : Mat3(so3_exp(p));
      }
      const RotationMatrix R = svd_orthogonalize(x);
      r.rotation += rotation_loss(R, gt[i].rotation, options.norm);
      const Mat3 gx = rpmg_grad(x, gt[i].rotation, options.rpmg, options.norm);
      if (nine) {
        for (int k = 0; k < 9; ++k) r.grad(i, 3 + k) = scale * gx(k / 3, k % 3);
      } else {
        const Vec3 gp = options.rotation_param == RotationParam::kEuler
                            ? chain_through_euler(EulerAngles::from_vector(p), gx)
                            : chain_through_axis_angle(p, gx);
        r.grad.block<1, 3>(i, 3) = scale * gp.transpose();
      }
    }
    r.rotation /= dn;
  }
  r.value = r.translation + options.alpha * r.rotation;
  return r;
}

void adamw_step(std::span<const NamedTensor> params, std::span<const ad::Tensor* const> grads, AdamState& state,
                std::uint64_t t, const AdamConfig& config) {
  if (t < 1) throw std::invalid_argument("adamw_step: step index must be at least 1");
  if (params.size() != grads.size())
    throw std::invalid_argument("adamw_step: " + std::to_string(params.size()) + " parameters but " +
                                std::to_string(grads.size()) + " gradients");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor->same_shape(*grads[i]))
      throw std::invalid_argument("adamw_step: gradient shape " + grads[i]->shape_string() + " for parameter " +
                                  params[i].name + " " + params[i].tensor->shape_string());
    for (double g : grads[i]->values())
      if (!std::isfinite(g)) throw std::runtime_error("adamw_step: non-finite gradient in parameter " + params[i].name);
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->shape(), 0.0);
      state.v.emplace_back(p.tensor->shape(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adamw_step: optimizer state has " + std::to_string(state.m.size()) +
                                " moments for " + std::to_string(params.size()) + " parameters");

  const double td = static_cast<double>(t);
  const double c1 = 1.0 - std::pow(config.beta1, td);
  const double c2 = 1.0 - std::pow(config.beta2, td);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].tensor->values();
    const auto g = grads[i]->values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    if (m.size() != p.size() || v.size() != p.size())
      throw std::invalid_argument("adamw_step: moment shape mismatch for parameter " + params[i].name);
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] -= config.lr * (m_hat / (std::sqrt(v_hat) + config.eps)) + config.lr * config.weight_decay * p[k];
    }
  }
  state.step = t;
}

std::vector<double> rotation_histogram_weights(const std::vector<LatentWindow>& windows, std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("rotation_histogram_weights: bins must be at least 1");
  std::vector<double> w(windows.size(), 1.0);
  if (windows.empty()) return w;
  std::vector<double> stat(windows.size(), 0.0);
  for (std::size_t i = 0; i < windows.size(); ++i)
    for (const SE3Pose& p : windows[i].gt_rel)
      stat[i] = std::max(stat[i], geodesic_angle(p.rotation, RotationMatrix::Identity()));
  const double top = *std::max_element(stat.begin(), stat.end());
  if (!(top > 0.0)) return w;

  std::vector<std::size_t> bin(windows.size());
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    bin[i] = std::min(bins - 1, static_cast<std::size_t>(stat[i] / top * static_cast<double>(bins)));
    ++count[bin[i]];
  }
  const auto occupied = static_cast<double>(std::count_if(count.begin(), count.end(), [](auto c) { return c > 0; }));
  // Each occupied bin then carries the same total weight.
  const double k = static_cast<double>(windows.size()) / occupied;
  for (std::size_t i = 0; i < windows.size(); ++i) w[i] = k / static_cast<double>(count[bin[i]]);
  return w;
}

namespace {

void check_windows(const std::vector<LatentWindow>& windows, const ViftConfig& model, const char* what) {
  const std::size_t width = model.visual_dim + model.inertial_dim;
  for (const auto& win : windows) {
    if (static_cast<std::size_t>(win.latents.rows()) != model.window || win.gt_rel.size() != model.window)
      throw std::invalid_argument(std::string("train: ") + what + " window of length " +
                                  std::to_string(win.latents.rows()) + ", model window is " +
                                  std::to_string(model.window));
    if (static_cast<std::size_t>(win.latents.cols()) != width)
      throw std::invalid_argument(std::string("train: ") + what + " latent width " +
                                  std::to_string(win.latents.cols()) + ", model expects " + std::to_string(width));
  }
}

RowMatrix stack(const std::vector<LatentWindow>& windows, std::span<const std::size_t> idx) {
  const Eigen::Index n = windows[idx[0]].latents.rows();
  RowMatrix out(n * static_cast<Eigen::Index>(idx.size()), windows[idx[0]].latents.cols());
  for (std::size_t b = 0; b < idx.size(); ++b) out.middleRows(static_cast<Eigen::Index>(b) * n, n) = windows[idx[b]].latents;
  return out;
}

constexpr std::size_t kEvalBatch = 64;

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void append_log(const std::filesystem::path& path, const EpochRecord& r, bool header) {
  std::ofstream out(path, header ? std::ios::trunc : std::ios::app);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (header) out << "epoch,lr,train_loss,val_loss,wall_seconds\n";
  out << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.train_loss) << ','
      << format_double(r.val_loss) << ',' << format_double(r.wall_seconds) << '\n';
}

void write_checkpoint(const std::filesystem::path& dir, const ViftWeights& w, const TrainingState& s, bool tagged) {
  if (dir.empty()) return;
  save_weights(w, dir / "weights.vifw");
  save_training_state(s, dir / "state.vifs");
  if (tagged) save_weights(w, dir / ("weights_epoch" + std::to_string(s.epoch) + ".vifw"));
}

}  // namespace

double mean_window_loss(const ViftWeights& w, const std::vector<LatentWindow>& windows, const LossOptions& options) {
  if (windows.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = w.config.window;
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < windows.size(); start += kEvalBatch) {
    idx.resize(std::min(kEvalBatch, windows.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const RowMatrix out = forward_batch(w, stack(windows, idx), n);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const RowMatrix pred = out.middleRows(static_cast<Eigen::Index>(b * n), static_cast<Eigen::Index>(n));
      try {
        total += pose_loss(pred, windows[idx[b]].gt_rel, options).value;
      } catch (const std::domain_error&) {
        return std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  return total / static_cast<double>(windows.size());
}

TrainResult train(const ViftConfig& model, const TrainConfig& config, const std::vector<LatentWindow>& train_set,
                  const std::vector<LatentWindow>& held_out, const TrainOptions& options) {
  model.validate();
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: training set is empty");
  check_windows(train_set, model, "training");
  check_windows(held_out, model, "held-out");
  if (options.resume_state.has_value() != options.resume_weights.has_value())
    throw std::invalid_argument("train: resuming needs both weights and optimizer state");

  const LossOptions loss_opts = LossOptions::from(model, config);
  const std::vector<double> sample_w = config.balance ? rotation_histogram_weights(train_set, config.bins)
                                                      : std::vector<double>(train_set.size(), 1.0);
  const std::filesystem::path log_path = options.out_dir.empty() ? std::filesystem::path{} : options.out_dir / "train_log.csv";
  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

  TrainResult result;
  if (options.resume_weights) {
    if (!(options.resume_weights->config == model))
      throw std::invalid_argument("train: resumed weights were trained with a different model config");
    result.weights = *options.resume_weights;
    result.state = *options.resume_state;
  } else {
    result.weights = init_weights(model, config.seed);
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  auto record = [&](EpochRecord r, bool header) {
    result.log.push_back(r);
    if (!log_path.empty()) append_log(log_path, r, header);
    if (options.on_epoch) options.on_epoch(r);
    spdlog::info("epoch {:4d}  lr {:.3e}  train {:.6g}  val {:.6g}  {:.1f}s", r.epoch, r.lr, r.train_loss,
                 r.val_loss, r.wall_seconds);
  };

  if (!options.resume_weights) {
    record({0, lr_schedule(0.0, config), mean_window_loss(result.weights, train_set, loss_opts),
            mean_window_loss(result.weights, held_out, loss_opts), elapsed()},
           true);
  } else if (!log_path.empty() && !std::filesystem::exists(log_path)) {
    std::ofstream(log_path) << "epoch,lr,train_loss,val_loss,wall_seconds\n";
  }

  const std::size_t n = model.window;
  const std::size_t batches = (train_set.size() + config.batch - 1) / config.batch;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = result.state.epoch + 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    const ViftWeights last_good = result.weights;
    const TrainingState last_state = result.state;
    auto diverge = [&](const std::string& why) {
      write_checkpoint(options.out_dir, last_good, last_state, false);
      throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " + why +
                             "; last good weights are from epoch " + std::to_string(last_state.epoch));
    };

    double epoch_loss = 0.0;
    const double lr_epoch = lr_schedule(static_cast<double>(epoch - 1), config);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * config.batch;
      const std::span<const std::size_t> idx(order.data() + begin, std::min(config.batch, order.size() - begin));
      const double bsize = static_cast<double>(idx.size());

      ad::Tape tape;
      const BoundWeights bound = bind(tape, result.weights);
      const ad::Var x = tape.constant(ad::Tensor::from_matrix(stack(train_set, idx)));
      const ad::Var out = forward(bound, model, x, n);
      const RowMatrix pred_all = out.value().matrix();

      RowMatrix seed(pred_all.rows(), pred_all.cols());
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto rows = static_cast<Eigen::Index>(n);
        const auto r0 = static_cast<Eigen::Index>(k * n);
        PoseLossResult l;
        try {
          l = pose_loss(pred_all.middleRows(r0, rows), train_set[idx[k]].gt_rel, loss_opts);
        } catch (const std::domain_error& e) {
          diverge(e.what());
        }
        const double wk = sample_w[idx[k]] / bsize;
        batch_loss += wk * l.value;
        seed.middleRows(r0, rows) = wk * l.grad;
      }
      if (!std::isfinite(batch_loss)) diverge("non-finite loss");

      tape.backward(out, ad::Tensor::from_matrix(seed));
      std::vector<const ad::Tensor*> grads;
      grads.reserve(bound.parameters.size());
      for (const ad::Var& p : bound.parameters) grads.push_back(&p.grad());

      const double progress = static_cast<double>(epoch - 1) + static_cast<double>(b) / static_cast<double>(batches);
      const AdamConfig adam{lr_schedule(progress, config), config.beta1, config.beta2, config.adam_eps,
                            config.weight_decay};
      try {
        adamw_step(result.weights.named_parameters(), grads, result.state.adam, result.state.adam.step + 1, adam);
      } catch (const std::runtime_error& e) {
        diverge(e.what());
      }
      epoch_loss += batch_loss * bsize;
    }
    epoch_loss /= static_cast<double>(train_set.size());
    result.state.epoch = epoch;

    const double val = mean_window_loss(result.weights, held_out, loss_opts);
    if (!held_out.empty() && !std::isfinite(val)) diverge("non-finite held-out loss");
    record({epoch, lr_epoch, epoch_loss, val, elapsed()}, false);

    const bool boundary = epoch % config.restart_period == 0;
    if (boundary || epoch == config.epochs) write_checkpoint(options.out_dir, result.weights, result.state, true);
  }
  return result;
}

StepErrors window_step_errors(const ViftWeights& w, const std::vector<LatentWindow>& windows) {
  StepErrors e;
  const std::size_t n = w.config.window;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < windows.size(); start += kEvalBatch) {
    idx.resize(std::min(kEvalBatch, windows.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const RowMatrix out = forward_batch(w, stack(windows, idx), n);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      for (std::size_t s = 0; s < n; ++s) {
        const SE3Pose est = to_se3(decode_pose(out, static_cast<Eigen::Index>(b * n + s), w.config), w.config);
        const SE3Pose& gt = windows[idx[b]].gt_rel[s];
        e.rotation_deg.push_back(geodesic_angle(est.rotation, gt.rotation) * 180.0 / std::numbers::pi);
        e.translation_m.push_back((est.translation - gt.translation).norm());
        e.step_length_m.push_back(gt.translation.norm());
      }
    }
  }
  return e;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace vift
