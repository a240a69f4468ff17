#include "vift/data.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/QR>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace vift {

namespace fs = std::filesystem;
using nlohmann::json;

void SequenceDataset::derive_relative() {
  relative.clear();
  if (absolute.empty()) return;
  relative.reserve(absolute.size() - 1);
  for (std::size_t t = 1; t < absolute.size(); ++t) relative.push_back(relative_pose(absolute[t - 1], absolute[t]));
}

// ---- KITTI pose files -----------------------------------------------------------

std::vector<SE3Pose> parse_kitti_poses(std::string_view text) {
  std::vector<SE3Pose> poses;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;

    double v[12];
    std::size_t fields = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (true) {
      while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
      if (p == end) break;
      double x = 0.0;
      const auto [next, ec] = std::from_chars(p, end, x);
      if (ec != std::errc() || (next < end && !std::isspace(static_cast<unsigned char>(*next)))) {
        throw std::runtime_error("poses: line " + std::to_string(line_no) + ": cannot parse a real number");
      }
      if (!std::isfinite(x)) throw std::runtime_error("poses: line " + std::to_string(line_no) + ": non-finite value");
      if (fields < 12) v[fields] = x;
      ++fields;
      p = next;
    }
    if (fields == 0) continue;
    if (fields != 12) {
      throw std::runtime_error("poses: line " + std::to_string(line_no) + ": expected 12 values, found " +
                               std::to_string(fields));
    }
    SE3Pose pose;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pose.rotation(r, c) = v[4 * r + c];
      pose.translation(r) = v[4 * r + 3];
    }
    if (!is_rotation(pose.rotation, 1e-6)) {
      try {
        pose.rotation = svd_orthogonalize(pose.rotation);
      } catch (const std::domain_error&) {
        throw std::runtime_error("poses: line " + std::to_string(line_no) + ": rotation block is rank deficient");
      }
      spdlog::warn("poses: line {}: rotation re-orthogonalized", line_no);
    }
    poses.push_back(pose);
  }
  return poses;
}

std::string format_kitti_poses(const std::vector<SE3Pose>& poses, int digits) {
  std::string out;
  char buf[64];
  for (const SE3Pose& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        const double x = c < 3 ? p.rotation(r, c) : p.translation(r);
        std::snprintf(buf, sizeof buf, "%.*g", digits, x);
        if (r || c) out += ' ';
        out += buf;
      }
    }
    out += '\n';
  }
  return out;
}

std::vector<SE3Pose> read_kitti_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open pose file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_kitti_poses(ss.str());
}

void write_kitti_file(const std::vector<SE3Pose>& poses, const fs::path& path, int digits) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << format_kitti_poses(poses, digits);
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

// ---- sequence directories -------------------------------------------------------

SequenceDataset load_sequence(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  const fs::path latent_path = dir / "latents.bin";
  const fs::path pose_path = dir / "poses.txt";
  for (const fs::path& p : {meta_path, latent_path, pose_path}) {
    if (!fs::is_regular_file(p)) throw std::runtime_error("sequence: missing file '" + p.string() + "'");
  }

  json meta;
  try {
    std::ifstream in(meta_path);
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("sequence: cannot parse '" + meta_path.string() + "': " + e.what());
  }
  SequenceDataset seq;
  std::size_t dim = 0, count = 0;
  try {
    const int version = meta.at("format_version").get<int>();
    if (version != kSequenceFormatVersion) {
      throw std::runtime_error("sequence: unsupported format_version " + std::to_string(version));
    }
    dim = meta.at("latent_dim").get<std::size_t>();
    count = meta.at("count").get<std::size_t>();
    seq.id = meta.value("sequence_id", dir.filename().string());
    seq.visual_dim = meta.value("visual_dim", std::size_t{0});
    seq.inertial_dim = meta.value("inertial_dim", std::size_t{0});
  } catch (const json::exception& e) {
    throw std::runtime_error("sequence: bad meta.json in '" + dir.string() + "': " + e.what());
  }

  const std::uintmax_t bytes = fs::file_size(latent_path);
  seq.absolute = read_kitti_file(pose_path);
  const std::uintmax_t expected_bytes = std::uintmax_t(count) * dim * sizeof(float);
  if (count == 0 || dim == 0 || bytes != expected_bytes || seq.absolute.size() != count + 1) {
    throw std::runtime_error("sequence '" + dir.string() + "': size mismatch: meta.json declares count " +
                             std::to_string(count) + " x latent_dim " + std::to_string(dim) + " (" +
                             std::to_string(expected_bytes) + " bytes), latents.bin holds " +
                             std::to_string(bytes) + " bytes, poses.txt holds " +
                             std::to_string(seq.absolute.size()) + " poses (expected " + std::to_string(count + 1) +
                             ")");
  }

  std::vector<float> raw(count * dim);
  std::ifstream in(latent_path, std::ios::binary);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(expected_bytes));
  if (in.gcount() != std::streamsize(expected_bytes)) {
    throw std::runtime_error("sequence: short read from '" + latent_path.string() + "'");
  }
  seq.latents.resize(Eigen::Index(count), Eigen::Index(dim));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i])) throw std::runtime_error("sequence: non-finite latent in '" + latent_path.string() + "'");
    seq.latents.data()[i] = raw[i];
  }
  seq.derive_relative();
  return seq;
}

void write_sequence(const SequenceDataset& seq, const fs::path& dir) {
  if (seq.absolute.size() != std::size_t(seq.latents.rows()) + 1) {
    throw std::invalid_argument("write_sequence: need latents.rows() + 1 absolute poses");
  }
  fs::create_directories(dir);
  json meta{{"format_version", kSequenceFormatVersion}, {"sequence_id", seq.id},
            {"latent_dim", seq.latents.cols()}, {"count", seq.latents.rows()}};
  if (seq.visual_dim + seq.inertial_dim == std::size_t(seq.latents.cols()) && seq.visual_dim > 0) {
    meta["visual_dim"] = seq.visual_dim;
    meta["inertial_dim"] = seq.inertial_dim;
  }
  {
    std::ofstream out(dir / "meta.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + (dir / "meta.json").string() + "'");
    out << meta.dump(2) << '\n';
  }
  std::vector<float> raw(std::size_t(seq.latents.size()));
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<float>(seq.latents.data()[i]);
  std::ofstream out(dir / "latents.bin", std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing '" + (dir / "latents.bin").string() + "'");
  write_kitti_file(seq.absolute, dir / "poses.txt");
}

// ---- windows ----------------------------------------------------------------------

std::vector<LatentWindow> window_dataset(const SequenceDataset& seq, std::size_t n, std::size_t stride) {
  const std::size_t T = seq.length();
  if (n == 0 || stride == 0) throw std::invalid_argument("window_dataset: window and stride must be positive");
  if (n > T) {
    throw std::invalid_argument("window_dataset: window " + std::to_string(n) + " exceeds sequence length " +
                                std::to_string(T));
  }
  std::vector<LatentWindow> out;
  for (std::size_t off = 0; off + n <= T; off += stride) {
    LatentWindow w;
    w.latents = seq.latents.middleRows(Eigen::Index(off), Eigen::Index(n));
    w.gt_rel.assign(seq.relative.begin() + std::ptrdiff_t(off), seq.relative.begin() + std::ptrdiff_t(off + n));
    w.sequence_id = seq.id;
    w.offset = off;
    out.push_back(std::move(w));
  }
  return out;
}

WindowSplit split_windows(const std::vector<LatentWindow>& windows, double held_out_fraction) {
  if (!(held_out_fraction >= 0.0 && held_out_fraction < 1.0)) {
    throw std::invalid_argument("split_windows: held-out fraction must be in [0, 1)");
  }
  std::vector<std::string> order;
  std::map<std::string, std::vector<const LatentWindow*>> groups;
  for (const LatentWindow& w : windows) {
    auto [it, inserted] = groups.try_emplace(w.sequence_id);
    if (inserted) order.push_back(w.sequence_id);
    it->second.push_back(&w);
  }
  WindowSplit split;
  for (const std::string& id : order) {
    const auto& g = groups[id];
    std::size_t held = std::size_t(std::ceil(held_out_fraction * double(g.size())));
    if (g.size() < 2) held = 0;
    const std::size_t first_held = g.size() - held;
    const std::size_t boundary = held ? g[first_held]->offset : std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i < first_held; ++i)
      if (held == 0 || g[i]->offset + std::size_t(g[i]->latents.rows()) <= boundary) split.train.push_back(*g[i]);
    for (std::size_t i = first_held; i < g.size(); ++i) split.held_out.push_back(*g[i]);
  }
  return split;
}

Eigen::Matrix<double, 6, 1> pose_features(const SE3Pose& rel) {
  Eigen::Matrix<double, 6, 1> f;
  f.head<3>() = rel.translation;
  f.tail<3>() = so3_log(rel.rotation);
  return f;
}

// ---- synthetic generator ------------------------------------------------------------

std::string to_string(Mixing m) { return m == Mixing::kLinear ? "linear" : "nonlinear"; }

Mixing parse_mixing(std::string_view s) {
  if (s == "linear") return Mixing::kLinear;
  if (s == "nonlinear") return Mixing::kNonlinear;
  throw std::invalid_argument("unknown mixing mode '" + std::string(s) + "'");
}

void SyntheticSpec::validate() const {
  if (length < 1) throw std::invalid_argument("synthetic: length must be at least 1");
  if (!(noise_std >= 0.0) || !(inertial_noise_scale >= 0.0)) {
    throw std::invalid_argument("synthetic: noise must be non-negative");
  }
  if (!(speed_min >= 0.0 && speed_max >= speed_min)) throw std::invalid_argument("synthetic: bad speed range");
  if (!(yaw_rate_max >= 0.0)) throw std::invalid_argument("synthetic: yaw rate bound must be non-negative");
  if (!(frame_dt > 0.0)) throw std::invalid_argument("synthetic: frame_dt must be positive");
  if (visual_dim + inertial_dim == 0) throw std::invalid_argument("synthetic: latent width must be positive");
}

namespace {

Mat3 axis_rotation(int axis, double a) { return so3_exp(Vec3::Unit(axis) * a); }

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(stream)};
  return std::mt19937_64(seq);
}

std::vector<SE3Pose> synthetic_trajectory(const SyntheticSpec& spec) {
  std::mt19937_64 rng = substream(spec.seed, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.002);

  const auto draw_speed = [&] { return spec.speed_min + (spec.speed_max - spec.speed_min) * unit(rng); };
  const auto draw_yaw_rate = [&] { return unit(rng) < 0.5 ? 0.0 : spec.yaw_rate_max * (2.0 * unit(rng) - 1.0); };

  std::vector<SE3Pose> abs;
  abs.reserve(spec.length + 1);
  abs.push_back(SE3Pose::identity());

  double heading = 0.0, pitch = 0.0, roll = 0.0;
  double speed = draw_speed(), yaw_rate = 0.0;
  Vec3 position = Vec3::Zero();
  std::size_t t = 0;
  while (t < spec.length) {
    const std::size_t seg = 40 + std::size_t(unit(rng) * 160.0);
    const double v0 = speed, w0 = yaw_rate;
    const double v1 = draw_speed(), w1 = draw_yaw_rate();
    const std::size_t blend = std::min<std::size_t>(20, seg);
    for (std::size_t k = 0; k < seg && t < spec.length; ++k, ++t) {
      const double s = k < blend ? 0.5 - 0.5 * std::cos(std::numbers::pi * double(k + 1) / double(blend)) : 1.0;
      speed = v0 + (v1 - v0) * s;
      yaw_rate = w0 + (w1 - w0) * s;
      const Mat3 R = abs.back().rotation;
      position += R * Vec3(0.0, 0.0, speed * spec.frame_dt);
      heading += yaw_rate * spec.frame_dt;
      pitch = 0.98 * pitch + jitter(rng);
      roll = 0.98 * roll + jitter(rng);
      // Camera axes: heading turns about y (down), pitch about x, roll about z.
      abs.push_back({axis_rotation(1, heading) * axis_rotation(0, pitch) * axis_rotation(2, roll), position});
    }
  }
  return abs;
}

}  // namespace

SyntheticSequence generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticSequence out;
  SequenceDataset& seq = out.dataset;
  seq.id = spec.id;
  seq.visual_dim = spec.visual_dim;
  seq.inertial_dim = spec.inertial_dim;
  seq.absolute = synthetic_trajectory(spec);
  seq.derive_relative();

  const Eigen::Index D = Eigen::Index(spec.visual_dim + spec.inertial_dim);
  std::mt19937_64 mix_rng = substream(spec.seed, 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> offset_dist(-0.5, 0.5);
  std::uniform_real_distribution<double> gain_dist(0.5, 1.5);
  // Column scales bring translation (~1 m/step) and rotation (~0.03
  // rad/step) features to comparable latent magnitudes.
  const double column_scale[6] = {0.5, 0.5, 0.5, 10.0, 10.0, 10.0};
  out.mixing.resize(D, 6);
  for (Eigen::Index i = 0; i < D; ++i)
    for (int j = 0; j < 6; ++j) out.mixing(i, j) = column_scale[j] * normal(mix_rng);
  out.offset.resize(D);
  for (Eigen::Index i = 0; i < D; ++i) out.offset(i) = offset_dist(mix_rng);
  if (spec.mixing == Mixing::kNonlinear) {
    out.gains.resize(D);
    for (Eigen::Index i = 0; i < D; ++i) out.gains(i) = gain_dist(mix_rng);
  }

  std::mt19937_64 noise_rng = substream(spec.seed, 3);
  const Eigen::Index T = Eigen::Index(spec.length);
  seq.latents.resize(T, D);
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::VectorXd z = out.mixing * pose_features(seq.relative[std::size_t(t)]) + out.offset;
    if (spec.mixing == Mixing::kNonlinear) z = (out.gains.array() * z.array()).tanh().matrix();
    for (Eigen::Index i = 0; i < D; ++i) {
      const double sigma = i < Eigen::Index(spec.visual_dim) ? spec.noise_std : spec.noise_std * spec.inertial_noise_scale;
      if (sigma > 0.0) z(i) += sigma * normal(noise_rng);
    }
    seq.latents.row(t) = z.transpose();
  }
  return out;
}

double affine_fit_residual(const SequenceDataset& seq) {
  const Eigen::Index T = seq.latents.rows();
  Eigen::MatrixXd design(T, 7);
  for (Eigen::Index t = 0; t < T; ++t) {
    design.row(t).head<6>() = pose_features(seq.relative[std::size_t(t)]).transpose();
    design(t, 6) = 1.0;
  }
  const Eigen::MatrixXd L = seq.latents;
  const Eigen::MatrixXd coef = design.colPivHouseholderQr().solve(L);
  const double scale = std::max(L.cwiseAbs().maxCoeff(), 1e-300);
  return (design * coef - L).cwiseAbs().maxCoeff() / scale;
}

}  // namespace vift
