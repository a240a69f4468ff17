#include "vift/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace vift {

void EvalProtocol::validate() const {
  if (start_step < 1) throw std::invalid_argument("eval protocol: start_step must be at least 1");
  if (lengths.empty()) throw std::invalid_argument("eval protocol: no subsequence lengths");
  for (double l : lengths)
    if (!(l > 0.0) || !std::isfinite(l)) throw std::invalid_argument("eval protocol: lengths must be positive");
}

std::vector<double> cumulative_distance(const std::vector<SE3Pose>& poses) {
  std::vector<double> d;
  d.reserve(poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k)
    d.push_back(k == 0 ? 0.0 : d.back() + (poses[k].translation - poses[k - 1].translation).norm());
  return d;
}

TrajectoryMetrics kitti_relative_errors(const std::vector<SE3Pose>& gt, const std::vector<SE3Pose>& est,
                                        const EvalProtocol& protocol) {
  protocol.validate();
  if (gt.size() != est.size())
    throw std::invalid_argument("kitti_relative_errors: " + std::to_string(gt.size()) + " ground-truth poses but " +
                                std::to_string(est.size()) + " estimates");
  if (gt.size() < 2) throw std::invalid_argument("kitti_relative_errors: need at least 2 poses");

  const std::vector<double> d = cumulative_distance(gt);
  TrajectoryMetrics m;
  for (double len : protocol.lengths) m.per_length.push_back({len, 0.0, 0.0, 0});

  for (std::size_t i = 0; i < gt.size(); i += protocol.start_step) {
    for (LengthMetrics& lm : m.per_length) {
      const double len = lm.length;
      const auto it = std::partition_point(d.begin() + static_cast<std::ptrdiff_t>(i), d.end(),
                                           [&](double dj) { return dj - d[i] < len; });
      if (it == d.end()) continue;
      const auto j = static_cast<std::size_t>(it - d.begin());
      const SE3Pose dg = relative_pose(gt[i], gt[j]);
      const SE3Pose de = relative_pose(est[i], est[j]);
      double t_err = 0.0, r_err = 0.0;
      // Identical motions score exactly zero rather than rounding noise.
      if (dg.rotation != de.rotation || dg.translation != de.translation) {
        const SE3Pose e = relative_pose(dg, de);
        t_err = 100.0 * e.translation.norm() / len;
        r_err = 100.0 * geodesic_angle(e.rotation, RotationMatrix::Identity()) * 180.0 / std::numbers::pi / len;
      }
      lm.t_rel += t_err;
      lm.r_rel += r_err;
      ++lm.count;
      m.t_rel += t_err;
      m.r_rel += r_err;
      ++m.count;
    }
  }
  for (LengthMetrics& lm : m.per_length) {
    if (lm.count == 0) continue;
    lm.t_rel /= static_cast<double>(lm.count);
    lm.r_rel /= static_cast<double>(lm.count);
  }
  if (m.count > 0) {
    m.t_rel /= static_cast<double>(m.count);
    m.r_rel /= static_cast<double>(m.count);
  }
  return m;
}

namespace {

struct Bounds {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  void add(double x, double y) {
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
};

// Maps data coordinates into a panel, y up.
struct Panel {
  double left, top, width, height;
  Bounds b;
  bool equal_aspect;
  double sx = 1, sy = 1, ox = 0, oy = 0;

  void fit() {
    double w = std::max(b.x1 - b.x0, 1e-9), h = std::max(b.y1 - b.y0, 1e-9);
    sx = width / w;
    sy = height / h;
    if (equal_aspect) sx = sy = std::min(sx, sy);
    ox = left + 0.5 * (width - sx * w) - sx * b.x0;
    oy = top + height - 0.5 * (height - sy * h) + sy * b.y0;
  }
  double px(double x) const { return ox + sx * x; }
  double py(double y) const { return oy - sy * y; }
};

using Series = std::vector<std::pair<double, double>>;

std::string polyline(const Panel& p, const Series& s, const char* color) {
  std::ostringstream os;
  os.precision(6);
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
  for (const auto& [x, y] : s) os << p.px(x) << ',' << p.py(y) << ' ';
  os << "\"/>\n";
  for (std::size_t k = 0; k < s.size(); k += kPlotMarkerEvery)
    os << "<circle cx=\"" << p.px(s[k].first) << "\" cy=\"" << p.py(s[k].second) << "\" r=\"3\" fill=\"" << color
       << "\"/>\n";
  return os.str();
}

Series top_down(const std::vector<SE3Pose>& poses) {
  Series s;
  for (const auto& p : poses) s.emplace_back(p.translation.x(), p.translation.z());
  return s;
}

Series altitude(const std::vector<SE3Pose>& poses) {
  const auto d = cumulative_distance(poses);
  Series s;
  for (std::size_t k = 0; k < poses.size(); ++k) s.emplace_back(d[k], -poses[k].translation.y());
  return s;
}

std::string axis_labels(const Panel& p, const char* title, const char* xl, const char* yl) {
  std::ostringstream os;
  os.precision(4);
  os << "<rect x=\"" << p.left << "\" y=\"" << p.top << "\" width=\"" << p.width << "\" height=\"" << p.height
     << "\" fill=\"none\" stroke=\"#999\"/>\n";
  os << "<text x=\"" << p.left + p.width / 2 << "\" y=\"" << p.top - 12 << "\" text-anchor=\"middle\">" << title
     << "</text>\n";
  os << "<text x=\"" << p.left + p.width / 2 << "\" y=\"" << p.top + p.height + 30
     << "\" text-anchor=\"middle\" font-size=\"12\">" << xl << " [" << p.b.x0 << ", " << p.b.x1 << "] m</text>\n";
  os << "<text x=\"" << p.left - 30 << "\" y=\"" << p.top + p.height / 2 << "\" font-size=\"12\" transform=\"rotate(-90 "
     << p.left - 30 << ' ' << p.top + p.height / 2 << ")\" text-anchor=\"middle\">" << yl << " [" << p.b.y0 << ", "
     << p.b.y1 << "] m</text>\n";
  return os.str();
}

}  // namespace

TrajectoryFiles export_trajectory(const std::vector<SE3Pose>& poses, const std::filesystem::path& stem,
                                  const std::vector<SE3Pose>* reference) {
  if (poses.empty()) throw std::invalid_argument("export_trajectory: empty trajectory");
  TrajectoryFiles files{stem, stem};
  files.csv += ".csv";
  files.svg += ".svg";

  {
    std::ofstream csv(files.csv, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + files.csv.string());
    csv.precision(17);
    csv << "frame,x,y,z\n";
    for (std::size_t k = 0; k < poses.size(); ++k) {
      const Vec3& t = poses[k].translation;
      csv << k << ',' << t.x() << ',' << t.y() << ',' << t.z() << '\n';
    }
    if (!csv) throw std::runtime_error("failed writing " + files.csv.string());
  }

  const Series est_top = top_down(poses), est_alt = altitude(poses);
  Series ref_top, ref_alt;
  if (reference && !reference->empty()) {
    ref_top = top_down(*reference);
    ref_alt = altitude(*reference);
  }
  Panel top{70, 50, 500, 500, {}, true};
  Panel alt{670, 50, 500, 500, {}, false};
  for (const Series* s : std::initializer_list<const Series*>{&est_top, &ref_top})
    for (const auto& [x, y] : *s) top.b.add(x, y);
  for (const Series* s : std::initializer_list<const Series*>{&est_alt, &ref_alt})
    for (const auto& [x, y] : *s) alt.b.add(x, y);
  top.fit();
  alt.fit();

  std::ofstream svg(files.svg, std::ios::trunc);
  if (!svg) throw std::runtime_error("cannot write " + files.svg.string());
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1220\" height=\"620\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << axis_labels(top, "Top view", "x", "z");
  svg << axis_labels(alt, "Altitude", "distance", "altitude");
  if (!ref_top.empty()) svg << polyline(top, ref_top, "#888888") << polyline(alt, ref_alt, "#888888");
  svg << polyline(top, est_top, "#d62728") << polyline(alt, est_alt, "#d62728");
  svg << "<text x=\"70\" y=\"605\" font-size=\"12\">markers every " << kPlotMarkerEvery << " frames"
      << (ref_top.empty() ? "" : "; grey: reference, red: estimate") << "</text>\n";
  svg << "</svg>\n";
  if (!svg) throw std::runtime_error("failed writing " + files.svg.string());
  return files;
}

std::vector<Vec3> read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "frame,x,y,z")
    throw std::runtime_error(path.string() + ": missing header 'frame,x,y,z'");
  std::vector<Vec3> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field[4];
    for (auto& f : field)
      if (!std::getline(ls, f, ','))
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      out.emplace_back(std::stod(field[1]), std::stod(field[2]), std::stod(field[3]));
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

}  // namespace vift
