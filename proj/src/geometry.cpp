#include "vift/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vift {

namespace {

constexpr double kPi = std::numbers::pi;

// Below this angle so3_exp and its Jacobian switch to Taylor expansions.
constexpr double kSmallAngle = 1e-8;

// Above this angle so3_log takes the axis from the symmetric part.
constexpr double kNearPi = kPi - 1e-2;

// Singular values below this count as zero for the projection.
constexpr double kSingularFloor = 1e-12;

}  // namespace

Mat4 SE3Pose::homogeneous() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

SE3Pose SE3Pose::from_homogeneous(const Mat4& m) {
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& A) { return {A(2, 1), A(0, 2), A(1, 0)}; }

bool is_rotation(const Mat3& R, double tol) {
  if (!R.allFinite()) return false;
  const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(R.determinant() - 1.0) < tol;
}

RotationMatrix so3_exp(const TangentVector3& v) {
  const double theta = v.norm();
  const Mat3 K = hat(v);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + K + 0.5 * K * K;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * K + b * K * K;
}

TangentVector3 so3_log(const RotationMatrix& R) {
  const Vec3 axis_sin = 0.5 * vee(R - R.transpose());  // sin(theta) * n
  const double cos_theta = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double sin_theta = axis_sin.norm();
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < kSmallAngle) {
    return axis_sin;
  }
  if (theta < kNearPi) {
    return (theta / sin_theta) * axis_sin;
  }

  // Near pi: (R + Rᵀ)/2 = cos(theta) I + (1 - cos(theta)) n nᵀ.
  const Mat3 nnT = (0.5 * (R + R.transpose()) - cos_theta * Mat3::Identity()) / (1.0 - cos_theta);
  Eigen::Index col = 0;
  nnT.diagonal().maxCoeff(&col);
  Vec3 n = nnT.col(col) / std::sqrt(std::max(nnT(col, col), 0.0));
  n.normalize();
  if (n.dot(axis_sin) < 0.0) n = -n;
  return theta * n;
}

Eigen::Matrix<double, 9, 3> so3_exp_jacobian(const TangentVector3& v) {
  Eigen::Matrix<double, 9, 3> J;
  const double theta2 = v.squaredNorm();
  const Mat3 V = hat(v);
  const Mat3 R = so3_exp(v);
  for (int k = 0; k < 3; ++k) {
    const Vec3 e = Vec3::Unit(k);
    Mat3 dR;
    if (std::sqrt(theta2) < 1e-6) {
      const Mat3 E = hat(e);
      dR = E + 0.5 * (E * V + V * E);
    } else {
      const Vec3 w = v.cross((Mat3::Identity() - R) * e);
      dR = ((v(k) * V + hat(w)) / theta2) * R;
    }
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) J(3 * r + c, k) = dR(r, c);
  }
  return J;
}

namespace {

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}
Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}
Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

constexpr double kGimbalTolerance = 1e-6;

}  // namespace

RotationMatrix euler_to_matrix(const EulerAngles& e) {
  return rot_z(e.yaw) * rot_y(e.pitch) * rot_x(e.roll);
}

bool euler_is_degenerate(const RotationMatrix& R) {
  const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
  return std::abs(std::abs(pitch) - kPi / 2) < kGimbalTolerance;
}

EulerAngles matrix_to_euler(const RotationMatrix& R) {
  EulerAngles e;
  // cos(pitch) from the two entries that are not near +-1 keeps precision
  // close to gimbal lock better than asin alone.
  const double cp = std::hypot(R(0, 0), R(1, 0));
  e.pitch = std::atan2(-R(2, 0), cp);
  if (euler_is_degenerate(R)) {
    e.yaw = 0.0;
    if (e.pitch > 0.0) {
      e.roll = std::atan2(R(0, 1), R(0, 2));
    } else {
      e.roll = std::atan2(-R(0, 1), -R(0, 2));
    }
    return e;
  }
  e.roll = std::atan2(R(2, 1), R(2, 2));
  e.yaw = std::atan2(R(1, 0), R(0, 0));
  return e;
}

Eigen::Matrix<double, 9, 3> euler_jacobian(const EulerAngles& e) {
  const Mat3 Rx = rot_x(e.roll), Ry = rot_y(e.pitch), Rz = rot_z(e.yaw);
  const Mat3 d_roll = Rz * Ry * Rx * hat(Vec3::UnitX());
  const Mat3 d_pitch = Rz * Ry * hat(Vec3::UnitY()) * Rx;
  const Mat3 d_yaw = hat(Vec3::UnitZ()) * Rz * Ry * Rx;
  Eigen::Matrix<double, 9, 3> J;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      J(3 * r + c, 0) = d_roll(r, c);
      J(3 * r + c, 1) = d_pitch(r, c);
      J(3 * r + c, 2) = d_yaw(r, c);
    }
  }
  return J;
}

RotationMatrix svd_orthogonalize(const Mat3& M) {
  if (!M.allFinite()) throw std::domain_error("degenerate projection: non-finite input");
  if (is_rotation(M, 1e-14)) return M;

  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();  // descending
  if (s(1) < kSingularFloor) throw std::domain_error("degenerate projection");

  const Mat3& U = svd.matrixU();
  const Mat3& V = svd.matrixV();
  const double d = (U * V.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return U * Vec3(1.0, 1.0, d).asDiagonal() * V.transpose();
}

double geodesic_angle(const RotationMatrix& R1, const RotationMatrix& R2) {
  // atan2 keeps full precision near 0 and pi, where acos of the trace does not.
  const Mat3 M = R1.transpose() * R2;
  const double s = 0.5 * Vec3(M(2, 1) - M(1, 2), M(0, 2) - M(2, 0), M(1, 0) - M(0, 1)).norm();
  const double c = 0.5 * (M.trace() - 1.0);
  return std::atan2(s, c);
}

SE3Pose se3_compose(const SE3Pose& a, const SE3Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

SE3Pose se3_inverse(const SE3Pose& a) {
  const Mat3 Rt = a.rotation.transpose();
  return {Rt, -(Rt * a.translation)};
}

SE3Pose relative_pose(const SE3Pose& abs_prev, const SE3Pose& abs_curr) {
  return se3_compose(se3_inverse(abs_prev), abs_curr);
}

std::vector<SE3Pose> accumulate(const std::vector<SE3Pose>& rel, const SE3Pose& origin) {
  std::vector<SE3Pose> out;
  out.reserve(rel.size());
  SE3Pose current = origin;
  for (const auto& step : rel) {
    current = se3_compose(current, step);
    out.push_back(current);
  }
  return out;
}

}  // namespace vift
