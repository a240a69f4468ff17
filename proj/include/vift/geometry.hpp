#pragma once

// SO(3) / SE(3) kernel used throughout the pipeline. Everything is double
// precision and free of hidden state.

#include <Eigen/Core>
#include <vector>

namespace vift {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Mat4 = Eigen::Matrix4d;

/// A 3x3 matrix that is expected to satisfy RᵀR = I and det R = +1.
using RotationMatrix = Mat3;

/// Axis-angle vector; the rotation angle is its norm.
using TangentVector3 = Vec3;

/// Extrinsic X-Y-Z angles: R = Rz(yaw) * Ry(pitch) * Rx(roll).
struct EulerAngles {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;

  Vec3 as_vector() const { return {roll, pitch, yaw}; }
  static EulerAngles from_vector(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
};

struct SE3Pose {
  RotationMatrix rotation = RotationMatrix::Identity();
  Vec3 translation = Vec3::Zero();

  static SE3Pose identity() { return {}; }
  Mat4 homogeneous() const;
  static SE3Pose from_homogeneous(const Mat4& m);
};

// Tolerance used by the rotation validity checks.
inline constexpr double kRotationTolerance = 1e-9;

/// Skew-symmetric matrix [v]_x such that [v]_x w = v x w.
Mat3 hat(const Vec3& v);
/// Inverse of hat(); reads the skew part (A21, A02, A10).
Vec3 vee(const Mat3& A);

bool is_rotation(const Mat3& R, double tol = kRotationTolerance);

/// Rodrigues formula; total.
RotationMatrix so3_exp(const TangentVector3& v);

/// Principal logarithm with ||result|| <= pi. Angles close to pi take the
/// axis from the dominant column of (R + I) / 2.
TangentVector3 so3_log(const RotationMatrix& R);

/// Analytic derivative of so3_exp: column k of the result is vec(dR/dv_k)
/// with row-major vec ordering.
Eigen::Matrix<double, 9, 3> so3_exp_jacobian(const TangentVector3& v);

RotationMatrix euler_to_matrix(const EulerAngles& e);

/// Inverse of euler_to_matrix with pitch in [-pi/2, pi/2]. At gimbal lock
/// (|pitch| within 1e-6 of pi/2) yaw is fixed to 0 and the remaining freedom
/// is put into roll; use euler_is_degenerate() to detect that case.
EulerAngles matrix_to_euler(const RotationMatrix& R);
bool euler_is_degenerate(const RotationMatrix& R);

/// 9x3 analytic Jacobian of euler_to_matrix, row-major vec of R versus
/// (roll, pitch, yaw).
Eigen::Matrix<double, 9, 3> euler_jacobian(const EulerAngles& e);

/// Nearest proper rotation in Frobenius norm: U diag(1, 1, det(UVᵀ)) Vᵀ.
/// Throws std::domain_error("degenerate projection") if two or more singular
/// values are below 1e-12. Inputs that are already rotations to rounding
/// precision are returned unchanged.
RotationMatrix svd_orthogonalize(const Mat3& M);

/// arccos((tr(R1ᵀR2) - 1) / 2) clamped to [0, pi].
double geodesic_angle(const RotationMatrix& R1, const RotationMatrix& R2);

SE3Pose se3_compose(const SE3Pose& a, const SE3Pose& b);
SE3Pose se3_inverse(const SE3Pose& a);
/// inverse(abs_prev) * abs_curr.
SE3Pose relative_pose(const SE3Pose& abs_prev, const SE3Pose& abs_curr);

/// output[k] = origin * rel[0] * ... * rel[k].
std::vector<SE3Pose> accumulate(const std::vector<SE3Pose>& rel, const SE3Pose& origin);

}  // namespace vift
