#include "vift/rpmg.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

namespace vift {

void RpmgParams::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("rpmg: tau must be positive");
  if (!(lambda >= 0.0)) throw std::invalid_argument("rpmg: lambda must be non-negative");
}

Mat3 riemannian_grad(const RotationMatrix& R, const Mat3& g) {
  const Mat3 RtG = R.transpose() * g;
  return 0.5 * (RtG - RtG.transpose());
}

RotationMatrix goal_rotation(const RotationMatrix& R, const Mat3& A, const RpmgParams& params) {
  if ((A + A.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw std::invalid_argument("goal_rotation: tangent matrix is not skew-symmetric");
  }
  return R * so3_exp(-params.tau * vee(A));
}

Mat3 fiber_nearest(const Mat3& x, const RotationMatrix& R_g) {
  const Mat3 m = R_g.transpose() * x;
  const Mat3 sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(sym);
  const Vec3 clamped = eig.eigenvalues().cwiseMax(0.0);
  const Mat3 psd = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
  return R_g * psd;
}

namespace {

Mat3 deadbanded_difference(const RotationMatrix& R, const RotationMatrix& R_gt) {
  Mat3 d = R - R_gt;
  for (int i = 0; i < 9; ++i)
    if (std::abs(d(i)) <= kRotationDeadband) d(i) = 0.0;
  return d;
}

}  // namespace

double rotation_loss(const RotationMatrix& R, const RotationMatrix& R_gt, Norm norm) {
  const Mat3 d = deadbanded_difference(R, R_gt);
  return (norm == Norm::kL1 ? d.cwiseAbs().sum() : d.squaredNorm()) / 9.0;
}

Mat3 rotation_loss_grad(const RotationMatrix& R, const RotationMatrix& R_gt, Norm norm) {
  const Mat3 d = deadbanded_difference(R, R_gt);
  if (norm == Norm::kL2) return (2.0 / 9.0) * d;
  return d.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }) / 9.0;
}

Mat3 rpmg_grad(const Mat3& x, const RotationMatrix& R_gt, const RpmgParams& params, Norm norm) {
  const RotationMatrix R = svd_orthogonalize(x);
  const Mat3 g = rotation_loss_grad(R, R_gt, norm);
  const Mat3 A = riemannian_grad(R, g);
  const RotationMatrix R_g = goal_rotation(R, A, params);
  // With a zero step the goal is R itself and x lies on its own fiber
  // (Rᵀx is symmetric PSD when det x > 0), so x_g = x exactly.
  const bool same_goal = (R_g.array() == R.array()).all() && x.determinant() > 0.0;
  const Mat3 x_g = same_goal ? x : fiber_nearest(x, R_g);
  return (x - x_g) + params.lambda * (x - R_g);
}

Vec3 chain_through_euler(const EulerAngles& e, const Mat3& grad_x) {
  Eigen::Matrix<double, 9, 1> g;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) g(3 * r + c) = grad_x(r, c);
  return euler_jacobian(e).transpose() * g;
}

Vec3 chain_through_axis_angle(const TangentVector3& v, const Mat3& grad_x) {
  Eigen::Matrix<double, 9, 1> g;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) g(3 * r + c) = grad_x(r, c);
  return so3_exp_jacobian(v).transpose() * g;
}

}  // namespace vift
