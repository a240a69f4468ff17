#pragma once

// Regularized projective manifold gradient for rotations regressed through
// an ambient 3x3 representation that is mapped to SO(3) by
// svd_orthogonalize. The backward signal for the raw representation x is
//
//   R   = svd_orthogonalize(x)
//   A   = skew(Rᵀ g)                 (g = dL/dR)
//   R_g = R exp(-tau vee(A))          (goal rotation)
//   x_g = nearest point to x on the fiber {R_g S : S symmetric PSD}
//   dx  = (x - x_g) + lambda (x - R_g)

#include "vift/geometry.hpp"

namespace vift {

struct RpmgParams {
  double tau = 0.25;
  double lambda = 0.01;

  void validate() const;
};

enum class Norm { kL1, kL2 };

/// Skew part of Rᵀg: (Rᵀg - gᵀR) / 2.
Mat3 riemannian_grad(const RotationMatrix& R, const Mat3& g);

/// R exp(-tau vee(A)). Throws std::invalid_argument if A is not skew to 1e-10.
RotationMatrix goal_rotation(const RotationMatrix& R, const Mat3& A, const RpmgParams& params);

/// R_g S* where S* is the PSD projection of sym(R_gᵀx).
Mat3 fiber_nearest(const Mat3& x, const RotationMatrix& R_g);

/// Mean elementwise |R - R_gt| (L1) or (R - R_gt)^2 (L2). Differences with
/// magnitude at or below kRotationDeadband count as zero.
double rotation_loss(const RotationMatrix& R, const RotationMatrix& R_gt, Norm norm);
/// Euclidean gradient of rotation_loss with respect to R.
Mat3 rotation_loss_grad(const RotationMatrix& R, const RotationMatrix& R_gt, Norm norm);

inline constexpr double kRotationDeadband = 1e-12;

/// Full RPMG backward signal for one raw 3x3 estimate. Propagates
/// std::domain_error from svd_orthogonalize for rank-deficient x.
Mat3 rpmg_grad(const Mat3& x, const RotationMatrix& R_gt, const RpmgParams& params, Norm norm);

/// Jᵀ vec(grad_x) for the Euler parameterization (row-major vec).
Vec3 chain_through_euler(const EulerAngles& e, const Mat3& grad_x);
/// Same for the axis-angle parameterization x = so3_exp(v).
Vec3 chain_through_axis_angle(const TangentVector3& v, const Mat3& grad_x);

}  // namespace vift
