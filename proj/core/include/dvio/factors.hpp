#pragma once

#include <Eigen/Core>

#include "dvio/geometry.hpp"
#include "dvio/imu.hpp"

namespace dvio {

using Mat15x15 = Eigen::Matrix<double, 15, 15>;
using Mat2x6 = Eigen::Matrix<double, 2, 6>;
using Mat3x6 = Eigen::Matrix<double, 3, 6>;

/// Applies an error-state increment ordered [p, theta, v, ba, bg] (first 6 entries only
/// when `delta.size() == 6`). Rotation is perturbed on the right.
NavState retract(const NavState& state, const Eigen::VectorXd& delta);

/// IMU residual between two states, ordered like the preintegration covariance.
/// Jacobians are with respect to the error state [p, theta, v, ba, bg] of each end.
struct ImuFactor {
  Vec15 residual = Vec15::Zero();
  Mat15x15 jacobian_i = Mat15x15::Zero();
  Mat15x15 jacobian_j = Mat15x15::Zero();
};

ImuFactor evaluate_imu_factor(const NavState& si, const NavState& sj, const PreintegratedDelta& delta,
                              const Vec3& gravity = gravity_vector());

/// Upper-triangular square root of the inverse covariance.
Mat15x15 imu_sqrt_information(const PreintegratedDelta& delta);

/// Transfer of a feature anchored in a host camera by inverse depth into a target camera.
/// Jacobians are with respect to [p, theta] of the host and target body poses and the inverse depth.
struct ReprojectionFactor {
  Vec2 residual = Vec2::Zero();  // projected - observed, pixels
  Vec3 point_target = Vec3::Zero();  // feature in the target camera frame
  Mat2x6 jacobian_host = Mat2x6::Zero();
  Mat2x6 jacobian_target = Mat2x6::Zero();
  Vec2 jacobian_inverse_depth = Vec2::Zero();
  /// Derivatives of point_target.z(), used by the depth residual.
  Eigen::Matrix<double, 1, 6> depth_jacobian_host = Eigen::Matrix<double, 1, 6>::Zero();
  Eigen::Matrix<double, 1, 6> depth_jacobian_target = Eigen::Matrix<double, 1, 6>::Zero();
  double depth_jacobian_inverse_depth = 0.0;
  bool valid = false;  // false when the point is behind the target camera
};

/// `host_bearing` is the host observation with z = 1.
ReprojectionFactor evaluate_reprojection(const PoseSE3& host_world_from_body, const PoseSE3& target_world_from_body,
                                         const PoseSE3& body_from_camera, const PinholeCamera& cam,
                                         const Vec3& host_bearing, double inverse_depth, const Vec2& observed);

}  // namespace dvio
