#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "dvio/geometry.hpp"

namespace dvio {

inline constexpr double kGravityMagnitude = 9.81;

struct ImuSample {
  double timestamp = 0.0;  // s
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // m/s^2, specific force
};

struct ImuBias {
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();

  bool plausible(double max_gyro = 0.5, double max_accel = 2.0) const {
    return gyro.allFinite() && accel.allFinite() && gyro.norm() < max_gyro && accel.norm() < max_accel;
  }
};

/// Continuous-time noise densities.
struct ImuNoise {
  double gyro_noise = 1e-4;   // rad/s/sqrt(Hz)
  double accel_noise = 1e-2;  // m/s^2/sqrt(Hz)
  double gyro_walk = 1e-5;    // rad/s^2/sqrt(Hz)
  double accel_walk = 1e-4;   // m/s^3/sqrt(Hz)
};

using Mat15 = Eigen::Matrix<double, 15, 15>;
using Vec15 = Eigen::Matrix<double, 15, 1>;

/// Error-state layout shared by the preintegration covariance and the IMU residual.
namespace imu_index {
inline constexpr int kP = 0;
inline constexpr int kR = 3;
inline constexpr int kV = 6;
inline constexpr int kBa = 9;
inline constexpr int kBg = 12;
}  // namespace imu_index

/// Relative motion accumulated from IMU samples between two frames, expressed in the
/// body frame of the first one and independent of its absolute state.
class PreintegratedDelta {
 public:
  explicit PreintegratedDelta(const ImuBias& bias_ref = {}, const ImuNoise& noise = {});

  static PreintegratedDelta from_samples(std::span<const ImuSample> samples, const ImuBias& bias_ref = {},
                                         const ImuNoise& noise = {}, double max_gap = 0.1);

  /// Midpoint step from `prev` to `next`. Throws NonMonotonicTimestamp / ExcessiveGap.
  void integrate(const ImuSample& prev, const ImuSample& next, double max_gap = 0.1);
  /// Continue integrating from the last stored sample over `samples`.
  void append(std::span<const ImuSample> samples, double max_gap = 0.1);

  double dt_total() const { return dt_total_; }
  const Quat& delta_rotation() const { return delta_q_; }
  const Vec3& delta_velocity() const { return delta_v_; }
  const Vec3& delta_position() const { return delta_p_; }
  const ImuBias& bias_ref() const { return bias_ref_; }
  const ImuNoise& noise() const { return noise_; }
  const Mat15& covariance() const { return covariance_; }
  const Mat15& jacobian() const { return jacobian_; }
  const std::vector<ImuSample>& samples() const { return samples_; }
  bool empty() const { return samples_.size() < 2; }

  Mat3 jacobian_block(int row, int col) const { return jacobian_.block<3, 3>(row, col); }

  struct Corrected {
    Quat rotation;
    Vec3 velocity;
    Vec3 position;
  };
  /// First-order bias correction of the deltas.
  Corrected corrected(const ImuBias& bias) const;
  /// Full re-integration of the stored samples at a new linearization bias.
  PreintegratedDelta reintegrated(const ImuBias& bias) const;

  friend PreintegratedDelta repropagate(const PreintegratedDelta& delta, const ImuBias& new_bias);
  friend PreintegratedDelta compose(const PreintegratedDelta& first, const PreintegratedDelta& second);

 private:
  double dt_total_ = 0.0;
  Quat delta_q_ = Quat::Identity();
  Vec3 delta_v_ = Vec3::Zero();
  Vec3 delta_p_ = Vec3::Zero();
  ImuBias bias_ref_;
  ImuNoise noise_;
  Mat15 covariance_ = Mat15::Zero();
  Mat15 jacobian_ = Mat15::Identity();
  std::vector<ImuSample> samples_;
};

PreintegratedDelta integrate(PreintegratedDelta delta, const ImuSample& prev, const ImuSample& next,
                             double max_gap = 0.1);

/// First-order correction to `new_bias`; the result is linearized at `new_bias`.
PreintegratedDelta repropagate(const PreintegratedDelta& delta, const ImuBias& new_bias);

/// Motion over [t0, t2] from deltas over [t0, t1] and [t1, t2] sharing one bias.
/// Covariance and Jacobians are not composed; use `append` when they are needed.
PreintegratedDelta compose(const PreintegratedDelta& first, const PreintegratedDelta& second);

struct NavState {
  PoseSE3 pose;  // body to world
  Vec3 velocity = Vec3::Zero();
  ImuBias bias;
};

inline Vec3 gravity_vector() { return {0.0, 0.0, -kGravityMagnitude}; }

/// Propagates `state` across `delta`. Throws BiasMismatch when the state's bias is
/// farther than `max_bias_offset` from the delta's linearization point.
NavState predict_pose(const NavState& state, const PreintegratedDelta& delta, const Vec3& gravity = gravity_vector(),
                      double max_bias_offset = 0.05);

/// Roll/pitch from the mean specific force of a near-static span, yaw = 0.
Quat initial_attitude_from_static(std::span<const ImuSample> samples);

/// Samples covering [t0, t1], with linearly interpolated samples at both ends.
std::vector<ImuSample> slice_imu(std::span<const ImuSample> samples, double t0, double t1);

}  // namespace dvio
