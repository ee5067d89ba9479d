#include "dvio/imu.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dvio/error.hpp"

namespace dvio {

using namespace imu_index;

PreintegratedDelta::PreintegratedDelta(const ImuBias& bias_ref, const ImuNoise& noise)
    : bias_ref_(bias_ref), noise_(noise) {}

PreintegratedDelta PreintegratedDelta::from_samples(std::span<const ImuSample> samples, const ImuBias& bias_ref,
                                                    const ImuNoise& noise, double max_gap) {
  PreintegratedDelta d(bias_ref, noise);
  for (size_t i = 1; i < samples.size(); ++i) d.integrate(samples[i - 1], samples[i], max_gap);
  if (samples.size() == 1) d.samples_.push_back(samples.front());
  return d;
}

void PreintegratedDelta::append(std::span<const ImuSample> samples, double max_gap) {
  for (const auto& s : samples) {
    if (samples_.empty()) {
      samples_.push_back(s);
      continue;
    }
    if (s.timestamp == samples_.back().timestamp) continue;  // shared junction sample
    integrate(samples_.back(), s, max_gap);
  }
}

void PreintegratedDelta::integrate(const ImuSample& prev, const ImuSample& next, double max_gap) {
  const double dt = next.timestamp - prev.timestamp;
  if (!(dt > 0.0)) {
    std::ostringstream os;
    os << "sample at t=" << next.timestamp << " does not follow t=" << prev.timestamp;
    throw Error(ErrorCode::NonMonotonicTimestamp, os.str());
  }
  if (dt > max_gap) {
    std::ostringstream os;
    os << "gap of " << dt << " s exceeds " << max_gap << " s";
    throw Error(ErrorCode::ExcessiveGap, os.str());
  }

  const Vec3& ba = bias_ref_.accel;
  const Vec3& bg = bias_ref_.gyro;

  const Vec3 w = 0.5 * (prev.gyro + next.gyro) - bg;
  const Vec3 a0 = prev.accel - ba;
  const Vec3 a1 = next.accel - ba;
  const Vec3 phi = w * dt;

  const Mat3 r0 = delta_q_.toRotationMatrix();
  const Quat step = so3_exp(phi);
  const Quat q1 = (delta_q_ * step).normalized();
  const Mat3 r1 = q1.toRotationMatrix();

  const Vec3 acc_mid = 0.5 * (r0 * a0 + r1 * a1);
  const Vec3 p1 = delta_p_ + delta_v_ * dt + 0.5 * acc_mid * dt * dt;
  const Vec3 v1 = delta_v_ + acc_mid * dt;

  // Linearization of the discrete step itself, so bias Jacobians are exact derivatives.
  const Mat3 step_t = step.toRotationMatrix().transpose();
  const Mat3 jr = so3_right_jacobian(phi);
  const Mat3 a0x = skew(a0);
  const Mat3 a1x = skew(a1);
  const Mat3 I = Mat3::Identity();
  const double dt2 = dt * dt;

  Mat15 F = Mat15::Zero();
  F.block<3, 3>(kP, kP) = I;
  F.block<3, 3>(kP, kR) = -0.25 * r0 * a0x * dt2 - 0.25 * r1 * a1x * step_t * dt2;
  F.block<3, 3>(kP, kV) = I * dt;
  F.block<3, 3>(kP, kBa) = -0.25 * (r0 + r1) * dt2;
  F.block<3, 3>(kP, kBg) = 0.25 * r1 * a1x * jr * dt * dt2;
  F.block<3, 3>(kR, kR) = step_t;
  F.block<3, 3>(kR, kBg) = -jr * dt;
  F.block<3, 3>(kV, kR) = -0.5 * r0 * a0x * dt - 0.5 * r1 * a1x * step_t * dt;
  F.block<3, 3>(kV, kV) = I;
  F.block<3, 3>(kV, kBa) = -0.5 * (r0 + r1) * dt;
  F.block<3, 3>(kV, kBg) = 0.5 * r1 * a1x * jr * dt2;
  F.block<3, 3>(kBa, kBa) = I;
  F.block<3, 3>(kBg, kBg) = I;

  // Noise inputs: accel0, gyro0, accel1, gyro1, accel walk, gyro walk.
  Eigen::Matrix<double, 15, 18> V = Eigen::Matrix<double, 15, 18>::Zero();
  V.block<3, 3>(kP, 0) = 0.25 * r0 * dt2;
  V.block<3, 3>(kP, 3) = -0.125 * r1 * a1x * dt2 * dt;
  V.block<3, 3>(kP, 6) = 0.25 * r1 * dt2;
  V.block<3, 3>(kP, 9) = V.block<3, 3>(kP, 3);
  V.block<3, 3>(kR, 3) = 0.5 * I * dt;
  V.block<3, 3>(kR, 9) = 0.5 * I * dt;
  V.block<3, 3>(kV, 0) = 0.5 * r0 * dt;
  V.block<3, 3>(kV, 3) = -0.25 * r1 * a1x * dt2;
  V.block<3, 3>(kV, 6) = 0.5 * r1 * dt;
  V.block<3, 3>(kV, 9) = V.block<3, 3>(kV, 3);
  V.block<3, 3>(kBa, 12) = I * dt;
  V.block<3, 3>(kBg, 15) = I * dt;

  // Discrete variances from densities: sigma_d^2 = sigma_c^2 / dt.
  Eigen::Matrix<double, 18, 1> n;
  const double an = noise_.accel_noise * noise_.accel_noise / dt;
  const double gn = noise_.gyro_noise * noise_.gyro_noise / dt;
  const double aw = noise_.accel_walk * noise_.accel_walk / dt;
  const double gw = noise_.gyro_walk * noise_.gyro_walk / dt;
  n << Vec3::Constant(an), Vec3::Constant(gn), Vec3::Constant(an), Vec3::Constant(gn), Vec3::Constant(aw),
      Vec3::Constant(gw);

  jacobian_ = F * jacobian_;
  covariance_ = F * covariance_ * F.transpose() + V * n.asDiagonal() * V.transpose();
  covariance_ = 0.5 * (covariance_ + covariance_.transpose());

  delta_q_ = q1;
  delta_v_ = v1;
  delta_p_ = p1;
  dt_total_ += dt;

  if (samples_.empty() || samples_.back().timestamp != prev.timestamp) samples_.push_back(prev);
  samples_.push_back(next);
}

PreintegratedDelta::Corrected PreintegratedDelta::corrected(const ImuBias& bias) const {
  const Vec3 dba = bias.accel - bias_ref_.accel;
  const Vec3 dbg = bias.gyro - bias_ref_.gyro;
  Corrected c;
  c.rotation = (delta_q_ * so3_exp(jacobian_block(kR, kBg) * dbg)).normalized();
  c.velocity = delta_v_ + jacobian_block(kV, kBa) * dba + jacobian_block(kV, kBg) * dbg;
  c.position = delta_p_ + jacobian_block(kP, kBa) * dba + jacobian_block(kP, kBg) * dbg;
  return c;
}

PreintegratedDelta PreintegratedDelta::reintegrated(const ImuBias& bias) const {
  PreintegratedDelta d(bias, noise_);
  for (size_t i = 1; i < samples_.size(); ++i) d.integrate(samples_[i - 1], samples_[i], 1e300);
  if (samples_.size() == 1) d.samples_ = samples_;
  return d;
}

PreintegratedDelta integrate(PreintegratedDelta delta, const ImuSample& prev, const ImuSample& next, double max_gap) {
  delta.integrate(prev, next, max_gap);
  return delta;
}

PreintegratedDelta repropagate(const PreintegratedDelta& delta, const ImuBias& new_bias) {
  PreintegratedDelta out = delta;
  const auto c = delta.corrected(new_bias);
  out.delta_q_ = c.rotation;
  out.delta_v_ = c.velocity;
  out.delta_p_ = c.position;
  out.bias_ref_ = new_bias;
  return out;
}

PreintegratedDelta compose(const PreintegratedDelta& first, const PreintegratedDelta& second) {
  PreintegratedDelta out = first;
  const Mat3 r1 = first.delta_q_.toRotationMatrix();
  out.delta_p_ = first.delta_p_ + first.delta_v_ * second.dt_total_ + r1 * second.delta_p_;
  out.delta_v_ = first.delta_v_ + r1 * second.delta_v_;
  out.delta_q_ = (first.delta_q_ * second.delta_q_).normalized();
  out.dt_total_ = first.dt_total_ + second.dt_total_;
  for (const auto& s : second.samples_) {
    if (!out.samples_.empty() && out.samples_.back().timestamp == s.timestamp) continue;
    out.samples_.push_back(s);
  }
  return out;
}

NavState predict_pose(const NavState& state, const PreintegratedDelta& delta, const Vec3& gravity,
                      double max_bias_offset) {
  const double off = std::max((state.bias.gyro - delta.bias_ref().gyro).norm(),
                              (state.bias.accel - delta.bias_ref().accel).norm());
  if (off > max_bias_offset) {
    std::ostringstream os;
    os << "state bias is " << off << " from the linearization point (bound " << max_bias_offset << ")";
    throw Error(ErrorCode::BiasMismatch, os.str());
  }
  const auto c = delta.corrected(state.bias);
  const double dt = delta.dt_total();
  const Quat& qi = state.pose.rotation();
  NavState out;
  out.bias = state.bias;
  out.velocity = state.velocity + gravity * dt + qi * c.velocity;
  const Vec3 p = state.pose.translation() + state.velocity * dt + 0.5 * gravity * dt * dt + qi * c.position;
  out.pose = PoseSE3(qi * c.rotation, p);
  return out;
}

Quat initial_attitude_from_static(std::span<const ImuSample> samples) {
  Vec3 mean = Vec3::Zero();
  for (const auto& s : samples) mean += s.accel;
  if (samples.empty() || mean.norm() < 1e-9) return Quat::Identity();
  mean /= static_cast<double>(samples.size());
  // At rest the specific force points up in the world frame.
  Quat q = Quat::FromTwoVectors(mean.normalized(), Vec3::UnitZ());
  // Remove the yaw component, which a static accelerometer cannot observe.
  const Mat3 r = q.toRotationMatrix();
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  return (Quat(Eigen::AngleAxisd(-yaw, Vec3::UnitZ())) * q).normalized();
}

namespace {

ImuSample interpolate(const ImuSample& a, const ImuSample& b, double t) {
  const double span = b.timestamp - a.timestamp;
  const double w = span > 0.0 ? (t - a.timestamp) / span : 0.0;
  return {t, (1.0 - w) * a.gyro + w * b.gyro, (1.0 - w) * a.accel + w * b.accel};
}

ImuSample sample_at(std::span<const ImuSample> samples, double t) {
  auto it = std::lower_bound(samples.begin(), samples.end(), t,
                             [](const ImuSample& s, double v) { return s.timestamp < v; });
  if (it == samples.begin()) return {t, it->gyro, it->accel};
  if (it == samples.end()) return {t, samples.back().gyro, samples.back().accel};
  return interpolate(*(it - 1), *it, t);
}

}  // namespace

std::vector<ImuSample> slice_imu(std::span<const ImuSample> samples, double t0, double t1) {
  std::vector<ImuSample> out;
  if (samples.empty() || t1 < t0) return out;
  out.push_back(sample_at(samples, t0));
  for (const auto& s : samples)
    if (s.timestamp > t0 && s.timestamp < t1) out.push_back(s);
  if (t1 > t0) out.push_back(sample_at(samples, t1));
  return out;
}

}  // namespace dvio
