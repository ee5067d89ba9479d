#include "dvio/factors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace dvio {

using namespace imu_index;

NavState retract(const NavState& state, const Eigen::VectorXd& delta) {
  NavState out = state;
  const Vec3 dp = delta.segment<3>(kP);
  const Vec3 dth = delta.segment<3>(kR);
  out.pose = PoseSE3((state.pose.rotation() * so3_exp(dth)).normalized(), state.pose.translation() + dp);
  if (delta.size() >= 15) {
    out.velocity += delta.segment<3>(kV);
    out.bias.accel += delta.segment<3>(kBa);
    out.bias.gyro += delta.segment<3>(kBg);
  }
  return out;
}

namespace {

Mat3 bottom_right(const Eigen::Matrix4d& m) { return m.block<3, 3>(1, 1); }

}  // namespace

ImuFactor evaluate_imu_factor(const NavState& si, const NavState& sj, const PreintegratedDelta& delta,
                              const Vec3& gravity) {
  ImuFactor f;
  const double dt = delta.dt_total();
  const Vec3 dba = si.bias.accel - delta.bias_ref().accel;
  const Vec3 dbg = si.bias.gyro - delta.bias_ref().gyro;
  const Mat3 j_r_bg = delta.jacobian_block(kR, kBg);
  const Mat3 j_v_ba = delta.jacobian_block(kV, kBa);
  const Mat3 j_v_bg = delta.jacobian_block(kV, kBg);
  const Mat3 j_p_ba = delta.jacobian_block(kP, kBa);
  const Mat3 j_p_bg = delta.jacobian_block(kP, kBg);

  const Vec3 phi = j_r_bg * dbg;
  const Quat gamma = (delta.delta_rotation() * so3_exp(phi)).normalized();
  const Vec3 beta = delta.delta_velocity() + j_v_ba * dba + j_v_bg * dbg;
  const Vec3 alpha = delta.delta_position() + j_p_ba * dba + j_p_bg * dbg;

  const Quat& qi = si.pose.rotation();
  const Quat& qj = sj.pose.rotation();
  const Mat3 ri_t = qi.toRotationMatrix().transpose();
  const Vec3& pi = si.pose.translation();
  const Vec3& pj = sj.pose.translation();

  const Vec3 dp_world = pj - pi - si.velocity * dt - 0.5 * gravity * dt * dt;
  const Vec3 dv_world = sj.velocity - si.velocity - gravity * dt;
  const Quat err_q = gamma.inverse() * qi.inverse() * qj;

  f.residual.segment<3>(kP) = ri_t * dp_world - alpha;
  f.residual.segment<3>(kR) = 2.0 * err_q.vec();
  f.residual.segment<3>(kV) = ri_t * dv_world - beta;
  f.residual.segment<3>(kBa) = sj.bias.accel - si.bias.accel;
  f.residual.segment<3>(kBg) = sj.bias.gyro - si.bias.gyro;

  const Mat3 I = Mat3::Identity();
  auto& Ji = f.jacobian_i;
  Ji.block<3, 3>(kP, kP) = -ri_t;
  Ji.block<3, 3>(kP, kR) = skew(ri_t * dp_world);
  Ji.block<3, 3>(kP, kV) = -ri_t * dt;
  Ji.block<3, 3>(kP, kBa) = -j_p_ba;
  Ji.block<3, 3>(kP, kBg) = -j_p_bg;

  Ji.block<3, 3>(kR, kR) = -bottom_right(quat_left(gamma.inverse()) * quat_right(qi.inverse() * qj));
  Ji.block<3, 3>(kR, kBg) = -bottom_right(quat_right(err_q)) * so3_right_jacobian(phi) * j_r_bg;

  Ji.block<3, 3>(kV, kR) = skew(ri_t * dv_world);
  Ji.block<3, 3>(kV, kV) = -ri_t;
  Ji.block<3, 3>(kV, kBa) = -j_v_ba;
  Ji.block<3, 3>(kV, kBg) = -j_v_bg;

  Ji.block<3, 3>(kBa, kBa) = -I;
  Ji.block<3, 3>(kBg, kBg) = -I;

  auto& Jj = f.jacobian_j;
  Jj.block<3, 3>(kP, kP) = ri_t;
  Jj.block<3, 3>(kR, kR) = bottom_right(quat_left(err_q));
  Jj.block<3, 3>(kV, kV) = ri_t;
  Jj.block<3, 3>(kBa, kBa) = I;
  Jj.block<3, 3>(kBg, kBg) = I;
  return f;
}

Mat15x15 imu_sqrt_information(const PreintegratedDelta& delta) {
  Mat15 cov = delta.covariance();
  Mat15 info = cov.inverse();
  info = 0.5 * (info + info.transpose());
  Eigen::LLT<Mat15> llt(info);
  if (llt.info() != Eigen::Success) {
    cov += Mat15::Identity() * 1e-12;
    info = cov.inverse();
    info = 0.5 * (info + info.transpose());
    llt.compute(info);
  }
  return llt.matrixU();
}

ReprojectionFactor evaluate_reprojection(const PoseSE3& host_world_from_body, const PoseSE3& target_world_from_body,
                                         const PoseSE3& body_from_camera, const PinholeCamera& cam,
                                         const Vec3& host_bearing, double inverse_depth, const Vec2& observed) {
  ReprojectionFactor f;
  const Mat3 r_bc = body_from_camera.rotation_matrix();
  const Vec3& t_bc = body_from_camera.translation();
  const Mat3 r_i = host_world_from_body.rotation_matrix();
  const Mat3 r_j = target_world_from_body.rotation_matrix();
  const Vec3& p_i = host_world_from_body.translation();
  const Vec3& p_j = target_world_from_body.translation();

  const Vec3 pt_ci = host_bearing / inverse_depth;
  const Vec3 pt_bi = r_bc * pt_ci + t_bc;
  const Vec3 pt_w = r_i * pt_bi + p_i;
  const Vec3 pt_bj = r_j.transpose() * (pt_w - p_j);
  const Vec3 pt_cj = r_bc.transpose() * (pt_bj - t_bc);
  f.point_target = pt_cj;

  const double z = pt_cj.z();
  if (!(z > 1e-6)) return f;
  f.valid = true;
  f.residual = Vec2(cam.fx * pt_cj.x() / z + cam.cx, cam.fy * pt_cj.y() / z + cam.cy) - observed;

  Eigen::Matrix<double, 2, 3> d_proj;
  d_proj << cam.fx / z, 0.0, -cam.fx * pt_cj.x() / (z * z), 0.0, cam.fy / z, -cam.fy * pt_cj.y() / (z * z);

  const Mat3 r_cb_r_jt = r_bc.transpose() * r_j.transpose();
  Mat3x6 d_host;
  d_host.leftCols<3>() = r_cb_r_jt;
  d_host.rightCols<3>() = -r_cb_r_jt * r_i * skew(pt_bi);
  Mat3x6 d_target;
  d_target.leftCols<3>() = -r_cb_r_jt;
  d_target.rightCols<3>() = r_bc.transpose() * skew(pt_bj);
  const Vec3 d_lambda = r_cb_r_jt * r_i * r_bc * host_bearing * (-1.0 / (inverse_depth * inverse_depth));

  f.jacobian_host = d_proj * d_host;
  f.jacobian_target = d_proj * d_target;
  f.jacobian_inverse_depth = d_proj * d_lambda;
  f.depth_jacobian_host = d_host.row(2);
  f.depth_jacobian_target = d_target.row(2);
  f.depth_jacobian_inverse_depth = d_lambda.z();
  return f;
}

}  // namespace dvio
