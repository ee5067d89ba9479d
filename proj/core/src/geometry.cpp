#include "dvio/geometry.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "dvio/error.hpp"

namespace dvio {

PoseSE3::PoseSE3(const Quat& rotation, const Vec3& translation)
    : q_(rotation.normalized()), t_(translation) {}

PoseSE3::PoseSE3(const Mat3& rotation, const Vec3& translation)
    : q_(Quat(rotation).normalized()), t_(translation) {}

PoseSE3 PoseSE3::from_matrix(const Mat4& m) {
  return PoseSE3(Mat3(m.topLeftCorner<3, 3>()), Vec3(m.topRightCorner<3, 1>()));
}

Mat4 PoseSE3::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = t_;
  return m;
}

PoseSE3 PoseSE3::inverse() const {
  const Quat qi = q_.conjugate();
  return PoseSE3(qi, -(qi * t_));
}

PoseSE3 PoseSE3::operator*(const PoseSE3& other) const {
  // The constructor renormalizes, so long composition chains stay on the manifold.
  return PoseSE3(q_ * other.q_, q_ * other.t_ + t_);
}

void PinholeCamera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::ConfigInvalid, "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::ConfigInvalid, "image size must be positive");
  if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height))
    throw Error(ErrorCode::ConfigInvalid, "principal point outside image");
}

Vec2 PinholeCamera::project(const Vec3& p) const {
  if (!(p.z() > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "projection of point with z <= 0");
  return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
}

Vec3 PinholeCamera::unproject(const Vec2& uv, double depth) const {
  if (!(depth > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "unprojection with depth <= 0");
  return normalized(uv) * depth;
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Quat so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    // Second order is exact enough here; renormalize to stay unit.
    Quat q(1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z());
    return q.normalized();
  }
  return Quat(Eigen::AngleAxisd(theta, omega / theta));
}

Vec3 so3_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double vnorm = q.vec().norm();
  if (vnorm < 1e-12) return 2.0 * q.vec();
  const double theta = 2.0 * std::atan2(vnorm, q.w());
  return theta * q.vec() / vnorm;
}

Mat3 so3_right_jacobian(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  if (theta < 1e-8) return Mat3::Identity() - 0.5 * w;
  const double t2 = theta * theta;
  return Mat3::Identity() - (1.0 - std::cos(theta)) / t2 * w + (theta - std::sin(theta)) / (t2 * theta) * w * w;
}

Eigen::Matrix4d quat_left(const Quat& q) {
  Eigen::Matrix4d m;
  m(0, 0) = q.w();
  m.block<1, 3>(0, 1) = -q.vec().transpose();
  m.block<3, 1>(1, 0) = q.vec();
  m.block<3, 3>(1, 1) = q.w() * Mat3::Identity() + skew(q.vec());
  return m;
}

Eigen::Matrix4d quat_right(const Quat& q) {
  Eigen::Matrix4d m;
  m(0, 0) = q.w();
  m.block<1, 3>(0, 1) = -q.vec().transpose();
  m.block<3, 1>(1, 0) = q.vec();
  m.block<3, 3>(1, 1) = q.w() * Mat3::Identity() - skew(q.vec());
  return m;
}

double rotation_angle(const Quat& q) { return so3_log(q).norm(); }

Similarity align_umeyama(std::span<const Vec3> estimated, std::span<const Vec3> reference, AlignmentMode mode) {
  if (estimated.size() != reference.size())
    throw Error(ErrorCode::DegenerateGeometry, "trajectory sizes differ");
  const auto n = static_cast<Eigen::Index>(estimated.size());
  if (n < 3) throw Error(ErrorCode::DegenerateGeometry, "need at least 3 associated positions, got " + std::to_string(n));

  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = estimated[static_cast<size_t>(i)];
    dst.col(i) = reference[static_cast<size_t>(i)];
  }

  // Collinear (or coincident) inputs leave a rotation about the line unconstrained.
  auto spread = [](const Eigen::Matrix3Xd& pts) {
    const Eigen::Matrix3Xd centered = pts.colwise() - pts.rowwise().mean();
    Eigen::SelfAdjointEigenSolver<Mat3> es(centered * centered.transpose());
    return es.eigenvalues();  // ascending
  };
  for (const auto* pts : {&src, &dst}) {
    const Vec3 ev = spread(*pts);
    if (!(ev(2) > 1e-18) || ev(1) <= 1e-10 * ev(2))
      throw Error(ErrorCode::DegenerateGeometry, "positions are collinear or coincident");
  }

  const Mat4 t = Eigen::umeyama(src, dst, mode == AlignmentMode::Sim3);
  Similarity out;
  if (mode == AlignmentMode::Sim3) {
    const Mat3 sr = t.topLeftCorner<3, 3>();
    out.scale = std::cbrt(sr.determinant());
    out.transform = PoseSE3(Mat3(sr / out.scale), Vec3(t.topRightCorner<3, 1>()));
  } else {
    out.transform = PoseSE3::from_matrix(t);
  }
  return out;
}

}  // namespace dvio
