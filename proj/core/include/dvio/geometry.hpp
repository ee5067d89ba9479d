#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace dvio {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

/// Rigid transform x' = R x + t. Rotation kept as a unit quaternion.
class PoseSE3 {
 public:
  PoseSE3() : q_(Quat::Identity()), t_(Vec3::Zero()) {}
  PoseSE3(const Quat& rotation, const Vec3& translation);
  PoseSE3(const Mat3& rotation, const Vec3& translation);

  static PoseSE3 identity() { return {}; }
  static PoseSE3 from_matrix(const Mat4& m);

  const Quat& rotation() const { return q_; }
  const Vec3& translation() const { return t_; }
  Mat3 rotation_matrix() const { return q_.toRotationMatrix(); }
  Mat4 matrix() const;

  PoseSE3 inverse() const;
  PoseSE3 operator*(const PoseSE3& other) const;
  Vec3 operator*(const Vec3& p) const { return q_ * p + t_; }

 private:
  Quat q_;
  Vec3 t_;
};

inline PoseSE3 compose(const PoseSE3& a, const PoseSE3& b) { return a * b; }

/// Pinhole model for pre-rectified images.
struct PinholeCamera {
  double fx = 525.0;
  double fy = 525.0;
  double cx = 319.5;
  double cy = 239.5;
  int width = 640;
  int height = 480;

  /// Throws ConfigInvalid when the intrinsics break fx,fy > 0 or put the principal point outside the image.
  void validate() const;

  Vec2 project(const Vec3& p_cam) const;
  Vec3 unproject(const Vec2& uv, double depth) const;
  /// Bearing with z = 1.
  Vec3 normalized(const Vec2& uv) const { return {(uv.x() - cx) / fx, (uv.y() - cy) / fy, 1.0}; }
  bool in_image(const Vec2& uv, double border = 0.0) const {
    return uv.x() >= border && uv.y() >= border && uv.x() <= width - 1 - border &&
           uv.y() <= height - 1 - border;
  }
};

// SO(3) helpers. Perturbations are applied on the right: R <- R * Exp(dtheta).
Mat3 skew(const Vec3& v);
Quat so3_exp(const Vec3& omega);
Vec3 so3_log(const Quat& q);
Mat3 so3_right_jacobian(const Vec3& omega);
/// Left/right quaternion product matrices on (w, x, y, z) ordering: a*b = left(a) [b] = right(b) [a].
Eigen::Matrix4d quat_left(const Quat& q);
Eigen::Matrix4d quat_right(const Quat& q);
double rotation_angle(const Quat& q);

/// Timestamped body-to-world poses, oldest first.
using StampedPose = std::pair<double, PoseSE3>;
using Trajectory = std::vector<StampedPose>;

enum class AlignmentMode { SE3, Sim3 };

struct Similarity {
  PoseSE3 transform;
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return scale * (transform.rotation() * p) + transform.translation(); }
};

/// Least-squares similarity mapping `estimated` onto `reference`:
/// reference_i ~ s R estimated_i + t. Scale is pinned to 1 in SE3 mode.
Similarity align_umeyama(std::span<const Vec3> estimated, std::span<const Vec3> reference,
                         AlignmentMode mode = AlignmentMode::SE3);

}  // namespace dvio
