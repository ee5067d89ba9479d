#include <gtest/gtest.h>

#include <random>

#include "dvio/error.hpp"
#include "dvio/geometry.hpp"
#include "oracles.hpp"

namespace dvio {
namespace {

double pose_distance(const PoseSE3& a, const PoseSE3& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

TEST(Pose, IdentityAndInverse) {
  const PoseSE3 p = oracle::random_pose(1, 2.0, 3.0);
  EXPECT_LT(pose_distance(compose(PoseSE3::identity(), p), p), 1e-15);
  EXPECT_LT(pose_distance(compose(p, p.inverse()), PoseSE3::identity()), 1e-12);
}

TEST(Pose, ComposeMatchesMatrixProduct) {
  for (unsigned s = 0; s < 50; ++s) {
    const PoseSE3 a = oracle::random_pose(2 * s, 3.0, 5.0);
    const PoseSE3 b = oracle::random_pose(2 * s + 1, 3.0, 5.0);
    const Mat4 expected = a.matrix() * b.matrix();
    EXPECT_LT((compose(a, b).matrix() - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Pose, FromMatrixRoundTrip) {
  const PoseSE3 p = oracle::random_pose(9, 3.0, 2.0);
  EXPECT_LT(pose_distance(PoseSE3::from_matrix(p.matrix()), p), 1e-12);
}

TEST(Camera, ProjectExamples) {
  PinholeCamera unit{1.0, 1.0, 0.0, 0.0, 640, 480};
  const Vec2 a = unit.project(Vec3(0, 0, 1));
  EXPECT_EQ(a.x(), 0.0);
  EXPECT_EQ(a.y(), 0.0);
  PinholeCamera cam{500.0, 500.0, 320.0, 240.0, 640, 480};
  const Vec2 b = cam.project(Vec3(0.1, 0, 1));
  EXPECT_NEAR(b.x(), 370.0, 1e-12);
  EXPECT_NEAR(b.y(), 240.0, 1e-12);
}

TEST(Camera, UnprojectExamples) {
  PinholeCamera cam{500.0, 500.0, 320.0, 240.0, 640, 480};
  const Vec3 a = cam.unproject(Vec2(320, 240), 2.5);
  EXPECT_NEAR((a - Vec3(0, 0, 2.5)).norm(), 0.0, 1e-12);
  const Vec3 b = cam.unproject(Vec2(370, 240), 1.0);
  EXPECT_NEAR((b - Vec3(0.1, 0, 1)).norm(), 0.0, 1e-12);
}

TEST(Camera, RoundTrip) {
  PinholeCamera cam{525.0, 520.0, 319.5, 239.5, 640, 480};
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0), z(0.2, 8.0), px(0.0, 640.0);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(u(rng), u(rng), z(rng));
    EXPECT_LT((cam.unproject(cam.project(p), p.z()) - p).norm(), 1e-9);
    const Vec2 uv(px(rng), px(rng) * 0.75);
    const double d = z(rng);
    EXPECT_LT((cam.project(cam.unproject(uv, d)) - uv).norm(), 1e-9);
  }
}

TEST(Camera, ProjectRejectsNonPositiveDepth) {
  PinholeCamera cam;
  try {
    cam.project(Vec3(0, 0, -1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveDepth);
  }
}

TEST(Camera, ValidateRejectsBadIntrinsics) {
  PinholeCamera cam;
  cam.fx = 0.0;
  EXPECT_THROW(cam.validate(), Error);
}

TEST(So3, ExpLogRoundTrip) {
  std::mt19937 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Vec3 w(n(rng), n(rng), n(rng));
    if (w.norm() > 3.0) w *= 3.0 / w.norm();
    EXPECT_LT((so3_log(so3_exp(w)) - w).norm(), 1e-10);
  }
  EXPECT_LT(so3_log(so3_exp(Vec3(1e-12, 0, 0))).norm(), 1e-11);
}

std::vector<Vec3> random_points(unsigned seed, int n) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) out.emplace_back(u(rng), u(rng), u(rng));
  return out;
}

TEST(Umeyama, SelfAlignmentIsIdentity) {
  const auto pts = random_points(1, 40);
  const Similarity s = align_umeyama(pts, pts, AlignmentMode::Sim3);
  EXPECT_LT(pose_distance(s.transform, PoseSE3::identity()), 1e-9);
  EXPECT_NEAR(s.scale, 1.0, 1e-12);
}

TEST(Umeyama, PureTranslation) {
  const auto pts = random_points(2, 40);
  std::vector<Vec3> moved;
  for (const auto& p : pts) moved.push_back(p + Vec3(1, 2, 3));
  const Similarity s = align_umeyama(pts, moved);
  EXPECT_LT((s.transform.translation() - Vec3(1, 2, 3)).norm(), 1e-9);
  EXPECT_LT(rotation_angle(s.transform.rotation()), 1e-9);
}

TEST(Umeyama, RecoversSimilarity) {
  for (unsigned seed = 0; seed < 20; ++seed) {
    const auto pts = random_points(seed + 10, 30);
    const PoseSE3 T = oracle::random_pose(seed, 3.0, 4.0);
    const double scale = 0.5 + 0.1 * seed;
    std::vector<Vec3> ref;
    for (const auto& p : pts) ref.push_back(scale * (T.rotation() * p) + T.translation());
    const Similarity s = align_umeyama(pts, ref, AlignmentMode::Sim3);
    EXPECT_LT(pose_distance(s.transform, T), 1e-6);
    EXPECT_NEAR(s.scale, scale, 1e-6);
  }
}

TEST(Umeyama, DegenerateInputThrows) {
  const std::vector<Vec3> two = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  EXPECT_THROW(align_umeyama(two, two), Error);
}

}  // namespace
}  // namespace dvio
