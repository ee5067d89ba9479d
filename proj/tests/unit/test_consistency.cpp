#include <gtest/gtest.h>

#include <random>

#include "dvio/consistency.hpp"
#include "dvio/error.hpp"
#include "oracles.hpp"

namespace dvio {
namespace {

TEST(Residual, LateralDisplacementFiftyPixels) {
  PinholeCamera cam{500.0, 500.0, 320.0, 240.0, 640, 480};
  const PoseSE3 I;
  const std::vector<PosedObservation> obs = {
      {I, cam.project(Vec3(0, 0, 2)), 2.0},
      {I, cam.project(Vec3(0.2, 0, 2)), 2.0},
  };
  const ResidualReport r = reprojection_residual(5, obs, cam, I);
  EXPECT_NEAR(r.r_k, 500.0 * 0.2 / 2.0, 1e-12);
  EXPECT_EQ(r.m, 1);
  EXPECT_EQ(r.feature_id, 5);
}

struct Instance {
  PoseSE3 wb_i, wb_j, bc;
  Vec2 u_i, u_j;
  double d_j;
};

Instance random_instance(unsigned seed, const PinholeCamera& cam, bool consistent) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Instance in;
  in.bc = oracle::random_pose(seed * 3 + 1, 0.2, 0.1);
  in.wb_i = oracle::random_pose(seed * 3 + 2, 3.0, 3.0);
  const PoseSE3 wc_i = in.wb_i * in.bc;
  // Landmark 1-6 m in front of camera i.
  const Vec3 p_ci(u(rng), 0.7 * u(rng), 3.5 + 2.5 * u(rng));
  const Vec3 p_w = wc_i * p_ci;
  // Camera j close to camera i, still looking at the landmark.
  const PoseSE3 step(so3_exp(Vec3(u(rng), u(rng), u(rng)) * 0.1), Vec3(u(rng), u(rng), u(rng)) * 0.3);
  in.wb_j = in.wb_i * step;
  const Vec3 p_cj = (in.wb_j * in.bc).inverse() * p_w;
  in.u_i = cam.project(p_ci);
  in.u_j = cam.project(p_cj);
  in.d_j = p_cj.z();
  if (!consistent) {
    in.u_i += Vec2(u(rng), u(rng)) * 20.0;
    in.d_j *= 1.0 + 0.2 * u(rng);
  }
  return in;
}

TEST(Residual, MatchesDenseChainOracle) {
  PinholeCamera cam{520.0, 515.0, 320.5, 241.0, 640, 480};
  for (unsigned s = 0; s < 1000; ++s) {
    const Instance in = random_instance(s, cam, false);
    const std::vector<PosedObservation> obs = {{in.wb_i, in.u_i, 0.0}, {in.wb_j, in.u_j, in.d_j}};
    const double expected =
        oracle::dense_transfer_residual(in.wb_i.matrix(), in.wb_j.matrix(), in.bc.matrix(), cam.fx, cam.fy, cam.cx,
                                        cam.cy, in.u_i, cam.unproject(in.u_j, in.d_j));
    EXPECT_NEAR(reprojection_residual(s, obs, cam, in.bc).r_k, expected, 1e-9) << s;
  }
}

TEST(Residual, ConsistentGeometryIsZero) {
  PinholeCamera cam;
  for (unsigned s = 0; s < 200; ++s) {
    const Instance in = random_instance(s, cam, true);
    const std::vector<PosedObservation> obs = {{in.wb_i, in.u_i, 0.0}, {in.wb_j, in.u_j, in.d_j}};
    EXPECT_LT(reprojection_residual(s, obs, cam, in.bc).r_k, 1e-6) << s;
  }
}

TEST(Residual, AveragesOverCoObservations) {
  PinholeCamera cam{500.0, 500.0, 320.0, 240.0, 640, 480};
  const PoseSE3 I;
  const std::vector<PosedObservation> obs = {
      {I, cam.project(Vec3(0, 0, 2)), 2.0},
      {I, cam.project(Vec3(0.2, 0, 2)), 2.0},
      {I, cam.project(Vec3(0, 0, 2)), 2.0},
      {I, cam.project(Vec3(0, 0, 2)), 0.0},  // no depth, no world point: skipped
  };
  const ResidualReport r = reprojection_residual(1, obs, cam, I);
  EXPECT_EQ(r.m, 2);
  EXPECT_NEAR(r.r_k, 25.0, 1e-12);
  const ResidualReport w = reprojection_residual(1, obs, cam, I, Vec3(0, 0, 2));
  EXPECT_EQ(w.m, 3);
  EXPECT_NEAR(w.r_k, 50.0 / 3.0, 1e-12);
}

TEST(Residual, ErrorsCarryCodes) {
  PinholeCamera cam;
  const PoseSE3 I;
  const std::vector<PosedObservation> one = {{I, Vec2(100, 100), 1.0}};
  try {
    reprojection_residual(1, one, cam, I);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoCoObservation);
  }
  // Host camera looks the other way: the transferred point lands behind it.
  const PoseSE3 flipped(Quat(Eigen::AngleAxisd(M_PI, Vec3::UnitY())), Vec3::Zero());
  const std::vector<PosedObservation> behind = {{flipped, Vec2(100, 100), 0.0}, {I, Vec2(320, 240), 2.0}};
  try {
    reprojection_residual(1, behind, cam, I);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveDepth);
  }
}

TEST(CheckAndRecycle, Transitions) {
  ConsistencyConfig cfg;
  cfg.threshold_px = 3.0;
  cfg.recycle_min_observations = 4;
  ConsistencyState st;
  ResidualReport r{1, 5.0, 2};
  EXPECT_EQ(check_and_recycle(r, st, cfg), ConsistencyVerdict::Dynamic);
  EXPECT_TRUE(st.mcc_dynamic);
  r = {1, 1.0, 3};
  EXPECT_EQ(check_and_recycle(r, st, cfg), ConsistencyVerdict::Dynamic);  // too few observations to recycle
  r = {1, 1.0, 4};
  EXPECT_EQ(check_and_recycle(r, st, cfg), ConsistencyVerdict::Recycled);
  EXPECT_FALSE(st.mcc_dynamic);
  r = {1, 1.0, 4};
  EXPECT_EQ(check_and_recycle(r, st, cfg), ConsistencyVerdict::Stable);
  r = {1, 3.0, 4};
  EXPECT_EQ(check_and_recycle(r, st, cfg), ConsistencyVerdict::Stable);  // at the threshold is not above it
}

TEST(CheckAndRecycle, SemanticNeverRecycled) {
  ConsistencyConfig cfg;
  ConsistencyState st;
  st.semantic_dynamic = true;
  ResidualReport r{1, 0.0, 10};
  EXPECT_EQ(check_and_recycle(r, st, cfg), ConsistencyVerdict::Dynamic);
  EXPECT_TRUE(st.semantic_dynamic);
  EXPECT_FALSE(st.mcc_dynamic);
}

}  // namespace
}  // namespace dvio
