#include <gtest/gtest.h>

#include "dvio/error.hpp"
#include "dvio/estimator.hpp"
#include "dvio/scene.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace dvio {
namespace {

const Scene& quiet_scene() {
  static const Scene scene = Scene::generate(fixture::noise_free(static_scene(5, 4.0)));
  return scene;
}

double position_error(const SlidingWindowEstimator& est, const Scene& scene) {
  double worst = 0.0;
  for (const auto& fs : est.frames()) {
    const auto& truth = scene.frames()[static_cast<size_t>(fs.frame_index)].truth;
    worst = std::max(worst, (fs.pose.translation() - truth.pose.translation()).norm());
  }
  return worst;
}

void expect_monotone(const OptimizationSummary& s) {
  for (size_t k = 1; k < s.cost_history.size(); ++k) EXPECT_LE(s.cost_history[k], s.cost_history[k - 1]);
  if (!s.cost_history.empty()) EXPECT_EQ(s.cost_history.back(), s.final_cost);
}

void perturb(SlidingWindowEstimator& est, unsigned seed) {
  int k = 0;
  for (auto& fs : est.mutable_frames()) {
    if (k++ == 0) continue;  // the oldest pose fixes the gauge
    const PoseSE3 d = oracle::random_pose(seed + k, 0.5 * M_PI / 180.0, 0.01);
    fs.pose = PoseSE3(fs.pose.rotation() * so3_exp(so3_log(d.rotation())), fs.pose.translation() + d.translation());
  }
}

TEST(Keyframe, DecisionRule) {
  const KeyframePolicy p;
  EXPECT_FALSE(keyframe_decision(0.0, 120, p));
  EXPECT_TRUE(keyframe_decision(15.0, 120, p));
  EXPECT_FALSE(keyframe_decision(10.0, 120, p));
  EXPECT_TRUE(keyframe_decision(0.0, 49, p));
}

TEST(Keyframe, DynamicFeaturesDoNotAddParallax) {
  EstimatorConfig cfg;
  cfg.use_imu = false;
  PinholeCamera cam;
  SlidingWindowEstimator est(cfg, cam, default_body_from_camera());
  est.initialize({});
  std::vector<FeatureObservation> f0, f1;
  std::unordered_set<FeatureId> dynamic;
  for (int i = 0; i < 80; ++i) {
    const Vec2 p(40 + (i % 10) * 60, 40 + (i / 10) * 50);
    f0.push_back({i, p, 0, 3.0});
    const bool moving = i >= 60;
    f1.push_back({i, p + Vec2(moving ? 40.0 : 2.0, 0.0), 1, 3.0});
    if (moving) dynamic.insert(i);
  }
  est.process_frame({0, 0.0, f0}, {}, nullptr);
  const FrameResult r = est.process_frame({1, 1.0 / 30, f1}, dynamic, nullptr);
  EXPECT_NEAR(r.parallax, 2.0, 1e-9);
  EXPECT_FALSE(r.keyframe);
  EXPECT_EQ(r.semantic_dynamic, 20);
}

TEST(Estimator, FixedPointAtGroundTruth) {
  EstimatorConfig cfg;
  cfg.use_imu = false;
  const Scene& scene = quiet_scene();
  SlidingWindowEstimator est(cfg, scene.spec().camera, scene.spec().body_from_camera);
  fixture::drive(est, scene, 15, false);
  fixture::set_to_truth(est, scene);
  EXPECT_LT(est.evaluate_cost(), 1e-12);
  const auto s = est.optimize();
  EXPECT_LT(s.final_cost, 1e-12);
  EXPECT_LT(position_error(est, scene), 1e-9);
}

TEST(Estimator, PerturbationRecoveryVisual) {
  EstimatorConfig cfg;
  cfg.use_imu = false;
  const Scene& scene = quiet_scene();
  SlidingWindowEstimator est(cfg, scene.spec().camera, scene.spec().body_from_camera);
  fixture::drive(est, scene, 15, false);
  for (unsigned seed = 0; seed < 5; ++seed) {
    fixture::set_to_truth(est, scene);
    perturb(est, 100 * seed);
    EXPECT_GT(position_error(est, scene), 1e-3);
    const auto s = est.optimize();
    expect_monotone(s);
    EXPECT_LT(position_error(est, scene), 1e-4) << seed;
  }
}

TEST(Estimator, PerturbationRecoveryVisualInertial) {
  EstimatorConfig cfg;
  const Scene& scene = quiet_scene();
  SlidingWindowEstimator est(cfg, scene.spec().camera, scene.spec().body_from_camera);
  fixture::drive(est, scene, 15, true);
  for (unsigned seed = 0; seed < 5; ++seed) {
    fixture::set_to_truth(est, scene);
    perturb(est, 7 + 100 * seed);
    const auto s = est.optimize();
    expect_monotone(s);
    EXPECT_LT(position_error(est, scene), 1e-4) << seed;
  }
}

TEST(Estimator, NoiseFreeSequenceTracksTruth) {
  EstimatorConfig cfg;
  const Scene& scene = quiet_scene();
  SlidingWindowEstimator est(cfg, scene.spec().camera, scene.spec().body_from_camera);
  const int n = static_cast<int>(scene.frames().size());
  const auto results = fixture::drive(est, scene, n, true);
  for (const auto& r : results) expect_monotone(r.summary);
  const auto& last = results.back();
  const auto& truth = scene.frames().back().truth;
  EXPECT_LT((last.state.pose.translation() - truth.pose.translation()).norm(), 1e-3);
  EXPECT_LT(rotation_angle(last.state.pose.rotation().inverse() * truth.pose.rotation()) * 180.0 / M_PI, 0.05);
  EXPECT_EQ(static_cast<int>(est.frames().size()), cfg.window_size);
}

TEST(Estimator, WindowSizeConstantAfterWarmUp) {
  EstimatorConfig cfg;
  cfg.window_size = 6;
  const Scene& scene = quiet_scene();
  SlidingWindowEstimator est(cfg, scene.spec().camera, scene.spec().body_from_camera);
  SyntheticFrontend fe({}, scene);
  est.initialize(scene.frames().front().truth);
  for (int f = 0; f < 30; ++f) {
    const auto sf = fe.process(f);
    std::optional<PreintegratedDelta> d;
    if (f > 0)
      d = PreintegratedDelta::from_samples(
          slice_imu(scene.imu(), scene.frames()[static_cast<size_t>(f - 1)].timestamp, sf.output.timestamp));
    est.process_frame({f, sf.output.timestamp, sf.output.observations}, {}, d ? &*d : nullptr);
    EXPECT_EQ(static_cast<int>(est.frames().size()), std::min(f + 1, cfg.window_size));
    for (size_t k = 1; k < est.frames().size(); ++k) {
      EXPECT_GT(est.frames()[k].timestamp, est.frames()[k - 1].timestamp);
      EXPECT_TRUE(est.frames()[k].delta_from_prev.has_value());
    }
  }
}

TEST(Estimator, ExcludedFeatureLeavesOtherBlocksUnchanged) {
  EstimatorConfig cfg;
  cfg.use_imu = false;
  const Scene& scene = quiet_scene();
  SlidingWindowEstimator est(cfg, scene.spec().camera, scene.spec().body_from_camera);
  fixture::drive(est, scene, 8, false);
  perturb(est, 3);
  std::vector<FeatureId> ids;
  for (const auto& [id, f] : est.features())
    if (f.depth_initialized && f.observations.size() >= 2 && !f.dynamic()) ids.push_back(id);
  ASSERT_GE(ids.size(), 2u);
  auto cost_without = [&](std::initializer_list<FeatureId> drop) {
    for (FeatureId id : drop) est.mutable_features()[id].consistency.semantic_dynamic = true;
    const double c = est.evaluate_cost();
    for (FeatureId id : drop) est.mutable_features()[id].consistency.semantic_dynamic = false;
    return c;
  };
  const FeatureId a = ids[0], b = ids[1];
  const double all = cost_without({});
  EXPECT_NEAR(all - cost_without({a}), cost_without({b}) - cost_without({a, b}), 1e-9 * std::max(1.0, all));
}

TEST(Estimator, TooFewFeaturesIsInsufficient) {
  EstimatorConfig cfg;
  cfg.use_imu = false;
  PinholeCamera cam;
  SlidingWindowEstimator est(cfg, cam, default_body_from_camera());
  est.initialize({});
  const std::vector<FeatureObservation> obs = {{0, Vec2(100, 100), 0, 2.0}, {1, Vec2(200, 200), 0, 2.0}};
  est.process_frame({0, 0.0, obs}, {}, nullptr);
  const FrameResult r = est.process_frame({1, 0.1, obs}, {}, nullptr);
  EXPECT_TRUE(r.insufficient_constraints);
  try {
    est.optimize();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientConstraints);
  }
}

TEST(Estimator, RejectsOutOfOrderFrames) {
  EstimatorConfig cfg;
  PinholeCamera cam;
  SlidingWindowEstimator est(cfg, cam, default_body_from_camera());
  est.initialize({});
  est.process_frame({0, 1.0, {}}, {}, nullptr);
  EXPECT_THROW(est.process_frame({1, 0.5, {}}, {}, nullptr), Error);
}

TEST(ImuRate, EmptyAndStationary) {
  NavState s;
  s.pose = PoseSE3(so3_exp(Vec3(0.1, 0.0, 0.4)), Vec3(1, 2, 3));
  EXPECT_TRUE(propagate_imu_rate(s, {}).empty());
  const std::vector<ImuSample> one = {{5.0, Vec3::Zero(), Vec3::Zero()}};
  const auto single = propagate_imu_rate(s, one);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_LT((single[0].second.matrix() - s.pose.matrix()).norm(), 1e-15);

  s.bias.accel = Vec3(0.02, -0.01, 0.03);
  s.bias.gyro = Vec3(0.001, 0.0, -0.002);
  const Vec3 f = s.pose.rotation().inverse() * Vec3(0, 0, kGravityMagnitude) + s.bias.accel;
  std::vector<ImuSample> still;
  for (int k = 0; k <= 20; ++k) still.push_back({5.0 + k * 0.005, s.bias.gyro, f});
  const auto poses = propagate_imu_rate(s, still);
  ASSERT_EQ(poses.size(), still.size());
  for (const auto& [t, p] : poses) EXPECT_LT((p.translation() - s.pose.translation()).norm(), 1e-3);
}

TEST(ImuRate, FollowsSimulatorBetweenFrames) {
  const Scene& scene = quiet_scene();
  for (size_t f = 0; f + 1 < scene.frames().size(); f += 10) {
    const auto& a = scene.frames()[f];
    const auto span = slice_imu(scene.imu(), a.timestamp, scene.frames()[f + 1].timestamp);
    for (const auto& [t, p] : propagate_imu_rate(a.truth, span))
      EXPECT_LT((p.translation() - scene.truth_at(t).pose.translation()).norm(), 5e-3);
  }
}

}  // namespace
}  // namespace dvio
