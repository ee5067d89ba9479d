#include <gtest/gtest.h>

#include <random>

#include "dvio/compensation.hpp"

namespace dvio {
namespace {

DetectionBox centered(const Vec2& c, double half = 50.0) {
  DetectionBox b;
  b.class_label = "person";
  b.x1 = c.x() - half;
  b.y1 = c.y() - half;
  b.x2 = c.x() + half;
  b.y2 = c.y() + half;
  return b;
}

TEST(Registry, VelocityFromCenterDifference) {
  CompensationConfig cfg;
  cfg.seed_velocity = true;
  ObjectRegistry reg(cfg);
  const std::vector<DetectionBox> f0 = {centered({310, 236})};
  const std::vector<DetectionBox> f1 = {centered({320, 240})};
  reg.associate_and_update(f0, 0);
  reg.associate_and_update(f1, 1);
  ASSERT_EQ(reg.objects().size(), 1u);
  EXPECT_EQ(reg.objects()[0].velocity_smoothed, Vec2(10, 4));
}

TEST(Registry, SmoothedVelocityIsAverage) {
  ObjectRegistry reg;
  const std::vector<Vec2> centers = {{306, 234}, {310, 236}, {320, 240}};
  for (size_t f = 0; f < centers.size(); ++f) {
    const std::vector<DetectionBox> d = {centered(centers[f])};
    reg.associate_and_update(d, static_cast<FrameIndex>(f));
    if (f == 1) EXPECT_EQ(reg.objects()[0].velocity_smoothed, Vec2(4, 2));
  }
  EXPECT_EQ(reg.objects()[0].velocity_smoothed, Vec2(7, 3));
}

TEST(Registry, GeometricConvergenceFromZero) {
  CompensationConfig cfg;
  cfg.seed_velocity = false;
  ObjectRegistry reg(cfg);
  Vec2 c(100, 200);
  const std::vector<DetectionBox> first = {centered(c)};
  reg.associate_and_update(first, 0);
  for (int n = 1; n <= 30; ++n) {
    c += Vec2(8, 0);
    const std::vector<DetectionBox> d = {centered(c)};
    reg.associate_and_update(d, n);
    const Vec2 v = reg.objects()[0].velocity_smoothed;
    EXPECT_EQ(v, Vec2(8.0 - 8.0 * std::ldexp(1.0, -n), 0.0)) << n;
    EXPECT_EQ((v - Vec2(8, 0)).norm(), std::ldexp(1.0, -n) * 8.0);
  }
}

TEST(Registry, PredictTranslatesCorners) {
  ObjectRegistry reg;
  DetectionBox b;
  b.class_label = "person";
  b.x1 = 93;
  b.y1 = 97;
  b.x2 = 193;
  b.y2 = 297;
  const std::vector<DetectionBox> d0 = {b};
  const std::vector<DetectionBox> d1 = {b.translated(Vec2(7, 3))};
  reg.associate_and_update(d0, 0);
  reg.associate_and_update(d1, 1);
  ASSERT_EQ(reg.objects()[0].velocity_smoothed, Vec2(7, 3));
  const auto out = reg.predict_missed(2, 640, 480);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].top_left(), Vec2(107, 103));
  EXPECT_EQ(out[0].top_right(), Vec2(207, 103));
  EXPECT_EQ(out[0].bottom_left(), Vec2(107, 303));
  EXPECT_EQ(out[0].bottom_right(), Vec2(207, 303));
  EXPECT_TRUE(out[0].compensated);
}

TEST(Registry, StationaryObjectHeldUntilMissLimit) {
  CompensationConfig cfg;
  cfg.miss_limit = 3;
  ObjectRegistry reg(cfg);
  const std::vector<DetectionBox> d = {centered({200, 200})};
  reg.associate_and_update(d, 0);
  reg.associate_and_update(d, 1);
  for (FrameIndex f = 2; f < 2 + cfg.miss_limit; ++f) {
    const auto out = reg.predict_missed(f, 640, 480);
    ASSERT_EQ(out.size(), 1u) << f;
    EXPECT_EQ(out[0].center(), Vec2(200, 200));
  }
  EXPECT_TRUE(reg.predict_missed(2 + cfg.miss_limit, 640, 480).empty());
  EXPECT_TRUE(reg.objects().empty());
}

TEST(Registry, DetectedObjectsAreNotCompensated) {
  ObjectRegistry reg;
  const std::vector<DetectionBox> d = {centered({200, 200})};
  reg.associate_and_update(d, 0);
  EXPECT_TRUE(reg.predict_missed(0, 640, 480).empty());
}

TEST(Registry, ClassesDoNotMix) {
  ObjectRegistry reg;
  DetectionBox a = centered({200, 200});
  DetectionBox b = a;
  b.class_label = "car";
  const std::vector<DetectionBox> d0 = {a};
  const std::vector<DetectionBox> d1 = {b};
  reg.associate_and_update(d0, 0);
  reg.associate_and_update(d1, 1);
  EXPECT_EQ(reg.objects().size(), 2u);
}

TEST(Registry, BridgesThreeMissedFramesWithJitter) {
  std::mt19937 rng(5);
  std::normal_distribution<double> jitter(0.0, 1.0);
  ObjectRegistry reg;
  auto truth = [](FrameIndex f) { return Vec2(100 + 6.0 * f, 240); };
  const FrameIndex blank_from = 20, blank_to = 22;
  Vec2 predicted_at_redetection;
  for (FrameIndex f = 0; f <= blank_to + 1; ++f) {
    if (f >= blank_from && f <= blank_to) {
      reg.predict_missed(f, 640, 480);
      continue;
    }
    if (f == blank_to + 1) {
      ASSERT_EQ(reg.objects().size(), 1u);
      predicted_at_redetection = reg.objects()[0].box.center() + reg.objects()[0].velocity_smoothed;
    }
    const std::vector<DetectionBox> d = {centered(truth(f) + Vec2(jitter(rng), jitter(rng)), 40)};
    reg.associate_and_update(d, f);
    reg.predict_missed(f, 640, 480);
  }
  EXPECT_LT((predicted_at_redetection - truth(blank_to + 1)).norm(), 4.0);
  ASSERT_EQ(reg.objects().size(), 1u);
  EXPECT_EQ(reg.objects()[0].detections, static_cast<int>(blank_to + 2 - (blank_to - blank_from + 1)));
}

}  // namespace
}  // namespace dvio
