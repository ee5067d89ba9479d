#include <gtest/gtest.h>

#include <limits>
#include <map>

#include "dvio/recognition.hpp"

namespace dvio {
namespace {

DetectionBox box(double x1, double y1, double x2, double y2, const std::string& label = "person") {
  DetectionBox b;
  b.class_label = label;
  b.x1 = x1;
  b.y1 = y1;
  b.x2 = x2;
  b.y2 = y2;
  return b;
}

// Depth lookup that returns the given value at the four corners and center of `b`, 0 elsewhere.
DepthSampler corner_sampler(const DetectionBox& b, double tl, double tr, double bl, double br, double center = 0.0) {
  std::map<std::pair<int, int>, double> at = {
      {{static_cast<int>(b.x1), static_cast<int>(b.y1)}, tl},
      {{static_cast<int>(b.x2), static_cast<int>(b.y1)}, tr},
      {{static_cast<int>(b.x1), static_cast<int>(b.y2)}, bl},
      {{static_cast<int>(b.x2), static_cast<int>(b.y2)}, br},
      {{static_cast<int>(b.center().x()), static_cast<int>(b.center().y())}, center},
  };
  return [at](int x, int y) {
    auto it = at.find({x, y});
    return it == at.end() ? 0.0 : it->second;
  };
}

TEST(BackgroundDepth, CornerMaximum) {
  const DetectionBox b = box(100, 100, 200, 300);
  EXPECT_EQ(background_depth(b, corner_sampler(b, 4.2, 4.0, 3.9, 4.1)), 4.2);
  EXPECT_EQ(background_depth(b, corner_sampler(b, 0, 0, 0, 0)), 0.0);
  EXPECT_EQ(background_depth(b, corner_sampler(b, 0, 2.5, 0, 1.0)), 2.5);
}

TEST(BackgroundDepth, FromDepthImage) {
  DepthImage d(64, 64, 0.0f);
  d(10, 10) = 3.0f;
  d(40, 10) = 3.5f;
  EXPECT_EQ(background_depth(box(10, 10, 40, 50), d), 3.5);
}

TEST(DepthThreshold, AllBranches) {
  EXPECT_NEAR(depth_threshold(4.2, 1.5, 1.0), 2.85, 1e-12);
  EXPECT_NEAR(depth_threshold(2.0, 1.8, 1.0), 2.8, 1e-12);
  EXPECT_EQ(depth_threshold(3.0, 0.0, 1.0), 3.0);
  EXPECT_EQ(depth_threshold(0.0, 0.0, 1.0), std::numeric_limits<double>::infinity());
}

TEST(DepthThreshold, EpsilonBoundaryTakesSecondBranch) {
  // d_max - d_c == epsilon exactly: the first branch would give 2.5.
  EXPECT_EQ(depth_threshold(3.0, 2.0, 1.0), 3.0);
  EXPECT_EQ(depth_threshold(3.0, 2.0, 0.999), 2.5);
}

TEST(SemanticMaskTest, NoBoxesAllZero) {
  const DepthImage d(32, 24, 2.0f);
  const SemanticMask m = build_semantic_mask({}, d, 1.0);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 32; ++x) EXPECT_EQ(m.threshold(x, y), 0.0);
}

TEST(SemanticMaskTest, SingleBoxCarriesThreshold) {
  const std::vector<BoxThreshold> boxes = {{box(10, 5, 20, 15), 2.85}};
  const SemanticMask m = build_semantic_mask(40, 30, boxes);
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) {
      const bool inside = x >= 10 && x <= 20 && y >= 5 && y <= 15;
      EXPECT_EQ(m.threshold(x, y), inside ? 2.85 : 0.0) << x << "," << y;
    }
}

TEST(SemanticMaskTest, OverlapTakesMaximum) {
  const std::vector<BoxThreshold> boxes = {{box(0, 0, 20, 20), 2.0}, {box(10, 10, 30, 30), 3.0}};
  const SemanticMask m = build_semantic_mask(40, 40, boxes);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      double expected = 0.0;
      for (const auto& b : boxes)
        if (x >= b.box.x1 && x <= b.box.x2 && y >= b.box.y1 && y <= b.box.y2) expected = std::max(expected, b.threshold);
      EXPECT_EQ(m.threshold(x, y), expected);
    }
  EXPECT_EQ(m.threshold(15, 15), 3.0);
}

TEST(SemanticMaskTest, ThresholdFromDepthSamples) {
  const DetectionBox b = box(100, 100, 200, 300);
  const std::vector<DetectionBox> boxes = {b};
  const SemanticMask m = build_semantic_mask(640, 480, boxes, corner_sampler(b, 4.2, 4.0, 3.9, 4.1, 1.5), 1.0);
  EXPECT_NEAR(m.threshold(150, 200), 2.85, 1e-12);
  const SemanticMask whole = build_semantic_mask(640, 480, boxes, corner_sampler(b, 4.2, 4.0, 3.9, 4.1, 1.5), 1.0, true);
  EXPECT_EQ(whole.threshold(150, 200), std::numeric_limits<double>::infinity());
}

TEST(Classify, DepthAgainstThreshold) {
  const std::vector<BoxThreshold> finite = {{box(0, 0, 50, 50), 2.85}};
  const SemanticMask m = build_semantic_mask(64, 64, finite);
  DynamicHistory h;
  EXPECT_EQ(classify_feature({1, Vec2(10, 10), 0, 1.5}, m, h), SemanticVerdict::Dynamic);
  EXPECT_EQ(classify_feature({2, Vec2(10, 10), 0, 4.0}, m, h), SemanticVerdict::Stable);
  EXPECT_EQ(classify_feature({3, Vec2(60, 60), 0, 1.0}, m, h), SemanticVerdict::Stable);

  const std::vector<BoxThreshold> inf = {{box(0, 0, 50, 50), std::numeric_limits<double>::infinity()}};
  const SemanticMask mi = build_semantic_mask(64, 64, inf);
  for (double d : {0.0, 1.0, 100.0}) EXPECT_EQ(classify_feature({4, Vec2(5, 5), 0, d}, mi, h), SemanticVerdict::Dynamic);
}

TEST(Classify, DynamicIsSticky) {
  const std::vector<BoxThreshold> boxes = {{box(0, 0, 50, 50), 2.85}};
  const SemanticMask m = build_semantic_mask(64, 64, boxes);
  const SemanticMask empty(64, 64);
  DynamicHistory h;
  EXPECT_EQ(classify_feature({7, Vec2(10, 10), 0, 1.0}, m, h), SemanticVerdict::Dynamic);
  EXPECT_EQ(classify_feature({7, Vec2(60, 60), 1, 1.0}, empty, h), SemanticVerdict::Dynamic);
  EXPECT_TRUE(h.contains(7));
}

TEST(Boxes, IouAndTranslate) {
  const DetectionBox a = box(0, 0, 10, 10);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, box(5, 0, 15, 10)), 50.0 / 150.0);
  EXPECT_EQ(iou(a, box(20, 20, 30, 30)), 0.0);
  const DetectionBox t = box(100, 100, 200, 300).translated(Vec2(7, 3));
  EXPECT_EQ(t.top_left(), Vec2(107, 103));
  EXPECT_EQ(t.top_right(), Vec2(207, 103));
  EXPECT_EQ(t.bottom_left(), Vec2(107, 303));
  EXPECT_EQ(t.bottom_right(), Vec2(207, 303));
}

}  // namespace
}  // namespace dvio
