#pragma once

#include <functional>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "dvio/feature.hpp"
#include "dvio/image.hpp"

namespace dvio {

/// Axis-aligned detector box in pixel coordinates, corners (x1, y1) top-left and (x2, y2) bottom-right.
struct DetectionBox {
  std::string class_label;
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
  double score = 1.0;
  FrameIndex frame_index = -1;
  bool compensated = false;  // produced by missed-detection compensation
  int object_id = -1;

  Vec2 top_left() const { return {x1, y1}; }
  Vec2 top_right() const { return {x2, y1}; }
  Vec2 bottom_left() const { return {x1, y2}; }
  Vec2 bottom_right() const { return {x2, y2}; }
  Vec2 center() const { return {0.5 * (x1 + x2), 0.5 * (y1 + y2)}; }
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
  bool empty() const { return !(x2 > x1) || !(y2 > y1); }

  DetectionBox translated(const Vec2& offset) const;
  /// Clamped to [0, width-1] x [0, height-1].
  DetectionBox clamped(int width, int height) const;
};

double iou(const DetectionBox& a, const DetectionBox& b);

/// Depth lookup used for box corners and centers (meters, 0 = unavailable).
using DepthSampler = std::function<double(int x, int y)>;

DepthSampler sampler_for(const DepthImage& depth);

/// Deepest of the four corner depths; unavailable corners count as 0.
double background_depth(const DetectionBox& box, const DepthSampler& depth);
double background_depth(const DetectionBox& box, const DepthImage& depth);
double center_depth(const DetectionBox& box, const DepthSampler& depth);

/// Depth threshold separating an object from the background seen through its box.
/// d_max - d_c == epsilon falls in the "d_c + epsilon" branch.
double depth_threshold(double d_max, double d_c, double epsilon);

/// Per-pixel depth threshold; 0 outside every box, +inf representable.
class SemanticMask {
 public:
  SemanticMask() = default;
  SemanticMask(int width, int height) : width_(width), height_(height), threshold_(static_cast<size_t>(width) * height, 0.0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  double threshold(int x, int y) const { return threshold_[static_cast<size_t>(y) * width_ + x]; }
  /// Threshold at the rounded pixel; 0 outside the image.
  double threshold_at(const Vec2& p) const;
  /// Raises pixels covered by `box` to at least `value`.
  void cover(const DetectionBox& box, double value);

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> threshold_;
};

struct BoxThreshold {
  DetectionBox box;
  double threshold = 0.0;
};

/// Threshold for each box from its corner/center depths.
std::vector<BoxThreshold> box_thresholds(std::span<const DetectionBox> boxes, const DepthSampler& depth, double epsilon,
                                         bool whole_box = false);

/// Per-pixel maximum over covering boxes. `whole_box` sets every box to +inf
/// (every feature inside a box is dynamic).
SemanticMask build_semantic_mask(int width, int height, std::span<const DetectionBox> boxes,
                                 const DepthSampler& depth, double epsilon, bool whole_box = false);
SemanticMask build_semantic_mask(std::span<const DetectionBox> boxes, const DepthImage& depth, double epsilon,
                                 bool whole_box = false);
SemanticMask build_semantic_mask(int width, int height, std::span<const BoxThreshold> boxes);

enum class SemanticVerdict { Stable, Dynamic };

/// Features once found dynamic stay dynamic for the rest of their track.
class DynamicHistory {
 public:
  bool contains(FeatureId id) const { return ids_.contains(id); }
  void mark(FeatureId id) { ids_.insert(id); }
  void forget(FeatureId id) { ids_.erase(id); }
  std::size_t size() const { return ids_.size(); }

 private:
  std::unordered_set<FeatureId> ids_;
};

SemanticVerdict classify_feature(const FeatureObservation& obs, const SemanticMask& mask, DynamicHistory& history);

struct RecognitionConfig {
  double epsilon = 1.0;  // m
  std::set<std::string> dynamic_classes = {"person", "car", "bus", "truck", "bicycle", "motorbike", "dog", "cat"};
  bool is_dynamic_class(const std::string& label) const { return dynamic_classes.contains(label); }
};

}  // namespace dvio
