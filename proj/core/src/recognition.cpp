#include "dvio/recognition.hpp"

#include <algorithm>
#include <cmath>

namespace dvio {

DetectionBox DetectionBox::translated(const Vec2& offset) const {
  DetectionBox b = *this;
  b.x1 += offset.x();
  b.x2 += offset.x();
  b.y1 += offset.y();
  b.y2 += offset.y();
  return b;
}

DetectionBox DetectionBox::clamped(int width, int height) const {
  DetectionBox b = *this;
  const double xm = width - 1;
  const double ym = height - 1;
  b.x1 = std::clamp(b.x1, 0.0, xm);
  b.x2 = std::clamp(b.x2, 0.0, xm);
  b.y1 = std::clamp(b.y1, 0.0, ym);
  b.y2 = std::clamp(b.y2, 0.0, ym);
  return b;
}

double iou(const DetectionBox& a, const DetectionBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

DepthSampler sampler_for(const DepthImage& depth) {
  return [&depth](int x, int y) { return depth.at(x, y); };
}

namespace {

double sample_at(const DepthSampler& depth, const Vec2& p) {
  return depth(static_cast<int>(std::lround(p.x())), static_cast<int>(std::lround(p.y())));
}

}  // namespace

double background_depth(const DetectionBox& box, const DepthSampler& depth) {
  return std::max({sample_at(depth, box.top_left()), sample_at(depth, box.top_right()),
                   sample_at(depth, box.bottom_left()), sample_at(depth, box.bottom_right()), 0.0});
}

double background_depth(const DetectionBox& box, const DepthImage& depth) {
  return background_depth(box, sampler_for(depth));
}

double center_depth(const DetectionBox& box, const DepthSampler& depth) { return std::max(0.0, sample_at(depth, box.center())); }

double depth_threshold(double d_max, double d_c, double epsilon) {
  if (d_c > 0.0) {
    if (d_max - d_c > epsilon) return 0.5 * (d_max + d_c);
    return d_c + epsilon;
  }
  if (d_max > 0.0) return d_max;
  return std::numeric_limits<double>::infinity();
}

double SemanticMask::threshold_at(const Vec2& p) const {
  const long x = std::lround(p.x());
  const long y = std::lround(p.y());
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return 0.0;
  return threshold(static_cast<int>(x), static_cast<int>(y));
}

void SemanticMask::cover(const DetectionBox& box, double value) {
  const DetectionBox b = box.clamped(width_, height_);
  const int x0 = static_cast<int>(std::ceil(b.x1));
  const int x1 = static_cast<int>(std::floor(b.x2));
  const int y0 = static_cast<int>(std::ceil(b.y1));
  const int y1 = static_cast<int>(std::floor(b.y2));
  const double v = value;
  for (int y = y0; y <= y1; ++y) {
    double* row = threshold_.data() + static_cast<size_t>(y) * width_;
    for (int x = x0; x <= x1; ++x) row[x] = std::max(row[x], v);
  }
}

std::vector<BoxThreshold> box_thresholds(std::span<const DetectionBox> boxes, const DepthSampler& depth, double epsilon,
                                         bool whole_box) {
  std::vector<BoxThreshold> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) {
    const double t = whole_box ? std::numeric_limits<double>::infinity()
                               : depth_threshold(background_depth(b, depth), center_depth(b, depth), epsilon);
    out.push_back({b, t});
  }
  return out;
}

SemanticMask build_semantic_mask(int width, int height, std::span<const BoxThreshold> boxes) {
  SemanticMask mask(width, height);
  for (const auto& b : boxes) mask.cover(b.box, b.threshold);
  return mask;
}

SemanticMask build_semantic_mask(int width, int height, std::span<const DetectionBox> boxes, const DepthSampler& depth,
                                 double epsilon, bool whole_box) {
  const auto th = box_thresholds(boxes, depth, epsilon, whole_box);
  return build_semantic_mask(width, height, th);
}

SemanticMask build_semantic_mask(std::span<const DetectionBox> boxes, const DepthImage& depth, double epsilon,
                                 bool whole_box) {
  return build_semantic_mask(depth.width(), depth.height(), boxes, sampler_for(depth), epsilon, whole_box);
}

SemanticVerdict classify_feature(const FeatureObservation& obs, const SemanticMask& mask, DynamicHistory& history) {
  if (history.contains(obs.feature_id)) return SemanticVerdict::Dynamic;
  const double t = mask.threshold_at(obs.pixel);
  if (t > 0.0 && obs.depth < t) {
    history.mark(obs.feature_id);
    return SemanticVerdict::Dynamic;
  }
  return SemanticVerdict::Stable;
}

}  // namespace dvio
