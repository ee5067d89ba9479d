#pragma once

#include <span>
#include <vector>

#include "dvio/geometry.hpp"
#include "dvio/image.hpp"

namespace dvio {

/// Float image with bilinear sampling, one pyramid level.
class FloatImage {
 public:
  FloatImage() = default;
  FloatImage(int width, int height) : width_(width), height_(height), data_(static_cast<size_t>(width) * height, 0.0f) {}

  int width() const { return width_; }
  int height() const { return height_; }
  float operator()(int x, int y) const { return data_[static_cast<size_t>(y) * width_ + x]; }
  float& operator()(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
  /// Bilinear interpolation with border clamping.
  float sample(double x, double y) const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

struct Pyramid {
  std::vector<FloatImage> levels;
  std::vector<FloatImage> grad_x;
  std::vector<FloatImage> grad_y;

  int max_level() const { return static_cast<int>(levels.size()) - 1; }
  bool empty() const { return levels.empty(); }
};

/// Levels 0..max_level, each half the size of the previous (5-tap binomial smoothing).
Pyramid build_pyramid(const GrayImage& image, int max_level);

struct KltParams {
  int window = 21;
  int max_iterations = 30;
  double epsilon = 0.01;
  double fb_threshold = 1.0;
  double min_eigenvalue = 1e-4;  // normalized by window area
  int max_level = 3;
};

struct KltResult {
  Vec2 pixel = Vec2::Zero();
  bool ok = false;
};

/// Pyramidal Lucas-Kanade from `predictions` with a forward-backward consistency check.
/// Uses up to `params.max_level` levels of the given pyramids.
/// Throws ImageSizeMismatch when the pyramids differ in size.
std::vector<KltResult> klt_track(const Pyramid& prev, const Pyramid& curr, std::span<const Vec2> prev_pixels,
                                 std::span<const Vec2> predictions, const KltParams& params);

/// Convenience overload building pyramids from images.
std::vector<KltResult> klt_track(const GrayImage& prev, const GrayImage& curr, std::span<const Vec2> prev_pixels,
                                 std::span<const Vec2> predictions, const KltParams& params);

}  // namespace dvio
