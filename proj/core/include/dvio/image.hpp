#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dvio {

/// Row-major 8-bit intensity image.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, std::uint8_t fill = 0);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }

  std::uint8_t operator()(int x, int y) const { return pixels_[static_cast<size_t>(y) * width_ + x]; }
  std::uint8_t& operator()(int x, int y) { return pixels_[static_cast<size_t>(y) * width_ + x]; }
  const std::uint8_t* row(int y) const { return pixels_.data() + static_cast<size_t>(y) * width_; }
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }
  std::vector<std::uint8_t>& pixels() { return pixels_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Per-pixel metric depth; 0 marks an unavailable measurement.
class DepthImage {
 public:
  DepthImage() = default;
  DepthImage(int width, int height, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return depth_.empty(); }

  float operator()(int x, int y) const { return depth_[static_cast<size_t>(y) * width_ + x]; }
  float& operator()(int x, int y) { return depth_[static_cast<size_t>(y) * width_ + x]; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  /// Depth at (x, y), 0 when outside the image.
  double at(int x, int y) const { return contains(x, y) ? static_cast<double>((*this)(x, y)) : 0.0; }
  /// Median of the valid depths in the 3x3 neighbourhood of (x, y); 0 if none is valid.
  double median3x3(int x, int y) const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> depth_;
};

/// Luma conversion 0.299 R + 0.587 G + 0.114 B, rounded.
std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b);

/// Reads 8-bit gray/RGB(A) PNG as grayscale. Throws MissingFile / IoFailure.
GrayImage read_gray_png(const std::filesystem::path& path);
/// Reads a 16-bit single-channel PNG and divides by `units_per_meter`.
DepthImage read_depth_png(const std::filesystem::path& path, double units_per_meter);

void write_gray_png(const std::filesystem::path& path, const GrayImage& image);
/// Writes an 8-bit RGB PNG with the gray value replicated on all channels.
void write_rgb_png(const std::filesystem::path& path, const GrayImage& image);
void write_depth_png(const std::filesystem::path& path, const DepthImage& depth, double units_per_meter);

}  // namespace dvio
