#include "dvio/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "dvio/error.hpp"

namespace dvio {

GrayImage::GrayImage(int width, int height, std::uint8_t fill)
    : width_(width), height_(height), pixels_(static_cast<size_t>(width) * height, fill) {}

DepthImage::DepthImage(int width, int height, float fill)
    : width_(width), height_(height), depth_(static_cast<size_t>(width) * height, fill) {}

double DepthImage::median3x3(int x, int y) const {
  std::array<float, 9> v{};
  int n = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      if (!contains(x + dx, y + dy)) continue;
      const float d = (*this)(x + dx, y + dy);
      if (d > 0.0f) v[n++] = d;
    }
  if (n == 0) return 0.0;
  std::nth_element(v.begin(), v.begin() + n / 2, v.begin() + n);
  float med = v[n / 2];
  if (n % 2 == 0) {
    const float lower = *std::max_element(v.begin(), v.begin() + n / 2);
    med = 0.5f * (med + lower);
  }
  return med;
}

std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) {
    if (mode[0] == 'r') throw Error(ErrorCode::MissingFile, path.string());
    throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  }
  return f;
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> data;  // row-major, big-endian for 16 bit
};

DecodedPng decode(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoFailure, "libpng init failed");
  }
  DecodedPng out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoFailure, "corrupt PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  out.data.resize(stride * static_cast<size_t>(out.height));
  std::vector<png_bytep> rows(static_cast<size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<size_t>(y)] = out.data.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void encode(const std::filesystem::path& path, int width, int height, int channels, int bit_depth,
            const std::uint8_t* data) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoFailure, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoFailure, "failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 1);
  const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const size_t stride = static_cast<size_t>(width) * channels * (bit_depth / 8);
  for (int y = 0; y < height; ++y) png_write_row(png, const_cast<png_bytep>(data + stride * y));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

GrayImage read_gray_png(const std::filesystem::path& path) {
  const auto png = decode(path);
  GrayImage img(png.width, png.height);
  const int bpc = png.bit_depth / 8;
  const size_t stride = static_cast<size_t>(png.width) * png.channels * bpc;
  for (int y = 0; y < png.height; ++y) {
    const std::uint8_t* row = png.data.data() + stride * y;
    for (int x = 0; x < png.width; ++x) {
      const std::uint8_t* px = row + static_cast<size_t>(x) * png.channels * bpc;  // high byte first at 16 bit
      if (png.channels >= 3)
        img(x, y) = luma(px[0], px[bpc], px[2 * bpc]);
      else
        img(x, y) = px[0];
    }
  }
  return img;
}

DepthImage read_depth_png(const std::filesystem::path& path, double units_per_meter) {
  const auto png = decode(path);
  if (png.channels != 1 || png.bit_depth != 16)
    throw Error(ErrorCode::IoFailure, path.string() + " is not a 16-bit single-channel PNG");
  DepthImage depth(png.width, png.height);
  for (int y = 0; y < png.height; ++y)
    for (int x = 0; x < png.width; ++x) {
      const size_t i = (static_cast<size_t>(y) * png.width + x) * 2;
      const unsigned raw = (static_cast<unsigned>(png.data[i]) << 8) | png.data[i + 1];
      depth(x, y) = static_cast<float>(raw / units_per_meter);
    }
  return depth;
}

void write_gray_png(const std::filesystem::path& path, const GrayImage& image) {
  encode(path, image.width(), image.height(), 1, 8, image.pixels().data());
}

void write_rgb_png(const std::filesystem::path& path, const GrayImage& image) {
  std::vector<std::uint8_t> rgb(image.pixels().size() * 3);
  for (size_t i = 0; i < image.pixels().size(); ++i) rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = image.pixels()[i];
  encode(path, image.width(), image.height(), 3, 8, rgb.data());
}

void write_depth_png(const std::filesystem::path& path, const DepthImage& depth, double units_per_meter) {
  std::vector<std::uint8_t> raw(static_cast<size_t>(depth.width()) * depth.height() * 2);
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      const double v = std::round(static_cast<double>(depth(x, y)) * units_per_meter);
      const auto u = static_cast<unsigned>(std::clamp(v, 0.0, 65535.0));
      const size_t i = (static_cast<size_t>(y) * depth.width() + x) * 2;
      raw[i] = static_cast<std::uint8_t>(u >> 8);
      raw[i + 1] = static_cast<std::uint8_t>(u & 0xff);
    }
  encode(path, depth.width(), depth.height(), 1, 16, raw.data());
}

}  // namespace dvio
