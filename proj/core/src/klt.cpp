#include "dvio/klt.hpp"

#include <algorithm>
#include <cmath>

#include "dvio/error.hpp"

namespace dvio {

float FloatImage::sample(double x, double y) const {
  x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
  const int x0 = std::min(static_cast<int>(x), width_ - 2 < 0 ? 0 : width_ - 2);
  const int y0 = std::min(static_cast<int>(y), height_ - 2 < 0 ? 0 : height_ - 2);
  const int x1 = std::min(x0 + 1, width_ - 1);
  const int y1 = std::min(y0 + 1, height_ - 1);
  const double ax = x - x0;
  const double ay = y - y0;
  const double top = (1.0 - ax) * (*this)(x0, y0) + ax * (*this)(x1, y0);
  const double bot = (1.0 - ax) * (*this)(x0, y1) + ax * (*this)(x1, y1);
  return static_cast<float>((1.0 - ay) * top + ay * bot);
}

namespace {

FloatImage downsample(const FloatImage& src) {
  const int w = std::max(1, (src.width() + 1) / 2);
  const int h = std::max(1, (src.height() + 1) / 2);
  // Separable [1 4 6 4 1] / 16 with clamped borders.
  static constexpr float k[5] = {1.f / 16, 4.f / 16, 6.f / 16, 4.f / 16, 1.f / 16};
  FloatImage tmp(w, src.height());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * src(std::clamp(2 * x + i, 0, src.width() - 1), y);
      tmp(x, y) = acc;
    }
  FloatImage dst(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp(x, std::clamp(2 * y + i, 0, src.height() - 1));
      dst(x, y) = acc;
    }
  return dst;
}

void scharr(const FloatImage& img, FloatImage& gx, FloatImage& gy) {
  const int w = img.width();
  const int h = img.height();
  gx = FloatImage(w, h);
  gy = FloatImage(w, h);
  auto at = [&](int x, int y) { return img(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1)); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      gx(x, y) = (3.f * (at(x + 1, y - 1) - at(x - 1, y - 1)) + 10.f * (at(x + 1, y) - at(x - 1, y)) +
                  3.f * (at(x + 1, y + 1) - at(x - 1, y + 1))) /
                 32.f;
      gy(x, y) = (3.f * (at(x - 1, y + 1) - at(x - 1, y - 1)) + 10.f * (at(x, y + 1) - at(x, y - 1)) +
                  3.f * (at(x + 1, y + 1) - at(x + 1, y - 1))) /
                 32.f;
    }
}

struct LevelResult {
  Vec2 guess;
  bool ok;
  bool converged;
};

LevelResult track_level(const Pyramid& prev, const Pyramid& curr, int level, const Vec2& p, Vec2 guess,
                        const KltParams& params) {
  const FloatImage& I = prev.levels[level];
  const FloatImage& gxI = prev.grad_x[level];
  const FloatImage& gyI = prev.grad_y[level];
  const FloatImage& J = curr.levels[level];
  const int half = params.window / 2;
  const int n = (2 * half + 1) * (2 * half + 1);

  std::vector<float> tmpl(n), gx(n), gy(n);
  double gxx = 0, gxy = 0, gyy = 0;
  int k = 0;
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx, ++k) {
      tmpl[k] = I.sample(p.x() + dx, p.y() + dy);
      gx[k] = gxI.sample(p.x() + dx, p.y() + dy);
      gy[k] = gyI.sample(p.x() + dx, p.y() + dy);
      gxx += gx[k] * gx[k];
      gxy += gx[k] * gy[k];
      gyy += gy[k] * gy[k];
    }
  const double det = gxx * gyy - gxy * gxy;
  const double tr = gxx + gyy;
  const double min_eig = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4.0 * det))) / n;
  if (!(min_eig >= params.min_eigenvalue) || det <= 0.0) return {guess, false, false};

  bool converged = false;
  for (int it = 0; it < params.max_iterations; ++it) {
    double bx = 0, by = 0;
    k = 0;
    for (int dy = -half; dy <= half; ++dy)
      for (int dx = -half; dx <= half; ++dx, ++k) {
        const double diff = tmpl[k] - J.sample(guess.x() + dx, guess.y() + dy);
        bx += diff * gx[k];
        by += diff * gy[k];
      }
    const Vec2 step((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
    guess += step;
    if (guess.x() < -half || guess.y() < -half || guess.x() > J.width() - 1 + half || guess.y() > J.height() - 1 + half)
      return {guess, false, false};
    if (step.norm() < params.epsilon) {
      converged = true;
      break;
    }
  }
  return {guess, true, converged};
}

KltResult track_point(const Pyramid& prev, const Pyramid& curr, int top, const Vec2& p, const Vec2& prediction,
                      const KltParams& params) {
  const double top_scale = 1.0 / static_cast<double>(1 << top);
  Vec2 guess = prediction * top_scale;
  for (int level = top; level >= 0; --level) {
    const double s = 1.0 / static_cast<double>(1 << level);
    const LevelResult r = track_level(prev, curr, level, p * s, guess, params);
    if (!r.ok) return {r.guess / s, false};
    if (level == 0) {
      const int w = curr.levels[0].width();
      const int h = curr.levels[0].height();
      const bool inside = r.guess.x() >= 0 && r.guess.y() >= 0 && r.guess.x() <= w - 1 && r.guess.y() <= h - 1;
      return {r.guess, r.converged && inside};
    }
    guess = r.guess * 2.0;
  }
  return {prediction, false};
}

}  // namespace

Pyramid build_pyramid(const GrayImage& image, int max_level) {
  Pyramid pyr;
  FloatImage base(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) base(x, y) = image(x, y);
  pyr.levels.push_back(std::move(base));
  for (int l = 1; l <= max_level; ++l) {
    if (pyr.levels.back().width() < 16 || pyr.levels.back().height() < 16) break;
    pyr.levels.push_back(downsample(pyr.levels.back()));
  }
  pyr.grad_x.resize(pyr.levels.size());
  pyr.grad_y.resize(pyr.levels.size());
  for (size_t l = 0; l < pyr.levels.size(); ++l) scharr(pyr.levels[l], pyr.grad_x[l], pyr.grad_y[l]);
  return pyr;
}

std::vector<KltResult> klt_track(const Pyramid& prev, const Pyramid& curr, std::span<const Vec2> prev_pixels,
                                 std::span<const Vec2> predictions, const KltParams& params) {
  if (prev.empty() || curr.empty() || prev.levels[0].width() != curr.levels[0].width() ||
      prev.levels[0].height() != curr.levels[0].height())
    throw Error(ErrorCode::ImageSizeMismatch, "KLT pyramids differ in size");
  const int top = std::min({params.max_level, prev.max_level(), curr.max_level()});
  std::vector<KltResult> out(prev_pixels.size());
  for (size_t i = 0; i < prev_pixels.size(); ++i) {
    const Vec2 start = i < predictions.size() ? predictions[i] : prev_pixels[i];
    KltResult fwd = track_point(prev, curr, top, prev_pixels[i], start, params);
    if (!fwd.ok) {
      out[i] = fwd;
      continue;
    }
    const KltResult bwd = track_point(curr, prev, top, fwd.pixel, prev_pixels[i], params);
    fwd.ok = bwd.ok && (bwd.pixel - prev_pixels[i]).norm() <= params.fb_threshold;
    out[i] = fwd;
  }
  return out;
}

std::vector<KltResult> klt_track(const GrayImage& prev, const GrayImage& curr, std::span<const Vec2> prev_pixels,
                                 std::span<const Vec2> predictions, const KltParams& params) {
  if (prev.width() != curr.width() || prev.height() != curr.height())
    throw Error(ErrorCode::ImageSizeMismatch, "KLT images differ in size");
  return klt_track(build_pyramid(prev, params.max_level), build_pyramid(curr, params.max_level), prev_pixels,
                   predictions, params);
}

}  // namespace dvio
