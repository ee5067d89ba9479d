#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dvio::oracle {

GrayImage random_image(int width, int height, unsigned seed) {
  std::mt19937 rng(seed);
  GrayImage img(width, height);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(rng() & 0xFF);
  return img;
}

GrayImage blob_texture(int width, int height, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, width), uy(0.0, height), ur(3.0, 9.0), ua(-80.0, 80.0);
  struct Blob {
    double x, y, r, a;
  };
  std::vector<Blob> blobs;
  const int n = width * height / 60;
  for (int i = 0; i < n; ++i) blobs.push_back({ux(rng), uy(rng), ur(rng), ua(rng)});
  std::vector<double> acc(static_cast<size_t>(width) * height, 128.0);
  for (const auto& b : blobs) {
    const int x0 = std::max(0, static_cast<int>(b.x - 3 * b.r));
    const int x1 = std::min(width - 1, static_cast<int>(b.x + 3 * b.r));
    const int y0 = std::max(0, static_cast<int>(b.y - 3 * b.r));
    const int y1 = std::min(height - 1, static_cast<int>(b.y + 3 * b.r));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d2 = ((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y)) / (b.r * b.r);
        acc[static_cast<size_t>(y) * width + x] += b.a * std::exp(-d2);
      }
  }
  GrayImage img(width, height);
  for (size_t i = 0; i < acc.size(); ++i)
    img.pixels()[i] = static_cast<std::uint8_t>(std::clamp(std::lround(acc[i]), 0L, 255L));
  return img;
}

GrayImage shifted(const GrayImage& img, int dx, int dy) {
  GrayImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out(x, y) = img(std::clamp(x - dx, 0, img.width() - 1), std::clamp(y - dy, 0, img.height() - 1));
  return out;
}

namespace {

// Radius-3 Bresenham circle, clockwise from the top.
constexpr int kRingX[16] = {0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1};
constexpr int kRingY[16] = {-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3};

}  // namespace

bool segment_test(const GrayImage& img, int x, int y, int t) {
  const int p = img(x, y);
  for (int start = 0; start < 16; ++start) {
    bool all_bright = true;
    bool all_dark = true;
    for (int k = 0; k < 9; ++k) {
      const int i = (start + k) % 16;
      const int v = img(x + kRingX[i], y + kRingY[i]);
      all_bright = all_bright && v > p + t;
      all_dark = all_dark && v < p - t;
    }
    if (all_bright || all_dark) return true;
  }
  return false;
}

std::set<std::pair<int, int>> brute_force_corners(const GrayImage& img, int t) {
  std::set<std::pair<int, int>> out;
  for (int y = 3; y < img.height() - 3; ++y)
    for (int x = 3; x < img.width() - 3; ++x)
      if (segment_test(img, x, y, t)) out.insert({x, y});
  return out;
}

double dense_transfer_residual(const Mat4& world_from_body_i, const Mat4& world_from_body_j,
                               const Mat4& body_from_camera, double fx, double fy, double cx, double cy,
                               const Vec2& u_i, const Vec3& p_cj) {
  Eigen::Vector4d h(p_cj.x(), p_cj.y(), p_cj.z(), 1.0);
  const Mat4 chain = body_from_camera.inverse() * world_from_body_i.inverse() * world_from_body_j * body_from_camera;
  const Eigen::Vector4d q = chain * h;
  const Vec2 proj(fx * q.x() / q.z() + cx, fy * q.y() / q.z() + cy);
  return (u_i - proj).norm();
}

SmoothImuSignal SmoothImuSignal::random(unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> f(0.2, 1.5);
  SmoothImuSignal s;
  s.w0 = Vec3(n(rng), n(rng), n(rng)) * 0.2;
  s.w1 = Vec3(n(rng), n(rng), n(rng)) * 0.3;
  s.a0 = Vec3(n(rng), n(rng), 9.81 + n(rng));
  s.a1 = Vec3(n(rng), n(rng), n(rng)) * 1.0;
  s.f1 = f(rng);
  s.f2 = f(rng);
  return s;
}

ImuSample SmoothImuSignal::at(double t) const {
  return {t, w0 + w1 * std::sin(2.0 * M_PI * f1 * t), a0 + a1 * std::cos(2.0 * M_PI * f2 * t)};
}

std::vector<ImuSample> SmoothImuSignal::sample(double t0, double t1, double rate) const {
  std::vector<ImuSample> out;
  const int n = static_cast<int>(std::round((t1 - t0) * rate));
  for (int k = 0; k <= n; ++k) out.push_back(at(t0 + k / rate));
  return out;
}

namespace {

struct State {
  Quat q;
  Vec3 v, p;
};

struct Deriv {
  Vec3 w;  // body rate
  Vec3 dv, dp;
};

Quat rotate_by(const Quat& q, const Vec3& w, double h) {
  const double a = w.norm() * h;
  if (a < 1e-15) return q;
  return (q * Quat(Eigen::AngleAxisd(a, w.normalized()))).normalized();
}

}  // namespace

FineDelta fine_integrate(std::span<const ImuSample> samples, const ImuBias& bias, int substeps) {
  State s{Quat::Identity(), Vec3::Zero(), Vec3::Zero()};
  auto signal = [&](size_t k, double tau) {
    const ImuSample& a = samples[k];
    const ImuSample& b = samples[k + 1];
    const double w = tau / (b.timestamp - a.timestamp);
    return std::make_pair(Vec3((1 - w) * a.gyro + w * b.gyro - bias.gyro),
                          Vec3((1 - w) * a.accel + w * b.accel - bias.accel));
  };
  for (size_t k = 0; k + 1 < samples.size(); ++k) {
    const double dt = samples[k + 1].timestamp - samples[k].timestamp;
    const double h = dt / substeps;
    for (int i = 0; i < substeps; ++i) {
      const double t = i * h;
      // RK4 with the rotation advanced along the same stages.
      auto f = [&](const State& st, double tau) {
        const auto [w, a] = signal(k, tau);
        return Deriv{w, st.q * a, st.v};
      };
      auto advance = [&](const State& st, const Deriv& d, double step) {
        return State{rotate_by(st.q, d.w, step), st.v + d.dv * step, st.p + d.dp * step};
      };
      const Deriv k1 = f(s, t);
      const Deriv k2 = f(advance(s, k1, h / 2), t + h / 2);
      const Deriv k3 = f(advance(s, k2, h / 2), t + h / 2);
      const Deriv k4 = f(advance(s, k3, h), t + h);
      const Vec3 w = (k1.w + 2 * k2.w + 2 * k3.w + k4.w) / 6.0;
      s.q = rotate_by(s.q, w, h);
      s.v += (k1.dv + 2 * k2.dv + 2 * k3.dv + k4.dv) * (h / 6.0);
      s.p += (k1.dp + 2 * k2.dp + 2 * k3.dp + k4.dp) * (h / 6.0);
    }
  }
  return {s.q, s.v, s.p};
}

PoseSE3 random_pose(unsigned seed, double max_angle, double max_t) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
  const Vec3 dir = Vec3(n(rng), n(rng), n(rng)).normalized();
  return PoseSE3(Quat(Eigen::AngleAxisd(u(rng) * max_angle, axis)), dir * (u(rng) * max_t));
}

}  // namespace dvio::oracle
