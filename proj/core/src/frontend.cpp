#include "dvio/frontend.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <tbb/parallel_for.h>

#include "dvio/error.hpp"

namespace dvio {

std::string_view to_string(FeatureStatus s) {
  switch (s) {
    case FeatureStatus::New: return "new";
    case FeatureStatus::Stable: return "stable";
    case FeatureStatus::Unstable: return "unstable";
    case FeatureStatus::Dynamic: return "dynamic";
    case FeatureStatus::Recycled: return "recycled";
  }
  return "unknown";
}

void FeatureTrack::add(const FeatureObservation& obs) {
  observations.push_back(obs);
  if (status == FeatureStatus::New && observations.size() >= 2) status = FeatureStatus::Stable;
}

void DetectionGridConfig::validate() const {
  if (rows < 1 || cols < 1) throw Error(ErrorCode::ConfigInvalid, "grid rows/cols must be >= 1");
  if (padding < kFastRadius) throw Error(ErrorCode::ConfigInvalid, "grid padding must cover the FAST ring (>= 3)");
  if (max_features <= 0) throw Error(ErrorCode::ConfigInvalid, "max_features must be > 0");
  if (mask_radius < 0) throw Error(ErrorCode::ConfigInvalid, "mask_radius must be >= 0");
}

bool CircularMask::blocked(const Vec2& p) const {
  const long x = std::lround(p.x());
  const long y = std::lround(p.y());
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return true;
  return blocked(static_cast<int>(x), static_cast<int>(y));
}

void CircularMask::block_disk(const Vec2& c, double radius) {
  const int x0 = std::max(0, static_cast<int>(std::floor(c.x() - radius)));
  const int x1 = std::min(width_ - 1, static_cast<int>(std::ceil(c.x() + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(c.y() - radius)));
  const int y1 = std::min(height_ - 1, static_cast<int>(std::ceil(c.y() + radius)));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y) {
    const double dy = y - c.y();
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - c.x();
      if (dx * dx + dy * dy <= r2) blocked_[static_cast<size_t>(y) * width_ + x] = 1;
    }
  }
}

std::size_t CircularMask::blocked_count() const {
  return static_cast<std::size_t>(std::count(blocked_.begin(), blocked_.end(), std::uint8_t{1}));
}

CircularMask build_mask(int width, int height, std::span<const Vec2> stable, std::span<const Vec2> unstable,
                        const DetectionGridConfig& cfg) {
  CircularMask mask(width, height);
  for (const auto& p : stable) mask.block_disk(p, cfg.mask_radius);
  for (const auto& p : unstable) mask.block_disk(p, cfg.mask_radius);
  return mask;
}

PixelRect grid_cell(int width, int height, const DetectionGridConfig& cfg, CellIndex cell) {
  const int r = cell / cfg.cols;
  const int c = cell % cfg.cols;
  return {c * width / cfg.cols, r * height / cfg.rows, (c + 1) * width / cfg.cols, (r + 1) * height / cfg.rows};
}

CellIndex cell_of(int width, int height, const DetectionGridConfig& cfg, const Vec2& p) {
  const int c = std::clamp(static_cast<int>(std::floor(p.x() * cfg.cols / width)), 0, cfg.cols - 1);
  const int r = std::clamp(static_cast<int>(std::floor(p.y() * cfg.rows / height)), 0, cfg.rows - 1);
  // Match grid_cell's integer boundaries exactly.
  int cc = c;
  while (cc > 0 && p.x() < cc * width / cfg.cols) --cc;
  while (cc + 1 < cfg.cols && p.x() >= (cc + 1) * width / cfg.cols) ++cc;
  int rr = r;
  while (rr > 0 && p.y() < rr * height / cfg.rows) --rr;
  while (rr + 1 < cfg.rows && p.y() >= (rr + 1) * height / cfg.rows) ++rr;
  return rr * cfg.cols + cc;
}

GridDetection select_new_features(int width, int height, const CandidateSource& source, const CircularMask& mask,
                                  std::span<const Vec2> tracked, const DetectionGridConfig& cfg, const SkipSet& skip,
                                  bool enforce_spacing) {
  GridDetection out;
  const int needed = cfg.max_features - static_cast<int>(tracked.size());
  if (needed <= 0) {
    out.next_skip = skip;  // no detection frame: skip entries wait for the next one
    return out;
  }
  out.executed = true;

  const int cells = cfg.rows * cfg.cols;
  std::vector<int> counts(static_cast<size_t>(cells), 0);
  for (const auto& p : tracked) ++counts[static_cast<size_t>(cell_of(width, height, cfg, p))];

  std::vector<CellIndex> deficient;
  for (CellIndex c = 0; c < cells; ++c)
    if (counts[static_cast<size_t>(c)] < cfg.cell_target() && !skip.contains(c)) deficient.push_back(c);
  out.cells_scanned = static_cast<int>(deficient.size());
  if (deficient.empty()) return out;

  const int quota = (needed + static_cast<int>(deficient.size()) - 1) / static_cast<int>(deficient.size());

  std::vector<std::vector<CornerCandidate>> candidates(deficient.size());
  tbb::parallel_for(std::size_t{0}, deficient.size(), [&](std::size_t i) {
    candidates[i] = source(grid_cell(width, height, cfg, deficient[i]), mask);
  });

  // Deterministic merge in cell order; picks block their neighbourhood for later picks.
  CircularMask working = mask;
  for (std::size_t i = 0; i < deficient.size(); ++i) {
    const auto& cand = candidates[i];
    if (cand.empty()) {
      out.next_skip.insert(deficient[i]);
      continue;
    }
    int picked = 0;
    for (const auto& c : cand) {
      if (picked >= quota) break;
      if (working.blocked(c.x, c.y)) continue;
      const Vec2 px(c.x, c.y);
      out.features.push_back({px, c.score, deficient[i]});
      working.block_disk(px, enforce_spacing ? cfg.mask_radius : 0.0);
      ++picked;
    }
  }
  return out;
}

GridDetection detect_new_features(const GrayImage& image, const CircularMask& mask, std::span<const Vec2> tracked,
                                  const DetectionGridConfig& cfg, const SkipSet& skip, bool enforce_spacing) {
  const int threshold = cfg.fast_threshold;
  CandidateSource fast = [&image, threshold](const PixelRect& cell, const CircularMask& m) {
    return fast_detect_cell(image, cell, &m, threshold);
  };
  return select_new_features(image.width(), image.height(), fast, mask, tracked, cfg, skip, enforce_spacing);
}

std::vector<NewFeature> detect_full_frame(const GrayImage& image, const CircularMask& mask, int needed,
                                          const DetectionGridConfig& cfg) {
  std::vector<NewFeature> out;
  if (needed <= 0) return out;
  const auto cand = fast_detect_cell(image, {0, 0, image.width(), image.height()}, &mask, cfg.fast_threshold);
  CircularMask working = mask;
  for (const auto& c : cand) {
    if (static_cast<int>(out.size()) >= needed) break;
    if (working.blocked(c.x, c.y)) continue;
    const Vec2 px(c.x, c.y);
    out.push_back({px, c.score, cell_of(image.width(), image.height(), cfg, px)});
    working.block_disk(px, cfg.mask_radius);
  }
  return out;
}

std::vector<FeaturePrediction> predict_features(std::span<const Vec2> pixels, std::span<const double> depths,
                                                const Quat& body_rotation, const PinholeCamera& cam,
                                                const PoseSE3& body_from_camera, const std::optional<MotionPrior>& prior) {
  const Vec3 t_body = prior ? prior->translation_body : Vec3::Zero();
  // Pose of the current camera in the previous camera frame.
  const PoseSE3 body_motion(body_rotation, t_body);
  const PoseSE3 cam_motion = body_from_camera.inverse() * body_motion * body_from_camera;
  const PoseSE3 prev_to_curr = cam_motion.inverse();
  const Mat3 r_curr_prev = prev_to_curr.rotation_matrix();

  std::vector<FeaturePrediction> out(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) {
    const double d = i < depths.size() ? depths[i] : 0.0;
    Vec3 p;
    if (prior && d > 0.0)
      p = prev_to_curr * cam.unproject(pixels[i], d);
    else
      p = r_curr_prev * cam.normalized(pixels[i]);
    if (p.z() <= 1e-9) {
      out[i] = {pixels[i], false};
      continue;
    }
    const Vec2 uv = cam.project(p);
    out[i] = {uv, cam.in_image(uv)};
    if (!out[i].in_bounds) out[i].pixel = pixels[i];
  }
  return out;
}

std::vector<FeaturePrediction> predict_features(std::span<const Vec2> pixels, std::span<const double> depths,
                                                const PreintegratedDelta& delta, const ImuBias& bias,
                                                const PinholeCamera& cam, const PoseSE3& body_from_camera,
                                                const std::optional<MotionPrior>& prior) {
  return predict_features(pixels, depths, delta.corrected(bias).rotation, cam, body_from_camera, prior);
}

ImageFrontend::ImageFrontend(const FrontendConfig& cfg, const PinholeCamera& cam, const PoseSE3& body_from_camera)
    : cfg_(cfg), cam_(cam), body_from_camera_(body_from_camera) {
  cfg_.grid.validate();
}

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

FrontendOutput ImageFrontend::process(FrameIndex frame_index, double timestamp, const GrayImage& image,
                                      const DepthImage* depth, const PreintegratedDelta* delta) {
  FrontendOutput out;
  out.frame_index = frame_index;
  out.timestamp = timestamp;

  const auto t_track = std::chrono::steady_clock::now();
  const bool predict = cfg_.use_imu_prediction && delta != nullptr && !delta->empty();
  const int levels = predict ? cfg_.pyramid_levels_with_prediction : cfg_.pyramid_levels_without_prediction;
  Pyramid curr = build_pyramid(image, std::max(cfg_.pyramid_levels_with_prediction, cfg_.pyramid_levels_without_prediction));

  if (!tracks_.empty() && !prev_pyramid_.empty()) {
    std::vector<Vec2> prev_px;
    std::vector<double> prev_depth;
    for (const auto& t : tracks_) {
      prev_px.push_back(t.pixel);
      prev_depth.push_back(t.depth);
    }
    std::vector<Vec2> guesses = prev_px;
    if (predict) {
      const auto pred = predict_features(prev_px, prev_depth, *delta, delta->bias_ref(), cam_, body_from_camera_);
      for (size_t i = 0; i < pred.size(); ++i) guesses[i] = pred[i].pixel;
    }
    KltParams params = cfg_.klt;
    params.max_level = levels;
    const auto res = klt_track(prev_pyramid_, curr, prev_px, guesses, params);

    std::vector<Track> kept;
    for (size_t i = 0; i < tracks_.size(); ++i) {
      if (res[i].ok && cam_.in_image(res[i].pixel)) {
        Track t = tracks_[i];
        t.pixel = res[i].pixel;
        kept.push_back(t);
      } else {
        const Vec2 where = cam_.in_image(guesses[i]) ? guesses[i] : prev_px[i];
        out.unstable.push_back(where);
      }
    }
    tracks_ = std::move(kept);
  }
  out.tracked = static_cast<int>(tracks_.size());

  // Longer-lived tracks win when two tracks come closer than the mask radius.
  std::vector<Vec2> kept_px;
  if (cfg_.circular_mask) {
    std::stable_sort(tracks_.begin(), tracks_.end(), [](const Track& a, const Track& b) { return a.length > b.length; });
    CircularMask thin(image.width(), image.height());
    std::vector<Track> spaced;
    for (const auto& t : tracks_) {
      if (thin.blocked(t.pixel)) continue;
      thin.block_disk(t.pixel, cfg_.grid.mask_radius);
      spaced.push_back(t);
    }
    tracks_ = std::move(spaced);
  }
  for (const auto& t : tracks_) kept_px.push_back(t.pixel);
  out.tracking_ms = elapsed_ms(t_track);

  const auto t_detect = std::chrono::steady_clock::now();
  const CircularMask mask = cfg_.circular_mask
                                ? build_mask(image.width(), image.height(), kept_px, out.unstable, cfg_.grid)
                                : CircularMask(image.width(), image.height());
  const GridDetection det = detect_new_features(image, mask, kept_px, cfg_.grid, skip_, cfg_.circular_mask);
  skip_ = det.next_skip;
  out.cells_scanned = det.cells_scanned;
  for (const auto& f : det.features) tracks_.push_back({next_id_++, f.pixel, 0.0, 0});
  out.detected = static_cast<int>(det.features.size());
  out.detection_ms = elapsed_ms(t_detect);

  for (auto& t : tracks_) {
    ++t.length;
    t.depth = depth ? depth->median3x3(static_cast<int>(std::lround(t.pixel.x())), static_cast<int>(std::lround(t.pixel.y())))
                    : 0.0;
  }
  for (auto& t : tracks_) {
    out.observations.push_back({t.id, t.pixel, frame_index, t.depth});
    out.track_lengths.push_back(t.length);
  }
  prev_pyramid_ = std::move(curr);
  return out;
}

}  // namespace dvio
