#pragma once

#include <functional>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "dvio/fast.hpp"
#include "dvio/feature.hpp"
#include "dvio/geometry.hpp"
#include "dvio/image.hpp"
#include "dvio/imu.hpp"
#include "dvio/klt.hpp"

namespace dvio {

struct DetectionGridConfig {
  int rows = 7;
  int cols = 8;
  int padding = 3;
  int max_features = 130;
  int mask_radius = 15;
  int fast_threshold = 20;

  void validate() const;
  /// A cell holding fewer tracked features than this is deficient.
  int cell_target() const { return (max_features + rows * cols - 1) / (rows * cols); }
};

/// Per-pixel "no new feature here" flags.
class CircularMask {
 public:
  CircularMask() = default;
  CircularMask(int width, int height) : width_(width), height_(height), blocked_(static_cast<size_t>(width) * height, 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool blocked(int x, int y) const { return blocked_[static_cast<size_t>(y) * width_ + x] != 0; }
  bool blocked(const Vec2& p) const;
  /// Blocks every pixel within Euclidean distance <= radius of `center`.
  void block_disk(const Vec2& center, double radius);
  std::size_t blocked_count() const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> blocked_;
};

CircularMask build_mask(int width, int height, std::span<const Vec2> stable, std::span<const Vec2> unstable,
                        const DetectionGridConfig& cfg);

using CellIndex = int;
using SkipSet = std::set<CellIndex>;

PixelRect grid_cell(int width, int height, const DetectionGridConfig& cfg, CellIndex cell);
CellIndex cell_of(int width, int height, const DetectionGridConfig& cfg, const Vec2& pixel);

struct NewFeature {
  Vec2 pixel;
  int score = 0;
  CellIndex cell = 0;
};

struct GridDetection {
  std::vector<NewFeature> features;
  SkipSet next_skip;
  int cells_scanned = 0;
  bool executed = false;
};

/// Produces sorted (candidate_before) corner candidates for one cell given the shared mask.
using CandidateSource = std::function<std::vector<CornerCandidate>(const PixelRect& cell, const CircularMask& mask)>;

/// Grid selection shared by the image front end and the synthetic provider.
/// Deficient cells not in `skip` are scanned in parallel; picks are merged in cell order,
/// each pick blocking a mask_radius disk. `enforce_spacing` = false disables the disks
/// (circular-mask ablation), leaving only exact-duplicate suppression.
GridDetection select_new_features(int width, int height, const CandidateSource& source, const CircularMask& mask,
                                  std::span<const Vec2> tracked, const DetectionGridConfig& cfg, const SkipSet& skip,
                                  bool enforce_spacing = true);

/// FAST-based grid detection on an image.
GridDetection detect_new_features(const GrayImage& image, const CircularMask& mask, std::span<const Vec2> tracked,
                                  const DetectionGridConfig& cfg, const SkipSet& skip, bool enforce_spacing = true);

/// Reference: FAST over the whole frame, then global greedy selection of `needed` features.
std::vector<NewFeature> detect_full_frame(const GrayImage& image, const CircularMask& mask, int needed,
                                          const DetectionGridConfig& cfg);

/// Body translation over the frame interval, expressed in the earlier body frame.
struct MotionPrior {
  Vec3 translation_body = Vec3::Zero();
};

struct FeaturePrediction {
  Vec2 pixel;
  bool in_bounds = true;
};

/// Pixel predictions from the inter-frame rotation; translation is applied when a motion
/// prior is given and the feature has depth.
std::vector<FeaturePrediction> predict_features(std::span<const Vec2> pixels, std::span<const double> depths,
                                                const Quat& body_rotation, const PinholeCamera& cam,
                                                const PoseSE3& body_from_camera,
                                                const std::optional<MotionPrior>& prior = std::nullopt);

std::vector<FeaturePrediction> predict_features(std::span<const Vec2> pixels, std::span<const double> depths,
                                                const PreintegratedDelta& delta, const ImuBias& bias,
                                                const PinholeCamera& cam, const PoseSE3& body_from_camera,
                                                const std::optional<MotionPrior>& prior = std::nullopt);

struct FrontendConfig {
  DetectionGridConfig grid;
  KltParams klt;
  bool use_imu_prediction = true;
  int pyramid_levels_with_prediction = 1;
  int pyramid_levels_without_prediction = 3;
  bool circular_mask = true;
};

struct FrontendOutput {
  FrameIndex frame_index = 0;
  double timestamp = 0.0;
  std::vector<FeatureObservation> observations;
  std::vector<int> track_lengths;        // parallel to observations
  std::vector<Vec2> unstable;            // locations of failed tracks in this frame
  int tracked = 0;                       // successfully tracked from the previous frame
  int detected = 0;                      // newly added this frame
  int cells_scanned = 0;
  double tracking_ms = 0.0;
  double detection_ms = 0.0;
};

/// KLT tracking + masked grid FAST detection on real images.
class ImageFrontend {
 public:
  ImageFrontend(const FrontendConfig& cfg, const PinholeCamera& cam, const PoseSE3& body_from_camera);

  /// `delta` spans the previous frame to this one (nullptr in VO mode or for the first frame).
  FrontendOutput process(FrameIndex frame_index, double timestamp, const GrayImage& image, const DepthImage* depth,
                         const PreintegratedDelta* delta);

 private:
  struct Track {
    FeatureId id;
    Vec2 pixel;
    double depth;
    int length;
  };

  FrontendConfig cfg_;
  PinholeCamera cam_;
  PoseSE3 body_from_camera_;
  Pyramid prev_pyramid_;
  std::vector<Track> tracks_;
  SkipSet skip_;
  FeatureId next_id_ = 0;
};

}  // namespace dvio
