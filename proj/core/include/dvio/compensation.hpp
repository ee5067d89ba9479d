#pragma once

#include <span>
#include <vector>

#include "dvio/recognition.hpp"

namespace dvio {

struct TrackedObject {
  int object_id = 0;
  std::string class_label;
  DetectionBox box;                         // last detected or compensated box, unclamped
  Vec2 velocity_smoothed = Vec2::Zero();    // pixels per frame
  Vec2 last_detected_center = Vec2::Zero();
  FrameIndex last_detected_frame = -1;
  int missed_count = 0;
  int detections = 0;
};

struct CompensationConfig {
  int miss_limit = 5;
  double iou_threshold = 0.3;
  /// Seed the smoothed velocity with the first measured velocity instead of zero.
  bool seed_velocity = true;
  void validate() const;
};

/// Objects seen by the detector, carried through detector dropouts by
/// constant-velocity box extrapolation.
class ObjectRegistry {
 public:
  explicit ObjectRegistry(CompensationConfig cfg = {});

  /// Matches `detections` (all from `frame`) to known objects and updates their velocity.
  /// Returns the object id assigned to each detection.
  std::vector<int> associate_and_update(std::span<const DetectionBox> detections, FrameIndex frame);

  /// Advances every object not detected at `frame` by its smoothed velocity and
  /// returns the compensated boxes clamped to the image. Objects missed more than
  /// miss_limit times in a row are dropped.
  std::vector<DetectionBox> predict_missed(FrameIndex frame, int width, int height);

  const std::vector<TrackedObject>& objects() const { return objects_; }
  const CompensationConfig& config() const { return cfg_; }
  void clear() { objects_.clear(); }

 private:
  CompensationConfig cfg_;
  std::vector<TrackedObject> objects_;
  int next_id_ = 0;
};

}  // namespace dvio
