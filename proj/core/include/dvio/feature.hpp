#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "dvio/geometry.hpp"

namespace dvio {

using FeatureId = std::int64_t;
using FrameIndex = std::int64_t;

/// Lifecycle of a tracked landmark:
///   New -> Stable (tracked for >= 2 frames) -> Unstable (tracking lost)
///   Stable -> Dynamic (semantic or residual check) -> Recycled (residual check) -> Stable
enum class FeatureStatus { New, Stable, Unstable, Dynamic, Recycled };

std::string_view to_string(FeatureStatus s);

/// One pixel observation of a feature. depth == 0 means no depth measurement.
struct FeatureObservation {
  FeatureId feature_id = -1;
  Vec2 pixel = Vec2::Zero();
  FrameIndex frame_index = -1;
  double depth = 0.0;
};

struct FeatureTrack {
  FeatureId feature_id = -1;
  std::vector<FeatureObservation> observations;  // ordered by frame_index
  FeatureStatus status = FeatureStatus::New;

  int track_length() const { return static_cast<int>(observations.size()); }
  const FeatureObservation& latest() const { return observations.back(); }
  /// Appends an observation and promotes New -> Stable once seen twice.
  void add(const FeatureObservation& obs);
};

/// Whether a status lets the feature constrain the pose estimate.
inline bool usable_for_estimation(FeatureStatus s) {
  return s == FeatureStatus::New || s == FeatureStatus::Stable || s == FeatureStatus::Recycled;
}

}  // namespace dvio
