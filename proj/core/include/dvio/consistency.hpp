#pragma once

#include <optional>
#include <span>

#include "dvio/feature.hpp"
#include "dvio/geometry.hpp"

namespace dvio {

enum class ConsistencyVerdict { Stable, Dynamic, Recycled };

const char* to_string(ConsistencyVerdict v);

struct ResidualReport {
  FeatureId feature_id = -1;
  double r_k = 0.0;  // pixels
  int m = 0;
  ConsistencyVerdict verdict = ConsistencyVerdict::Stable;
};

/// One observation of a feature together with the body pose of its frame.
struct PosedObservation {
  PoseSE3 world_from_body;
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;  // meters, 0 = unavailable
};

/// Mean distance between the host observation (`obs[0]`) and every later
/// observation transferred into the host camera. A later frame without depth
/// uses `world_point` if given and is skipped otherwise.
/// Throws NoCoObservation when nothing can be transferred, NonPositiveDepth when a
/// transferred point lands behind the host camera.
ResidualReport reprojection_residual(FeatureId id, std::span<const PosedObservation> obs, const PinholeCamera& cam,
                                     const PoseSE3& body_from_camera,
                                     const std::optional<Vec3>& world_point = std::nullopt);

struct ConsistencyConfig {
  double threshold_px = 3.0;
  int recycle_min_observations = 4;
  bool enabled = true;
  void validate() const;
};

/// Per-feature state the check reads and updates.
struct ConsistencyState {
  bool semantic_dynamic = false;  // set by dynamic recognition, never recycled here
  bool mcc_dynamic = false;
};

/// Applies the threshold to one report, updating `state`. Semantic-dynamic
/// features are left untouched and reported as Dynamic.
ConsistencyVerdict check_and_recycle(ResidualReport& report, ConsistencyState& state, const ConsistencyConfig& cfg);

}  // namespace dvio
