#include "dvio/consistency.hpp"

#include "dvio/error.hpp"

namespace dvio {

const char* to_string(ConsistencyVerdict v) {
  switch (v) {
    case ConsistencyVerdict::Stable: return "stable";
    case ConsistencyVerdict::Dynamic: return "dynamic";
    case ConsistencyVerdict::Recycled: return "recycled";
  }
  return "unknown";
}

ResidualReport reprojection_residual(FeatureId id, std::span<const PosedObservation> obs, const PinholeCamera& cam,
                                     const PoseSE3& body_from_camera, const std::optional<Vec3>& world_point) {
  ResidualReport report;
  report.feature_id = id;
  if (obs.size() < 2) throw Error(ErrorCode::NoCoObservation, "feature has no co-observing frame");
  const PoseSE3 camera_from_body = body_from_camera.inverse();
  const PoseSE3 host_from_world = camera_from_body * obs[0].world_from_body.inverse();
  double sum = 0.0;
  for (size_t j = 1; j < obs.size(); ++j) {
    Vec3 p_world;
    if (obs[j].depth > 0.0) {
      const Vec3 p_cj = cam.unproject(obs[j].pixel, obs[j].depth);
      p_world = obs[j].world_from_body * (body_from_camera * p_cj);
    } else if (world_point) {
      p_world = *world_point;
    } else {
      continue;
    }
    const Vec2 u = cam.project(host_from_world * p_world);
    sum += (obs[0].pixel - u).norm();
    ++report.m;
  }
  if (report.m == 0) throw Error(ErrorCode::NoCoObservation, "no co-observation has a usable 3D point");
  report.r_k = sum / report.m;
  return report;
}

void ConsistencyConfig::validate() const {
  if (!(threshold_px > 0.0)) throw Error(ErrorCode::ConfigInvalid, "consistency.threshold_px must be > 0");
  if (recycle_min_observations < 1)
    throw Error(ErrorCode::ConfigInvalid, "consistency.recycle_min_observations must be >= 1");
}

ConsistencyVerdict check_and_recycle(ResidualReport& report, ConsistencyState& state, const ConsistencyConfig& cfg) {
  if (state.semantic_dynamic) {
    report.verdict = ConsistencyVerdict::Dynamic;
  } else if (report.r_k > cfg.threshold_px) {
    state.mcc_dynamic = true;
    report.verdict = ConsistencyVerdict::Dynamic;
  } else if (state.mcc_dynamic) {
    if (report.m >= cfg.recycle_min_observations) {
      state.mcc_dynamic = false;
      report.verdict = ConsistencyVerdict::Recycled;
    } else {
      report.verdict = ConsistencyVerdict::Dynamic;
    }
  } else {
    report.verdict = ConsistencyVerdict::Stable;
  }
  return report.verdict;
}

}  // namespace dvio
