#pragma once

// Scene and estimator setups shared by several test files.

#include <unordered_set>
#include <vector>

#include "dvio/estimator.hpp"
#include "dvio/scene.hpp"

namespace dvio::fixture {

/// Static preset with every noise source and bias switched off.
inline SceneSpec noise_free(SceneSpec spec) {
  spec.noise.pixel_sigma = 0.0;
  spec.noise.depth_sigma = 0.0;
  spec.noise.depth_dropout = 0.0;
  spec.noise.imu = ImuNoise{0.0, 0.0, 0.0, 0.0};
  spec.noise.accel_bias = Vec3::Zero();
  spec.noise.gyro_bias = Vec3::Zero();
  spec.noise.bias_walk = false;
  spec.detection.miss_probability = 0.0;
  spec.detection.box_jitter = 0.0;
  spec.detection.blackouts.clear();
  return spec;
}

/// Feeds `frames` synthetic frames to `est`, starting from the ground-truth state.
inline std::vector<FrameResult> drive(SlidingWindowEstimator& est, const Scene& scene, int frames,
                                      bool use_imu = true) {
  SyntheticFrontend fe({}, scene);
  std::vector<FrameResult> out;
  est.initialize(scene.frames().front().truth);
  for (int f = 0; f < frames; ++f) {
    const SyntheticFrame sf = fe.process(f);
    TrackingInput in{f, sf.output.timestamp, sf.output.observations};
    std::optional<PreintegratedDelta> delta;
    if (use_imu && f > 0) {
      const double t0 = scene.frames()[static_cast<size_t>(f - 1)].timestamp;
      delta = PreintegratedDelta::from_samples(slice_imu(scene.imu(), t0, sf.output.timestamp));
    }
    out.push_back(est.process_frame(in, {}, delta ? &*delta : nullptr));
  }
  return out;
}

/// Puts every window frame and initialized feature depth at ground truth.
inline void set_to_truth(SlidingWindowEstimator& est, const Scene& scene) {
  for (auto& fs : est.mutable_frames()) fs.set_nav(scene.frames()[static_cast<size_t>(fs.frame_index)].truth);
  for (auto& [id, f] : est.mutable_features())
    if (f.depth_initialized && f.observations.front().depth > 0.0) f.inverse_depth = 1.0 / f.observations.front().depth;
}

}  // namespace dvio::fixture
