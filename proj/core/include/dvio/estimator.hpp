#pragma once

#include <deque>
#include <map>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "dvio/consistency.hpp"
#include "dvio/factors.hpp"
#include "dvio/feature.hpp"
#include "dvio/geometry.hpp"
#include "dvio/imu.hpp"

namespace dvio {

struct FrameState {
  FrameIndex frame_index = -1;
  double timestamp = 0.0;
  PoseSE3 pose;  // body to world
  Vec3 velocity = Vec3::Zero();
  ImuBias bias;
  bool is_keyframe = true;
  /// IMU motion from the previous window frame to this one (absent for the oldest frame).
  std::optional<PreintegratedDelta> delta_from_prev;

  NavState nav() const { return {pose, velocity, bias}; }
  void set_nav(const NavState& s) {
    pose = s.pose;
    velocity = s.velocity;
    bias = s.bias;
  }
};

struct KeyframePolicy {
  double parallax_px = 10.0;
  int count_floor = 50;
};

/// Keyframe iff average stable-feature parallax exceeds the threshold or too few features are tracked.
bool keyframe_decision(double parallax, int tracked_count, const KeyframePolicy& policy = {});

struct EstimatorConfig {
  int window_size = 10;
  bool use_imu = true;  // false: VO mode
  bool use_depth = true;
  double pixel_sigma = 1.0;         // px
  double huber_scale = 1.0;         // px
  double depth_sigma = 0.005;       // depth sigma = depth_sigma * d^2 (m)
  double depth_sigma_floor = 0.002; // m
  KeyframePolicy keyframe;
  int min_stable_features = 10;
  int max_iterations = 10;
  double gradient_tolerance = 1e-8;
  double step_tolerance = 1e-10;
  double initial_damping = 1e-4;
  double min_triangulation_angle_deg = 1.0;
  double bias_reintegrate_accel = 0.1;
  double bias_reintegrate_gyro = 0.01;
  ImuNoise imu_noise;
  Vec3 gravity = gravity_vector();
  ConsistencyConfig consistency;
  bool consistency_check = true;

  void validate() const;
};

/// Per-feature state held while the feature has observations inside the window.
struct WindowFeature {
  FeatureId feature_id = -1;
  std::vector<FeatureObservation> observations;  // window frames only, oldest first
  double inverse_depth = 0.0;                     // anchored at observations.front()
  bool depth_initialized = false;
  ConsistencyState consistency;
  FeatureStatus status = FeatureStatus::New;
  int mcc_flag_count = 0;

  bool dynamic() const { return consistency.semantic_dynamic || consistency.mcc_dynamic; }
};

struct OptimizationSummary {
  int iterations = 0;
  int accepted_steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<double> cost_history;  // cost after every accepted step, starting with the initial cost
  int residual_features = 0;
  bool converged = false;
};

/// Everything a tracking stage produces for one frame.
struct TrackingInput {
  FrameIndex frame_index = 0;
  double timestamp = 0.0;
  std::vector<FeatureObservation> observations;
};

struct FrameResult {
  FrameIndex frame_index = 0;
  double timestamp = 0.0;
  NavState state;
  bool keyframe = true;
  bool optimized = false;
  bool insufficient_constraints = false;
  int usable_features = 0;
  int semantic_dynamic = 0;
  int mcc_dynamic = 0;
  int recycled = 0;
  double parallax = 0.0;
  OptimizationSummary summary;
  double consistency_ms = 0.0;
  double optimization_ms = 0.0;
};

class SlidingWindowEstimator {
 public:
  SlidingWindowEstimator(const EstimatorConfig& cfg, const PinholeCamera& cam, const PoseSE3& body_from_camera);

  /// Sets the state of the first frame. Must be called before the first process_frame.
  void initialize(const NavState& state);
  bool initialized() const { return initialized_; }

  /// Adds a frame, flags dynamic features, optimizes the window and applies the keyframe rule.
  /// `delta` spans the previous processed frame to this one (ignored in VO mode).
  FrameResult process_frame(const TrackingInput& input, const std::unordered_set<FeatureId>& semantic_dynamic,
                            const PreintegratedDelta* delta);

  /// LM over the current window. Throws InsufficientConstraints when the window is under-determined.
  OptimizationSummary optimize();

  const std::deque<FrameState>& frames() const { return frames_; }
  std::deque<FrameState>& mutable_frames() { return frames_; }
  const std::map<FeatureId, WindowFeature>& features() const { return features_; }
  std::map<FeatureId, WindowFeature>& mutable_features() { return features_; }
  const std::vector<ResidualReport>& last_consistency_reports() const { return reports_; }
  const EstimatorConfig& config() const { return cfg_; }
  const PinholeCamera& camera() const { return cam_; }
  const PoseSE3& body_from_camera() const { return body_from_camera_; }

  /// Total cost of the current window (same value the optimizer reports).
  double evaluate_cost() const;
  /// Inverse depth initialization for features that lack it; returns the number initialized.
  int initialize_depths();

  /// Features flagged dynamic by either check at any time.
  const std::unordered_set<FeatureId>& flagged_semantic() const { return flagged_semantic_; }
  const std::unordered_set<FeatureId>& flagged_mcc() const { return flagged_mcc_; }

 private:
  struct Linearization;

  void make_room();
  void remove_frame(size_t slot);
  void add_observations(const TrackingInput& input);
  void run_consistency_check(bool newest_is_prediction);
  double parallax_to_last_keyframe(int* tracked) const;
  bool usable(const WindowFeature& f) const;
  std::optional<Vec3> world_point(const WindowFeature& f) const;
  int slot_of(FrameIndex index) const;
  void refresh_preintegration();
  double cost_of(const std::vector<NavState>& states, const std::vector<double>& inv_depths,
                 const std::vector<const WindowFeature*>& feats) const;

  EstimatorConfig cfg_;
  PinholeCamera cam_;
  PoseSE3 body_from_camera_;
  bool initialized_ = false;
  NavState initial_state_;
  std::deque<FrameState> frames_;
  std::map<FeatureId, WindowFeature> features_;
  std::vector<ResidualReport> reports_;
  std::unordered_set<FeatureId> flagged_semantic_;
  std::unordered_set<FeatureId> flagged_mcc_;
};

/// IMU-rate pose stream from the latest optimized state. `samples` starts at the
/// state's timestamp; entry k is the pose at samples[k], so entry 0 is the state's own pose.
std::vector<std::pair<double, PoseSE3>> propagate_imu_rate(const NavState& state, std::span<const ImuSample> samples,
                                                           const Vec3& gravity = gravity_vector());

}  // namespace dvio
