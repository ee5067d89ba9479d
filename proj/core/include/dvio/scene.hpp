#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dvio/frontend.hpp"
#include "dvio/geometry.hpp"
#include "dvio/image.hpp"
#include "dvio/imu.hpp"
#include "dvio/recognition.hpp"

namespace dvio {

/// Natural cubic spline (C2); extended linearly outside the knots, which keeps it C2.
class CubicSpline {
 public:
  CubicSpline() = default;
  CubicSpline(std::vector<double> knots, std::vector<double> values);

  double value(double t) const;
  double derivative(double t) const;
  double second_derivative(double t) const;

 private:
  std::vector<double> t_;
  std::vector<double> y_;
  std::vector<double> m_;  // second derivatives at the knots
  int segment(double t) const;
};

/// Body trajectory through waypoints (t, x, y, z, yaw, pitch, roll); rotation is Rz(yaw) Ry(pitch) Rx(roll).
class BodyTrajectory {
 public:
  BodyTrajectory() = default;
  explicit BodyTrajectory(const std::vector<std::array<double, 7>>& waypoints);

  Vec3 position(double t) const;
  Vec3 velocity(double t) const;
  Vec3 acceleration(double t) const;
  Quat rotation(double t) const;
  Vec3 angular_velocity_body(double t) const;

 private:
  std::array<CubicSpline, 6> s_;
};

struct SceneObject {
  std::string class_label = "person";
  Vec3 size = Vec3(0.5, 0.4, 1.7);  // axis-aligned extents (m)
  int landmarks = 60;
  bool boxed = true;       // the detector reports it
  bool is_static = false;  // part of the static world (furniture)
  std::vector<std::array<double, 4>> waypoints;  // (t, x, y, z) of the box center, t relative to start
};

struct SceneNoise {
  double pixel_sigma = 0.5;      // px
  double depth_sigma = 0.002;    // depth noise sigma = depth_sigma * d^2 (m)
  double depth_dropout = 0.0;    // probability a depth reading is missing
  ImuNoise imu;
  Vec3 accel_bias = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  bool bias_walk = true;
};

struct DetectionSpec {
  double miss_probability = 0.0;  // whole-frame detector misses
  double box_jitter = 0.0;        // px, per box edge
  std::vector<std::pair<int, int>> blackouts;  // inclusive frame ranges with no detections
};

struct SceneSpec {
  std::uint64_t seed = 1;
  double start_time = 1000.0;
  double duration = 10.0;
  double frame_rate = 30.0;
  double imu_rate = 200.0;
  PinholeCamera camera;
  PoseSE3 body_from_camera;
  Vec3 room_min = Vec3(-1.0, -3.0, 0.0);
  Vec3 room_max = Vec3(5.0, 3.0, 3.0);
  int room_landmarks = 2000;
  std::vector<std::array<double, 7>> trajectory;  // (t, x, y, z, yaw, pitch, roll)
  std::vector<SceneObject> objects;
  SceneNoise noise;
  DetectionSpec detection;
  double texture_cell = 0.06;  // m
  int render_supersample = 2;

  SceneSpec();
  /// Throws SpecInvalid.
  void validate() const;
  static SceneSpec from_yaml(const std::string& text);
  static SceneSpec from_yaml_file(const std::filesystem::path& path);
  std::string to_yaml() const;
};

/// Camera looking along body +x with image x to body -y and image y to body -z.
PoseSE3 default_body_from_camera();

/// Room with furniture and a slowly wandering handheld camera, no movers.
SceneSpec static_scene(std::uint64_t seed, double duration);
/// Office scene with people walking mostly toward and away from the camera, one slowly
/// swaying seated person and an unlabeled object pushed sideways.
SceneSpec walking_scene(std::uint64_t seed, double duration);

struct SceneLandmark {
  Vec3 position = Vec3::Zero();  // world frame for room landmarks, box-center offset for object landmarks
  int object = -1;
  int score = 0;
};

struct SceneFrame {
  FrameIndex index = 0;
  double timestamp = 0.0;
  NavState truth;
  std::vector<DetectionBox> detections;  // after dropout and jitter
  std::vector<DetectionBox> true_boxes;  // projected object extents of boxed movers, before jitter
};

struct LandmarkView {
  int landmark = -1;
  Vec2 pixel = Vec2::Zero();  // noise-free
  double depth = 0.0;         // true camera z
};

class Scene {
 public:
  /// Deterministic for a given spec. Throws SpecInvalid.
  static Scene generate(const SceneSpec& spec);

  const SceneSpec& spec() const { return spec_; }
  const std::vector<SceneFrame>& frames() const { return frames_; }
  const std::vector<ImuSample>& imu() const { return imu_; }
  const std::vector<SceneLandmark>& landmarks() const { return landmarks_; }
  const BodyTrajectory& trajectory() const { return trajectory_; }

  NavState truth_at(double t) const;
  Vec3 object_center(int object, double t) const;
  Vec3 landmark_world(int id, double t) const;
  /// Landmark sits on an object that moves.
  bool landmark_dynamic(int id) const;
  bool landmark_boxed(int id) const;

  PoseSE3 world_from_camera(FrameIndex f) const;
  std::vector<LandmarkView> visible(FrameIndex f) const;

  /// Nearest-surface camera depth along the pixel ray (room and boxes).
  double true_depth(FrameIndex f, double x, double y) const;
  /// Depth camera reading: noise and dropout keyed on (frame, pixel).
  double measured_depth(FrameIndex f, int x, int y) const;
  /// Depth reading at a tracked landmark, keyed on (frame, landmark).
  double measured_landmark_depth(FrameIndex f, int landmark, double true_z) const;
  Vec2 noisy_pixel(FrameIndex f, int landmark, const Vec2& pixel) const;
  DepthSampler depth_sampler(FrameIndex f) const;

  GrayImage render(FrameIndex f) const;
  DepthImage render_depth(FrameIndex f) const;

  Trajectory ground_truth() const;

 private:
  struct Hit {
    double t = 0.0;
    int surface = -1;  // 0..5 room faces, 6 + object
    Vec3 point = Vec3::Zero();
  };
  Hit raycast(FrameIndex f, const Vec3& origin, const Vec3& dir) const;
  std::uint8_t shade(FrameIndex f, const Hit& hit) const;

  SceneSpec spec_;
  BodyTrajectory trajectory_;
  std::vector<std::array<CubicSpline, 3>> object_paths_;
  std::vector<SceneLandmark> landmarks_;
  std::vector<SceneFrame> frames_;
  std::vector<ImuSample> imu_;
  std::vector<std::pair<double, ImuBias>> bias_track_;
  std::vector<std::vector<Vec3>> object_centers_;  // per frame
};

/// Writes rgb/, depth/, rgb.txt, depth.txt, groundtruth.txt, imu.csv, detections.txt and
/// sensor.yaml under `root`. Throws IoFailure.
void export_tum(const Scene& scene, const std::filesystem::path& root);

struct SyntheticFrontendConfig {
  DetectionGridConfig grid;
  bool circular_mask = true;
};

struct SyntheticFrame {
  FrontendOutput output;
  std::vector<int> landmark_of;  // parallel to output.observations
};

/// Feeds scene landmarks to the estimator as if tracked: tracks persist while the
/// landmark stays visible; new tracks come from the same masked grid selection as
/// the image front end, ranked by a per-landmark score.
class SyntheticFrontend {
 public:
  SyntheticFrontend(const SyntheticFrontendConfig& cfg, const Scene& scene);

  SyntheticFrame process(FrameIndex f);

 private:
  struct Track {
    FeatureId id;
    int landmark;
    Vec2 pixel;
    int length;
  };
  SyntheticFrontendConfig cfg_;
  const Scene& scene_;
  std::vector<Track> tracks_;
  SkipSet skip_;
  FeatureId next_id_ = 0;
};

}  // namespace dvio
