#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dvio/compensation.hpp"
#include "dvio/dataset.hpp"
#include "dvio/estimator.hpp"
#include "dvio/frontend.hpp"
#include "dvio/metrics.hpp"
#include "dvio/recognition.hpp"
#include "dvio/scene.hpp"

namespace dvio {

/// Module switches mirroring the ablation study.
struct AblationFlags {
  bool disable_circular_mask = false;
  bool disable_detection = false;
  bool disable_seg_like_mask = false;  // mark whole boxes dynamic instead of thresholding depth
  bool disable_mcc = false;
  bool disable_compensation = false;
};

struct PipelineConfig {
  FrontendConfig frontend;
  RecognitionConfig recognition;
  CompensationConfig compensation;
  EstimatorConfig estimator;
  AblationFlags ablation;

  bool vo_mode = false;
  bool sync = false;                    // single thread, stage by stage
  double detection_latency_ms = 0.0;    // artificial provider latency
  double join_timeout_ms = 100.0;       // optimization waits this long for detections
  int queue_capacity = 4;
  bool render_images = false;           // synthetic input: render and run FAST/KLT instead of direct observations
  bool init_from_ground_truth = true;   // first state from ground truth when available
  EvalOptions eval;

  /// Throws ConfigInvalid.
  void validate() const;

  /// Sectioned YAML; unknown sections or keys throw ConfigInvalid.
  static PipelineConfig from_yaml(const std::string& text);
  static PipelineConfig from_yaml_file(const std::filesystem::path& path);
  /// Merges `text` over this config.
  void merge_yaml(const std::string& text);
  /// "section.key=value" override.
  void apply_override(const std::string& assignment);
  std::string to_yaml() const;

  /// Estimator configuration after VO mode and ablation switches are applied.
  EstimatorConfig effective_estimator() const;
  FrontendConfig effective_frontend() const;
};

/// Names accepted by apply_ablation: default, disable_circular_mask, disable_detection,
/// disable_seg_like_mask, disable_mcc.
PipelineConfig apply_ablation(PipelineConfig cfg, const std::string& variant);
const std::vector<std::string>& ablation_variants();

struct LatencyStats {
  int count = 0;
  double mean = 0.0;
  double p50 = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
  double max = 0.0;

  static LatencyStats from(std::vector<double> samples);
};

struct TimingReport {
  LatencyStats feature_tracking;
  LatencyStats feature_detection;
  LatencyStats tracking_stage;
  LatencyStats detection_provider;
  LatencyStats detection_wait;  // time the optimization stage blocked on detections
  LatencyStats compensation;
  LatencyStats semantic_mask;
  LatencyStats consistency_check;
  LatencyStats state_optimization;
  LatencyStats optimization_stage;
  double wall_ms = 0.0;
  int frames = 0;
  int detection_timeouts = 0;
  bool pipelined = false;

  std::string to_json(int indent = 2) const;
};

/// Everything the tracking stage produces for one frame.
struct TrackedFrame {
  FrontendOutput output;
  std::optional<PreintegratedDelta> delta;  // previous frame to this one
  DepthSampler depth;                       // metric depth lookup for mask construction
  double stage_ms = 0.0;
};

/// Input stream for the pipeline. `track` is called in frame order from one thread;
/// `detect` may be called from another thread concurrently.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual size_t frame_count() const = 0;
  virtual double timestamp(size_t f) const = 0;
  virtual PinholeCamera camera() const = 0;
  virtual PoseSE3 body_from_camera() const = 0;
  virtual const std::vector<ImuSample>& imu() const = 0;
  virtual Trajectory ground_truth() const = 0;
  /// Ground-truth navigation state at frame f, if known.
  virtual std::optional<NavState> truth(size_t f) const = 0;
  virtual TrackedFrame track(size_t f, const PreintegratedDelta* delta) = 0;
  virtual std::vector<DetectionBox> detect(size_t f) const = 0;
};

std::unique_ptr<FrameSource> make_scene_source(const Scene& scene, const PipelineConfig& cfg);
std::unique_ptr<FrameSource> make_dataset_source(const SequenceManifest& manifest, const PipelineConfig& cfg);

struct FrameLog {
  FrameIndex frame_index = 0;
  double timestamp = 0.0;
  int observations = 0;
  int detections = 0;
  int compensated = 0;
  int semantic_dynamic = 0;
  int mcc_dynamic = 0;
  int usable = 0;
  bool keyframe = false;
  bool insufficient_constraints = false;
  bool detection_timeout = false;
};

struct RunResult {
  Trajectory trajectory;
  Trajectory imu_rate_trajectory;  // frame poses plus IMU propagation between them (empty in VO mode)
  std::optional<EvalResult> eval;
  TimingReport timing;
  std::vector<FrameLog> frames;
  std::vector<FeatureId> flagged_semantic;  // sorted
  std::vector<FeatureId> flagged_mcc;       // sorted
  std::string effective_config;
};

using PoseCallback = std::function<void(double timestamp, const PoseSE3& pose)>;

/// Runs tracking, detection and optimization over the whole source. In pipelined mode the
/// three stages run on their own threads joined by bounded queues.
RunResult run_pipeline(FrameSource& source, const PipelineConfig& cfg, const PoseCallback& on_pose = {});

struct AblationRow {
  std::string variant;
  EvalResult eval;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string to_json(int indent = 2) const;
  std::string to_table() const;
};

/// Runs the five ablation variants on the same scene.
AblationReport run_ablation_suite(const Scene& scene, const PipelineConfig& cfg);

/// Writes trajectory.txt, imu_rate_trajectory.txt (IMU mode), metrics.json (when evaluated), timing.json
/// and config.yaml.
void write_run_outputs(const std::filesystem::path& dir, const RunResult& result);

}  // namespace dvio
