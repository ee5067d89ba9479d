#include "dvio/pipeline.hpp"

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "dvio/error.hpp"

namespace dvio {

// ---------------------------------------------------------------------------
// Configuration

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigInvalid, msg); }

template <typename T>
T parse_scalar(const YAML::Node& n, const std::string& key) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    config_error("bad value for '" + key + "'");
  }
}

struct Field {
  std::string key;  // section.name
  std::function<void(PipelineConfig&, const YAML::Node&)> set;
  std::function<void(const PipelineConfig&, YAML::Emitter&)> emit;
};

template <typename T, typename Get>
Field field(std::string key, Get get) {
  Field f;
  f.key = key;
  f.set = [get, key](PipelineConfig& c, const YAML::Node& n) { get(c) = parse_scalar<T>(n, key); };
  f.emit = [get](const PipelineConfig& c, YAML::Emitter& e) { e << get(const_cast<PipelineConfig&>(c)); };
  return f;
}

const std::vector<Field>& fields() {
  using C = PipelineConfig;
  static const std::vector<Field> all = [] {
    std::vector<Field> v;
    v.push_back(field<int>("frontend.grid_rows", [](C& c) -> int& { return c.frontend.grid.rows; }));
    v.push_back(field<int>("frontend.grid_cols", [](C& c) -> int& { return c.frontend.grid.cols; }));
    v.push_back(field<int>("frontend.padding", [](C& c) -> int& { return c.frontend.grid.padding; }));
    v.push_back(field<int>("frontend.max_features", [](C& c) -> int& { return c.frontend.grid.max_features; }));
    v.push_back(field<int>("frontend.mask_radius", [](C& c) -> int& { return c.frontend.grid.mask_radius; }));
    v.push_back(field<int>("frontend.fast_threshold", [](C& c) -> int& { return c.frontend.grid.fast_threshold; }));
    v.push_back(field<bool>("frontend.use_imu_prediction", [](C& c) -> bool& { return c.frontend.use_imu_prediction; }));
    v.push_back(field<int>("frontend.pyramid_levels_with_prediction",
                           [](C& c) -> int& { return c.frontend.pyramid_levels_with_prediction; }));
    v.push_back(field<int>("frontend.pyramid_levels_without_prediction",
                           [](C& c) -> int& { return c.frontend.pyramid_levels_without_prediction; }));
    v.push_back(field<int>("frontend.klt_window", [](C& c) -> int& { return c.frontend.klt.window; }));
    v.push_back(field<int>("frontend.klt_max_iterations", [](C& c) -> int& { return c.frontend.klt.max_iterations; }));
    v.push_back(field<double>("frontend.klt_epsilon", [](C& c) -> double& { return c.frontend.klt.epsilon; }));
    v.push_back(field<double>("frontend.klt_fb_threshold", [](C& c) -> double& { return c.frontend.klt.fb_threshold; }));
    v.push_back(
        field<double>("frontend.klt_min_eigenvalue", [](C& c) -> double& { return c.frontend.klt.min_eigenvalue; }));

    v.push_back(field<double>("recognition.epsilon", [](C& c) -> double& { return c.recognition.epsilon; }));
    {
      Field f;
      f.key = "recognition.dynamic_classes";
      f.set = [](C& c, const YAML::Node& n) {
        if (!n.IsSequence()) config_error("recognition.dynamic_classes must be a list");
        c.recognition.dynamic_classes.clear();
        for (const auto& s : n) c.recognition.dynamic_classes.insert(s.as<std::string>());
      };
      f.emit = [](const C& c, YAML::Emitter& e) {
        e << YAML::Flow << YAML::BeginSeq;
        for (const auto& s : c.recognition.dynamic_classes) e << s;
        e << YAML::EndSeq;
      };
      v.push_back(f);
    }

    v.push_back(field<int>("compensation.miss_limit", [](C& c) -> int& { return c.compensation.miss_limit; }));
    v.push_back(field<double>("compensation.iou_threshold", [](C& c) -> double& { return c.compensation.iou_threshold; }));
    v.push_back(field<bool>("compensation.seed_velocity", [](C& c) -> bool& { return c.compensation.seed_velocity; }));

    v.push_back(
        field<double>("consistency.threshold_px", [](C& c) -> double& { return c.estimator.consistency.threshold_px; }));
    v.push_back(field<int>("consistency.recycle_min_observations",
                           [](C& c) -> int& { return c.estimator.consistency.recycle_min_observations; }));

    v.push_back(field<int>("estimator.window_size", [](C& c) -> int& { return c.estimator.window_size; }));
    v.push_back(field<bool>("estimator.use_depth", [](C& c) -> bool& { return c.estimator.use_depth; }));
    v.push_back(field<double>("estimator.pixel_sigma", [](C& c) -> double& { return c.estimator.pixel_sigma; }));
    v.push_back(field<double>("estimator.huber_scale", [](C& c) -> double& { return c.estimator.huber_scale; }));
    v.push_back(field<double>("estimator.depth_sigma", [](C& c) -> double& { return c.estimator.depth_sigma; }));
    v.push_back(
        field<double>("estimator.depth_sigma_floor", [](C& c) -> double& { return c.estimator.depth_sigma_floor; }));
    v.push_back(field<double>("estimator.keyframe_parallax_px",
                              [](C& c) -> double& { return c.estimator.keyframe.parallax_px; }));
    v.push_back(
        field<int>("estimator.keyframe_min_tracked", [](C& c) -> int& { return c.estimator.keyframe.count_floor; }));
    v.push_back(
        field<int>("estimator.min_stable_features", [](C& c) -> int& { return c.estimator.min_stable_features; }));
    v.push_back(field<int>("estimator.max_iterations", [](C& c) -> int& { return c.estimator.max_iterations; }));
    v.push_back(
        field<double>("estimator.gradient_tolerance", [](C& c) -> double& { return c.estimator.gradient_tolerance; }));
    v.push_back(field<double>("estimator.step_tolerance", [](C& c) -> double& { return c.estimator.step_tolerance; }));
    v.push_back(
        field<double>("estimator.initial_damping", [](C& c) -> double& { return c.estimator.initial_damping; }));
    v.push_back(field<double>("estimator.min_triangulation_angle_deg",
                              [](C& c) -> double& { return c.estimator.min_triangulation_angle_deg; }));

    v.push_back(field<double>("imu.gyro_noise", [](C& c) -> double& { return c.estimator.imu_noise.gyro_noise; }));
    v.push_back(field<double>("imu.accel_noise", [](C& c) -> double& { return c.estimator.imu_noise.accel_noise; }));
    v.push_back(field<double>("imu.gyro_walk", [](C& c) -> double& { return c.estimator.imu_noise.gyro_walk; }));
    v.push_back(field<double>("imu.accel_walk", [](C& c) -> double& { return c.estimator.imu_noise.accel_walk; }));

    v.push_back(field<bool>("pipeline.vo_mode", [](C& c) -> bool& { return c.vo_mode; }));
    v.push_back(field<bool>("pipeline.sync", [](C& c) -> bool& { return c.sync; }));
    v.push_back(field<double>("pipeline.detection_latency_ms", [](C& c) -> double& { return c.detection_latency_ms; }));
    v.push_back(field<double>("pipeline.join_timeout_ms", [](C& c) -> double& { return c.join_timeout_ms; }));
    v.push_back(field<int>("pipeline.queue_capacity", [](C& c) -> int& { return c.queue_capacity; }));
    v.push_back(field<bool>("pipeline.render_images", [](C& c) -> bool& { return c.render_images; }));
    v.push_back(field<bool>("pipeline.init_from_ground_truth", [](C& c) -> bool& { return c.init_from_ground_truth; }));

    v.push_back(field<bool>("ablation.disable_circular_mask",
                            [](C& c) -> bool& { return c.ablation.disable_circular_mask; }));
    v.push_back(field<bool>("ablation.disable_detection", [](C& c) -> bool& { return c.ablation.disable_detection; }));
    v.push_back(field<bool>("ablation.disable_seg_like_mask",
                            [](C& c) -> bool& { return c.ablation.disable_seg_like_mask; }));
    v.push_back(field<bool>("ablation.disable_mcc", [](C& c) -> bool& { return c.ablation.disable_mcc; }));
    v.push_back(
        field<bool>("ablation.disable_compensation", [](C& c) -> bool& { return c.ablation.disable_compensation; }));

    {
      Field f;
      f.key = "evaluation.alignment";
      f.set = [](C& c, const YAML::Node& n) {
        const auto s = parse_scalar<std::string>(n, "evaluation.alignment");
        if (s == "se3")
          c.eval.alignment = AlignmentMode::SE3;
        else if (s == "sim3")
          c.eval.alignment = AlignmentMode::Sim3;
        else
          config_error("evaluation.alignment must be se3 or sim3");
      };
      f.emit = [](const C& c, YAML::Emitter& e) { e << (c.eval.alignment == AlignmentMode::SE3 ? "se3" : "sim3"); };
      v.push_back(f);
    }
    v.push_back(field<double>("evaluation.rpe_delta", [](C& c) -> double& { return c.eval.rpe_delta; }));
    v.push_back(field<double>("evaluation.cr_tolerance", [](C& c) -> double& { return c.eval.cr_tolerance; }));
    v.push_back(field<double>("evaluation.association_tolerance",
                              [](C& c) -> double& { return c.eval.association_tolerance; }));
    return v;
  }();
  return all;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  config_error("unknown config key '" + key + "'");
}

}  // namespace

void PipelineConfig::validate() const {
  try {
    frontend.grid.validate();
    compensation.validate();
    effective_estimator().validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigInvalid) throw;
    config_error(e.what());
  }
  if (!(recognition.epsilon > 0.0)) config_error("recognition.epsilon must be > 0");
  if (frontend.klt.window < 3 || frontend.klt.window % 2 == 0) config_error("frontend.klt_window must be odd and >= 3");
  if (frontend.pyramid_levels_with_prediction < 1 || frontend.pyramid_levels_without_prediction < 1)
    config_error("pyramid levels must be >= 1");
  if (detection_latency_ms < 0.0) config_error("pipeline.detection_latency_ms must be >= 0");
  if (!(join_timeout_ms > 0.0)) config_error("pipeline.join_timeout_ms must be > 0");
  if (queue_capacity < 1) config_error("pipeline.queue_capacity must be >= 1");
  if (!(eval.rpe_delta > 0.0) || !(eval.cr_tolerance > 0.0) || !(eval.association_tolerance > 0.0))
    config_error("evaluation tolerances must be > 0");
}

void PipelineConfig::merge_yaml(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    config_error(std::string("config is not valid YAML: ") + e.what());
  }
  if (root.IsNull()) return;
  if (!root.IsMap()) config_error("config must be a mapping of sections");
  for (const auto& section : root) {
    const auto name = section.first.as<std::string>();
    if (!section.second.IsMap()) config_error("section '" + name + "' must be a mapping");
    for (const auto& kv : section.second) find_field(name + "." + kv.first.as<std::string>()).set(*this, kv.second);
  }
}

PipelineConfig PipelineConfig::from_yaml(const std::string& text) {
  PipelineConfig c;
  c.merge_yaml(text);
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::from_yaml_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_yaml(ss.str());
}

void PipelineConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) config_error("override '" + assignment + "' must look like section.key=value");
  const std::string key = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception&) {
    config_error("bad value in override '" + assignment + "'");
  }
  find_field(key).set(*this, value);
}

std::string PipelineConfig::to_yaml() const {
  YAML::Emitter e;
  e.SetDoublePrecision(12);
  e << YAML::BeginMap;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) e << YAML::EndMap;
      e << YAML::Key << s << YAML::Value << YAML::BeginMap;
      section = s;
    }
    e << YAML::Key << f.key.substr(dot + 1) << YAML::Value;
    f.emit(*this, e);
  }
  if (!section.empty()) e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

EstimatorConfig PipelineConfig::effective_estimator() const {
  EstimatorConfig e = estimator;
  e.use_imu = !vo_mode;
  e.consistency_check = !ablation.disable_mcc;
  return e;
}

FrontendConfig PipelineConfig::effective_frontend() const {
  FrontendConfig f = frontend;
  f.circular_mask = !ablation.disable_circular_mask;
  if (vo_mode) f.use_imu_prediction = false;
  return f;
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v = {"default", "disable_circular_mask", "disable_detection",
                                             "disable_seg_like_mask", "disable_mcc"};
  return v;
}

PipelineConfig apply_ablation(PipelineConfig cfg, const std::string& variant) {
  if (variant == "default") return cfg;
  if (variant == "disable_circular_mask")
    cfg.ablation.disable_circular_mask = true;
  else if (variant == "disable_detection")
    cfg.ablation.disable_detection = true;
  else if (variant == "disable_seg_like_mask")
    cfg.ablation.disable_seg_like_mask = true;
  else if (variant == "disable_mcc")
    cfg.ablation.disable_mcc = true;
  else if (variant == "disable_compensation")
    cfg.ablation.disable_compensation = true;
  else
    config_error("unknown ablation variant '" + variant + "'");
  return cfg;
}

// ---------------------------------------------------------------------------
// Timing

LatencyStats LatencyStats::from(std::vector<double> samples) {
  LatencyStats s;
  s.count = static_cast<int>(samples.size());
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  double sum = 0.0;
  for (double v : samples) sum += v;
  s.mean = sum / static_cast<double>(samples.size());
  auto pct = [&](double p) {
    const auto rank = static_cast<size_t>(std::ceil(p * static_cast<double>(samples.size())));
    return samples[std::clamp<size_t>(rank, 1, samples.size()) - 1];
  };
  s.p50 = pct(0.5);
  s.p90 = pct(0.9);
  s.p99 = pct(0.99);
  s.max = samples.back();
  return s;
}

namespace {

nlohmann::json stats_json(const LatencyStats& s) {
  return {{"count", s.count}, {"mean_ms", s.mean}, {"p50_ms", s.p50}, {"p90_ms", s.p90},
          {"p99_ms", s.p99},  {"max_ms", s.max}};
}

}  // namespace

std::string TimingReport::to_json(int indent) const {
  nlohmann::json j;
  j["frames"] = frames;
  j["wall_ms"] = wall_ms;
  j["pipelined"] = pipelined;
  j["detection_timeouts"] = detection_timeouts;
  j["tracking_thread"] = {{"feature_tracking", stats_json(feature_tracking)},
                          {"feature_detection", stats_json(feature_detection)},
                          {"stage_total", stats_json(tracking_stage)}};
  j["detection_provider"] = stats_json(detection_provider);
  j["optimization_thread"] = {{"detection_wait", stats_json(detection_wait)},
                              {"missed_detection_compensation", stats_json(compensation)},
                              {"semantic_mask", stats_json(semantic_mask)},
                              {"moving_consistency_check", stats_json(consistency_check)},
                              {"state_optimization", stats_json(state_optimization)},
                              {"stage_total", stats_json(optimization_stage)}};
  return j.dump(indent);
}

// ---------------------------------------------------------------------------
// Sources

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

class SceneSource final : public FrameSource {
 public:
  SceneSource(const Scene& scene, const PipelineConfig& cfg)
      : scene_(scene),
        render_(cfg.render_images),
        synthetic_({cfg.effective_frontend().grid, cfg.effective_frontend().circular_mask}, scene),
        image_(cfg.effective_frontend(), scene.spec().camera, scene.spec().body_from_camera) {}

  size_t frame_count() const override { return scene_.frames().size(); }
  double timestamp(size_t f) const override { return scene_.frames()[f].timestamp; }
  PinholeCamera camera() const override { return scene_.spec().camera; }
  PoseSE3 body_from_camera() const override { return scene_.spec().body_from_camera; }
  const std::vector<ImuSample>& imu() const override { return scene_.imu(); }
  Trajectory ground_truth() const override { return scene_.ground_truth(); }
  std::optional<NavState> truth(size_t f) const override { return scene_.frames()[f].truth; }

  TrackedFrame track(size_t f, const PreintegratedDelta* delta) override {
    TrackedFrame out;
    const auto fi = static_cast<FrameIndex>(f);
    if (!render_) {
      out.output = synthetic_.process(fi).output;
      out.depth = scene_.depth_sampler(fi);
      return out;
    }
    const GrayImage image = scene_.render(fi);
    auto depth = std::make_shared<const DepthImage>(scene_.render_depth(fi));
    out.output = image_.process(fi, timestamp(f), image, depth.get(), delta);
    out.depth = [depth](int x, int y) { return depth->at(x, y); };
    return out;
  }

  std::vector<DetectionBox> detect(size_t f) const override { return scene_.frames()[f].detections; }

 private:
  const Scene& scene_;
  bool render_;
  SyntheticFrontend synthetic_;
  ImageFrontend image_;
};

class DatasetSource final : public FrameSource {
 public:
  DatasetSource(const SequenceManifest& m, const PipelineConfig& cfg)
      : m_(m),
        sensor_(m.sensor.value_or(SensorConfig{})),
        frontend_(cfg.effective_frontend(), sensor_.camera, sensor_.body_from_camera),
        tolerance_(cfg.eval.association_tolerance) {}

  size_t frame_count() const override { return m_.frames.size(); }
  double timestamp(size_t f) const override { return m_.frames[f].timestamp; }
  PinholeCamera camera() const override { return sensor_.camera; }
  PoseSE3 body_from_camera() const override { return sensor_.body_from_camera; }
  const std::vector<ImuSample>& imu() const override { return m_.imu; }
  Trajectory ground_truth() const override { return m_.ground_truth; }

  std::optional<NavState> truth(size_t f) const override {
    const double t = timestamp(f);
    const auto& gt = m_.ground_truth;
    auto it = std::lower_bound(gt.begin(), gt.end(), t, [](const StampedPose& s, double v) { return s.first < v; });
    const StampedPose* best = nullptr;
    if (it != gt.end()) best = &*it;
    if (it != gt.begin() && (!best || t - (it - 1)->first < best->first - t)) best = &*(it - 1);
    if (!best || std::abs(best->first - t) > tolerance_) return std::nullopt;
    NavState s;
    s.pose = best->second;
    return s;
  }

  TrackedFrame track(size_t f, const PreintegratedDelta* delta) override {
    TrackedFrame out;
    const GrayImage image = read_gray_png(m_.frames[f].color);
    auto depth = std::make_shared<const DepthImage>(read_depth_png(m_.frames[f].depth, m_.depth_scale));
    if (depth->width() != image.width() || depth->height() != image.height())
      throw Error(ErrorCode::ImageSizeMismatch, "depth and color sizes differ at " + m_.frames[f].color.string());
    out.output = frontend_.process(static_cast<FrameIndex>(f), timestamp(f), image, depth.get(), delta);
    out.depth = [depth](int x, int y) { return depth->at(x, y); };
    return out;
  }

  std::vector<DetectionBox> detect(size_t f) const override {
    auto boxes = m_.detections_at(timestamp(f), tolerance_);
    for (auto& b : boxes) b.frame_index = static_cast<FrameIndex>(f);
    return boxes;
  }

 private:
  const SequenceManifest& m_;
  SensorConfig sensor_;
  ImageFrontend frontend_;
  double tolerance_;
};

}  // namespace

std::unique_ptr<FrameSource> make_scene_source(const Scene& scene, const PipelineConfig& cfg) {
  return std::make_unique<SceneSource>(scene, cfg);
}

std::unique_ptr<FrameSource> make_dataset_source(const SequenceManifest& manifest, const PipelineConfig& cfg) {
  return std::make_unique<DatasetSource>(manifest, cfg);
}

// ---------------------------------------------------------------------------
// Stages

namespace {

/// Blocking bounded FIFO; close() wakes every waiter.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(size_t capacity) : capacity_(capacity) {}

  bool push(T v) {
    std::unique_lock lock(m_);
    not_full_.wait(lock, [&] { return closed_ || q_.size() < capacity_; });
    if (closed_) return false;
    q_.push_back(std::move(v));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(m_);
    not_empty_.wait(lock, [&] { return closed_ || !q_.empty(); });
    return take(lock);
  }

  std::optional<T> pop_until(Clock::time_point deadline) {
    std::unique_lock lock(m_);
    not_empty_.wait_until(lock, deadline, [&] { return closed_ || !q_.empty(); });
    return take(lock);
  }

  void close() {
    std::lock_guard lock(m_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::optional<T> take(std::unique_lock<std::mutex>&) {
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return v;
  }

  size_t capacity_;
  std::mutex m_;
  std::condition_variable not_empty_, not_full_;
  std::deque<T> q_;
  bool closed_ = false;
};

struct DetectionResult {
  size_t frame = 0;
  std::vector<DetectionBox> boxes;
  double latency_ms = 0.0;
};

/// Tracking stage: IMU preintegration since the previous frame plus the front end.
class Tracker {
 public:
  Tracker(FrameSource& src, const PipelineConfig& cfg)
      : src_(src), use_imu_(!cfg.vo_mode && !src.imu().empty()), noise_(cfg.estimator.imu_noise),
        predict_(cfg.effective_frontend().use_imu_prediction) {}

  TrackedFrame operator()(size_t f) {
    const auto t0 = Clock::now();
    std::optional<PreintegratedDelta> delta;
    if (use_imu_ && f > 0) {
      const auto samples = slice_imu(src_.imu(), src_.timestamp(f - 1), src_.timestamp(f));
      delta = PreintegratedDelta::from_samples(samples, ImuBias{}, noise_);
    }
    TrackedFrame out = src_.track(f, delta && predict_ ? &*delta : nullptr);
    out.delta = std::move(delta);
    out.stage_ms = ms_since(t0);
    return out;
  }

 private:
  FrameSource& src_;
  bool use_imu_;
  ImuNoise noise_;
  bool predict_;
};

DetectionResult provide_detections(const FrameSource& src, size_t f, double latency_ms) {
  const auto t0 = Clock::now();
  DetectionResult r;
  r.frame = f;
  r.boxes = src.detect(f);
  if (latency_ms > 0.0) std::this_thread::sleep_until(t0 + std::chrono::duration<double, std::milli>(latency_ms));
  r.latency_ms = ms_since(t0);
  return r;
}

/// Optimization stage: compensation, semantic mask, consistency check and the estimator.
class Optimizer {
 public:
  Optimizer(const FrameSource& src, const PipelineConfig& cfg, RunResult& out, const PoseCallback& on_pose)
      : cfg_(cfg), src_(src), cam_(src.camera()), registry_(cfg.compensation),
        estimator_(cfg.effective_estimator(), cam_, src.body_from_camera()), out_(out), on_pose_(on_pose) {}

  void operator()(size_t f, const TrackedFrame& tf, const std::optional<DetectionResult>& det, double wait_ms) {
    const auto t0 = Clock::now();
    FrameLog log;
    log.frame_index = static_cast<FrameIndex>(f);
    log.timestamp = tf.output.timestamp;
    log.observations = static_cast<int>(tf.output.observations.size());
    log.detection_timeout = !det.has_value();

    std::vector<DetectionBox> boxes;
    if (!cfg_.ablation.disable_detection) {
      if (det) {
        for (const auto& b : det->boxes)
          if (cfg_.recognition.is_dynamic_class(b.class_label)) boxes.push_back(b.clamped(cam_.width, cam_.height));
      }
      log.detections = static_cast<int>(boxes.size());
      const auto tc = Clock::now();
      if (!cfg_.ablation.disable_compensation) {
        registry_.associate_and_update(boxes, log.frame_index);
        const auto comp = registry_.predict_missed(log.frame_index, cam_.width, cam_.height);
        log.compensated = static_cast<int>(comp.size());
        boxes.insert(boxes.end(), comp.begin(), comp.end());
      }
      compensation_ms_.push_back(ms_since(tc));
    }

    const auto tm = Clock::now();
    std::unordered_set<FeatureId> semantic;
    if (!boxes.empty()) {
      const SemanticMask mask = build_semantic_mask(cam_.width, cam_.height, boxes, tf.depth,
                                                    cfg_.recognition.epsilon, cfg_.ablation.disable_seg_like_mask);
      for (const auto& obs : tf.output.observations)
        if (classify_feature(obs, mask, history_) == SemanticVerdict::Dynamic) semantic.insert(obs.feature_id);
    } else {
      for (const auto& obs : tf.output.observations)
        if (history_.contains(obs.feature_id)) semantic.insert(obs.feature_id);
    }
    mask_ms_.push_back(ms_since(tm));

    if (!estimator_.initialized()) estimator_.initialize(initial_state());
    if (last_state_ && !cfg_.vo_mode && !src_.imu().empty()) {
      // IMU-rate stream between the previous optimized frame and this one.
      const auto span = slice_imu(src_.imu(), last_time_, tf.output.timestamp);
      const auto poses = propagate_imu_rate(*last_state_, span, cfg_.estimator.gravity);
      for (size_t k = 1; k + 1 < poses.size(); ++k) out_.imu_rate_trajectory.push_back(poses[k]);
    }
    TrackingInput input{log.frame_index, tf.output.timestamp, tf.output.observations};
    const bool use_delta = !cfg_.vo_mode && tf.delta.has_value();
    const FrameResult res = estimator_.process_frame(input, semantic, use_delta ? &*tf.delta : nullptr);
    consistency_ms_.push_back(res.consistency_ms);
    optimization_ms_.push_back(res.optimization_ms);

    log.semantic_dynamic = res.semantic_dynamic;
    log.mcc_dynamic = res.mcc_dynamic;
    log.usable = res.usable_features;
    log.keyframe = res.keyframe;
    log.insufficient_constraints = res.insufficient_constraints;
    out_.trajectory.emplace_back(res.timestamp, res.state.pose);
    if (!cfg_.vo_mode && !src_.imu().empty()) out_.imu_rate_trajectory.emplace_back(res.timestamp, res.state.pose);
    last_state_ = res.state;
    last_time_ = res.timestamp;
    out_.frames.push_back(log);
    if (on_pose_) on_pose_(res.timestamp, res.state.pose);
    stage_ms_.push_back(ms_since(t0));
    wait_ms_.push_back(wait_ms);
  }

  void finish(TimingReport& t) {
    t.compensation = LatencyStats::from(compensation_ms_);
    t.semantic_mask = LatencyStats::from(mask_ms_);
    t.consistency_check = LatencyStats::from(consistency_ms_);
    t.state_optimization = LatencyStats::from(optimization_ms_);
    t.optimization_stage = LatencyStats::from(stage_ms_);
    t.detection_wait = LatencyStats::from(wait_ms_);
    out_.flagged_semantic.assign(estimator_.flagged_semantic().begin(), estimator_.flagged_semantic().end());
    out_.flagged_mcc.assign(estimator_.flagged_mcc().begin(), estimator_.flagged_mcc().end());
    std::sort(out_.flagged_semantic.begin(), out_.flagged_semantic.end());
    std::sort(out_.flagged_mcc.begin(), out_.flagged_mcc.end());
  }

 private:
  NavState initial_state() const {
    NavState s;
    if (cfg_.init_from_ground_truth) {
      if (auto t = src_.truth(0)) {
        s.pose = t->pose;
        s.velocity = t->velocity;
        return s;
      }
    }
    if (!cfg_.vo_mode && !src_.imu().empty()) {
      const double t0 = src_.timestamp(0);
      std::vector<ImuSample> first;
      for (const auto& m : src_.imu())
        if (m.timestamp <= t0 + 0.5) first.push_back(m);
      s.pose = PoseSE3(initial_attitude_from_static(first), Vec3::Zero());
    }
    return s;
  }

  const PipelineConfig& cfg_;
  const FrameSource& src_;
  PinholeCamera cam_;
  ObjectRegistry registry_;
  DynamicHistory history_;
  SlidingWindowEstimator estimator_;
  RunResult& out_;
  const PoseCallback& on_pose_;
  std::optional<NavState> last_state_;
  double last_time_ = 0.0;
  std::vector<double> compensation_ms_, mask_ms_, consistency_ms_, optimization_ms_, stage_ms_, wait_ms_;
};

}  // namespace

RunResult run_pipeline(FrameSource& source, const PipelineConfig& cfg, const PoseCallback& on_pose) {
  cfg.validate();
  RunResult out;
  out.effective_config = cfg.to_yaml();
  const size_t n = source.frame_count();
  Tracker tracker(source, cfg);
  Optimizer optimizer(source, cfg, out, on_pose);
  std::vector<double> tracking_ms, detection_ms, stage_ms, provider_ms;
  TimingReport& timing = out.timing;
  timing.pipelined = !cfg.sync;
  const auto wall0 = Clock::now();

  auto record_tracking = [&](const TrackedFrame& tf) {
    tracking_ms.push_back(tf.output.tracking_ms);
    detection_ms.push_back(tf.output.detection_ms);
    stage_ms.push_back(tf.stage_ms);
  };

  if (cfg.sync) {
    for (size_t f = 0; f < n; ++f) {
      TrackedFrame tf = tracker(f);
      record_tracking(tf);
      DetectionResult det = provide_detections(source, f, cfg.detection_latency_ms);
      provider_ms.push_back(det.latency_ms);
      optimizer(f, tf, det, 0.0);
    }
  } else {
    const auto cap = static_cast<size_t>(cfg.queue_capacity);
    BoundedQueue<TrackedFrame> tracked(cap);
    BoundedQueue<DetectionResult> detections(cap);
    std::exception_ptr failure;
    std::mutex failure_m;
    auto fail = [&](std::exception_ptr e) {
      {
        std::lock_guard lock(failure_m);
        if (!failure) failure = e;
      }
      tracked.close();
      detections.close();
    };

    std::thread tracking_thread([&] {
      try {
        for (size_t f = 0; f < n; ++f) {
          TrackedFrame tf = tracker(f);
          record_tracking(tf);
          if (!tracked.push(std::move(tf))) return;
        }
      } catch (...) {
        fail(std::current_exception());
      }
    });
    std::thread detection_thread([&] {
      try {
        for (size_t f = 0; f < n; ++f) {
          DetectionResult d = provide_detections(source, f, cfg.detection_latency_ms);
          provider_ms.push_back(d.latency_ms);
          if (!detections.push(std::move(d))) return;
        }
      } catch (...) {
        fail(std::current_exception());
      }
    });

    try {
      const auto timeout = std::chrono::duration_cast<Clock::duration>(
          std::chrono::duration<double, std::milli>(cfg.join_timeout_ms));
      for (size_t f = 0; f < n; ++f) {
        auto tf = tracked.pop();
        if (!tf) break;
        // Detections for earlier frames that arrived after their deadline are discarded.
        const auto w0 = Clock::now();
        const auto deadline = w0 + timeout;
        std::optional<DetectionResult> det;
        while (auto d = detections.pop_until(deadline)) {
          if (d->frame == f) {
            det = std::move(d);
            break;
          }
        }
        if (!det) ++timing.detection_timeouts;
        optimizer(f, *tf, det, ms_since(w0));
      }
    } catch (...) {
      fail(std::current_exception());
    }
    tracked.close();
    detections.close();
    tracking_thread.join();
    detection_thread.join();
    if (failure) std::rethrow_exception(failure);
  }

  timing.wall_ms = ms_since(wall0);
  timing.frames = static_cast<int>(out.trajectory.size());
  timing.feature_tracking = LatencyStats::from(tracking_ms);
  timing.feature_detection = LatencyStats::from(detection_ms);
  timing.tracking_stage = LatencyStats::from(stage_ms);
  timing.detection_provider = LatencyStats::from(provider_ms);
  optimizer.finish(timing);

  const Trajectory gt = source.ground_truth();
  if (gt.size() >= 3 && out.trajectory.size() >= 3) out.eval = evaluate(out.trajectory, gt, cfg.eval);
  return out;
}

// ---------------------------------------------------------------------------
// Ablation and outputs

AblationReport run_ablation_suite(const Scene& scene, const PipelineConfig& cfg) {
  AblationReport report;
  for (const auto& v : ablation_variants()) {
    const PipelineConfig c = apply_ablation(cfg, v);
    auto src = make_scene_source(scene, c);
    const RunResult r = run_pipeline(*src, c);
    if (!r.eval) throw Error(ErrorCode::DegenerateGeometry, "ablation run '" + v + "' produced no evaluation");
    report.rows.push_back({v, *r.eval});
  }
  return report;
}

std::string AblationReport::to_json(int indent) const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"variant", r.variant},
                 {"ate_rmse", r.eval.ate_rmse},
                 {"t_rpe", r.eval.t_rpe_rmse},
                 {"r_rpe", r.eval.r_rpe_rmse},
                 {"correct_rate", r.eval.correct_rate}});
  return j.dump(indent);
}

std::string AblationReport::to_table() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %10s %10s %10s %8s\n", "variant", "ATE[m]", "T.RPE[m/s]", "R.RPE[d/s]",
                "CR");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-24s %10.4f %10.4f %10.4f %8.3f\n", r.variant.c_str(), r.eval.ate_rmse,
                  r.eval.t_rpe_rmse, r.eval.r_rpe_rmse, r.eval.correct_rate);
    os << buf;
  }
  return os.str();
}

void write_run_outputs(const std::filesystem::path& dir, const RunResult& result) {
  std::filesystem::create_directories(dir);
  write_trajectory(dir / "trajectory.txt", result.trajectory);
  if (!result.imu_rate_trajectory.empty()) write_trajectory(dir / "imu_rate_trajectory.txt", result.imu_rate_trajectory);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + (dir / name).string());
    out << text << (text.empty() || text.back() != '\n' ? "\n" : "");
  };
  if (result.eval) write("metrics.json", to_json(*result.eval));
  write("timing.json", result.timing.to_json());
  write("config.yaml", result.effective_config);
}

}  // namespace dvio
