#include "dvio/scene.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "dvio/error.hpp"
#include "dvio/random.hpp"

namespace dvio {

// ---------------------------------------------------------------------------
// Splines

CubicSpline::CubicSpline(std::vector<double> knots, std::vector<double> values)
    : t_(std::move(knots)), y_(std::move(values)), m_(t_.size(), 0.0) {
  const size_t n = t_.size();
  if (n < 3) return;
  // Tridiagonal system for interior second derivatives (natural ends).
  std::vector<double> a(n, 0.0), b(n, 1.0), c(n, 0.0), d(n, 0.0);
  for (size_t i = 1; i + 1 < n; ++i) {
    const double h0 = t_[i] - t_[i - 1];
    const double h1 = t_[i + 1] - t_[i];
    a[i] = h0 / 6.0;
    b[i] = (h0 + h1) / 3.0;
    c[i] = h1 / 6.0;
    d[i] = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
  }
  for (size_t i = 1; i < n; ++i) {
    const double w = a[i] / b[i - 1];
    b[i] -= w * c[i - 1];
    d[i] -= w * d[i - 1];
  }
  m_[n - 1] = d[n - 1] / b[n - 1];
  for (size_t i = n - 1; i-- > 0;) m_[i] = (d[i] - c[i] * m_[i + 1]) / b[i];
  m_.front() = 0.0;
  m_.back() = 0.0;
}

int CubicSpline::segment(double t) const {
  const auto it = std::upper_bound(t_.begin(), t_.end(), t);
  const int i = static_cast<int>(it - t_.begin()) - 1;
  return std::clamp(i, 0, static_cast<int>(t_.size()) - 2);
}

double CubicSpline::value(double t) const {
  if (t_.empty()) return 0.0;
  if (t_.size() == 1) return y_[0];
  if (t < t_.front()) return y_.front() + derivative(t_.front()) * (t - t_.front());
  if (t > t_.back()) return y_.back() + derivative(t_.back()) * (t - t_.back());
  const int i = segment(t);
  const double h = t_[i + 1] - t_[i];
  const double a = (t_[i + 1] - t) / h;
  const double b = (t - t_[i]) / h;
  return a * y_[i] + b * y_[i + 1] + ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
}

double CubicSpline::derivative(double t) const {
  if (t_.size() < 2) return 0.0;
  t = std::clamp(t, t_.front(), t_.back());
  const int i = segment(t);
  const double h = t_[i + 1] - t_[i];
  const double a = (t_[i + 1] - t) / h;
  const double b = (t - t_[i]) / h;
  return (y_[i + 1] - y_[i]) / h + (-(3.0 * a * a - 1.0) * m_[i] + (3.0 * b * b - 1.0) * m_[i + 1]) * h / 6.0;
}

double CubicSpline::second_derivative(double t) const {
  if (t_.size() < 3 || t < t_.front() || t > t_.back()) return 0.0;
  const int i = segment(t);
  const double h = t_[i + 1] - t_[i];
  return ((t_[i + 1] - t) * m_[i] + (t - t_[i]) * m_[i + 1]) / h;
}

BodyTrajectory::BodyTrajectory(const std::vector<std::array<double, 7>>& waypoints) {
  std::vector<double> t;
  std::array<std::vector<double>, 6> v;
  for (const auto& w : waypoints) {
    t.push_back(w[0]);
    for (int k = 0; k < 6; ++k) v[k].push_back(w[k + 1]);
  }
  for (int k = 0; k < 6; ++k) s_[k] = CubicSpline(t, v[k]);
}

Vec3 BodyTrajectory::position(double t) const { return {s_[0].value(t), s_[1].value(t), s_[2].value(t)}; }
Vec3 BodyTrajectory::velocity(double t) const {
  return {s_[0].derivative(t), s_[1].derivative(t), s_[2].derivative(t)};
}
Vec3 BodyTrajectory::acceleration(double t) const {
  return {s_[0].second_derivative(t), s_[1].second_derivative(t), s_[2].second_derivative(t)};
}

Quat BodyTrajectory::rotation(double t) const {
  return (Eigen::AngleAxisd(s_[3].value(t), Vec3::UnitZ()) * Eigen::AngleAxisd(s_[4].value(t), Vec3::UnitY()) *
          Eigen::AngleAxisd(s_[5].value(t), Vec3::UnitX()))
      .normalized();
}

Vec3 BodyTrajectory::angular_velocity_body(double t) const {
  const double pitch = s_[4].value(t);
  const double roll = s_[5].value(t);
  const Mat3 rx = Eigen::AngleAxisd(roll, Vec3::UnitX()).toRotationMatrix();
  const Mat3 ry = Eigen::AngleAxisd(pitch, Vec3::UnitY()).toRotationMatrix();
  return (ry * rx).transpose() * Vec3(0.0, 0.0, s_[3].derivative(t)) +
         rx.transpose() * Vec3(0.0, s_[4].derivative(t), 0.0) + Vec3(s_[5].derivative(t), 0.0, 0.0);
}

// ---------------------------------------------------------------------------
// Spec

PoseSE3 default_body_from_camera() {
  Mat3 r;
  r.col(0) = Vec3(0.0, -1.0, 0.0);
  r.col(1) = Vec3(0.0, 0.0, -1.0);
  r.col(2) = Vec3(1.0, 0.0, 0.0);
  return PoseSE3(r, Vec3(0.05, 0.02, 0.0));
}

SceneSpec::SceneSpec() : body_from_camera(default_body_from_camera()) {}

namespace {

[[noreturn]] void spec_error(const std::string& msg) { throw Error(ErrorCode::SpecInvalid, msg); }

bool increasing_times(const auto& rows) {
  for (size_t i = 1; i < rows.size(); ++i)
    if (!(rows[i][0] > rows[i - 1][0])) return false;
  return true;
}

}  // namespace

void SceneSpec::validate() const {
  if (!(frame_rate > 0.0) || !(imu_rate > 0.0)) spec_error("frame_rate and imu_rate must be > 0");
  if (imu_rate < 4.0 * frame_rate) spec_error("imu_rate must be at least 4x frame_rate");
  if (!(duration > 0.0)) spec_error("duration must be > 0");
  try {
    camera.validate();
  } catch (const Error& e) {
    spec_error(std::string("camera: ") + e.what());
  }
  if (!((room_max - room_min).array() > 0.0).all()) spec_error("room max must exceed min on every axis");
  if (room_landmarks < 0) spec_error("room landmarks must be >= 0");
  if (trajectory.empty()) spec_error("trajectory needs at least one waypoint");
  if (!increasing_times(trajectory)) spec_error("trajectory waypoint times must increase");
  for (const auto& o : objects) {
    if (o.waypoints.empty()) spec_error("object '" + o.class_label + "' has no waypoints");
    if (!increasing_times(o.waypoints)) spec_error("object '" + o.class_label + "' waypoint times must increase");
    if (!(o.size.array() > 0.0).all()) spec_error("object sizes must be > 0");
    if (o.landmarks < 0) spec_error("object landmark count must be >= 0");
  }
  if (noise.pixel_sigma < 0 || noise.depth_sigma < 0 || noise.depth_dropout < 0 || noise.depth_dropout > 1)
    spec_error("noise levels must be >= 0 and depth_dropout <= 1");
  if (detection.miss_probability < 0 || detection.miss_probability > 1 || detection.box_jitter < 0)
    spec_error("detection miss_probability must be in [0, 1] and box_jitter >= 0");
  for (const auto& [a, b] : detection.blackouts)
    if (b < a) spec_error("blackout ranges must have start <= end");
  if (!(texture_cell > 0.0)) spec_error("texture_cell must be > 0");
  if (render_supersample < 1) spec_error("render_supersample must be >= 1");
}

namespace {

void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) spec_error(where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      spec_error("unknown key '" + key + "' in " + where);
  }
}

Vec3 as_vec3(const YAML::Node& n, const std::string& what) {
  if (!n.IsSequence() || n.size() != 3) spec_error(what + " must be a 3-element list");
  return {n[0].as<double>(), n[1].as<double>(), n[2].as<double>()};
}

template <size_t N>
std::vector<std::array<double, N>> as_rows(const YAML::Node& n, const std::string& what) {
  if (!n.IsSequence()) spec_error(what + " must be a list");
  std::vector<std::array<double, N>> rows;
  for (const auto& r : n) {
    if (!r.IsSequence() || r.size() != N) spec_error(what + " rows must have " + std::to_string(N) + " numbers");
    std::array<double, N> a{};
    for (size_t i = 0; i < N; ++i) a[i] = r[i].as<double>();
    rows.push_back(a);
  }
  return rows;
}

template <typename T>
void read_if(const YAML::Node& n, const char* key, T& out) {
  if (n[key]) out = n[key].as<T>();
}

}  // namespace

SceneSpec SceneSpec::from_yaml(const std::string& text) {
  SceneSpec s;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    spec_error(std::string("scene spec is not valid YAML: ") + e.what());
  }
  try {
    check_keys(root, "scene", {"seed", "start_time", "duration", "frame_rate", "imu_rate", "camera", "body_from_camera",
                               "room", "trajectory", "objects", "noise", "detection", "texture_cell",
                               "render_supersample"});
    if (root["seed"]) s.seed = root["seed"].as<std::uint64_t>();
    read_if(root, "start_time", s.start_time);
    read_if(root, "duration", s.duration);
    read_if(root, "frame_rate", s.frame_rate);
    read_if(root, "imu_rate", s.imu_rate);
    read_if(root, "texture_cell", s.texture_cell);
    read_if(root, "render_supersample", s.render_supersample);
    if (const auto c = root["camera"]) {
      check_keys(c, "camera", {"fx", "fy", "cx", "cy", "width", "height"});
      read_if(c, "fx", s.camera.fx);
      read_if(c, "fy", s.camera.fy);
      read_if(c, "cx", s.camera.cx);
      read_if(c, "cy", s.camera.cy);
      read_if(c, "width", s.camera.width);
      read_if(c, "height", s.camera.height);
    }
    if (const auto b = root["body_from_camera"]) {
      check_keys(b, "body_from_camera", {"translation", "rotation_xyzw"});
      Vec3 t = s.body_from_camera.translation();
      Quat q = s.body_from_camera.rotation();
      if (b["translation"]) t = as_vec3(b["translation"], "body_from_camera.translation");
      if (const auto r = b["rotation_xyzw"]) {
        if (!r.IsSequence() || r.size() != 4) spec_error("body_from_camera.rotation_xyzw must have 4 numbers");
        q = Quat(r[3].as<double>(), r[0].as<double>(), r[1].as<double>(), r[2].as<double>());
        if (q.norm() < 1e-9) spec_error("body_from_camera rotation must be non-zero");
      }
      s.body_from_camera = PoseSE3(q.normalized(), t);
    }
    if (const auto r = root["room"]) {
      check_keys(r, "room", {"min", "max", "landmarks"});
      if (r["min"]) s.room_min = as_vec3(r["min"], "room.min");
      if (r["max"]) s.room_max = as_vec3(r["max"], "room.max");
      read_if(r, "landmarks", s.room_landmarks);
    }
    if (root["trajectory"]) s.trajectory = as_rows<7>(root["trajectory"], "trajectory");
    if (const auto objs = root["objects"]) {
      if (!objs.IsSequence()) spec_error("objects must be a list");
      for (const auto& o : objs) {
        check_keys(o, "objects[]", {"class", "size", "landmarks", "boxed", "static", "waypoints"});
        SceneObject obj;
        read_if(o, "class", obj.class_label);
        if (o["size"]) obj.size = as_vec3(o["size"], "object size");
        read_if(o, "landmarks", obj.landmarks);
        read_if(o, "boxed", obj.boxed);
        read_if(o, "static", obj.is_static);
        if (o["waypoints"]) obj.waypoints = as_rows<4>(o["waypoints"], "object waypoints");
        s.objects.push_back(std::move(obj));
      }
    }
    if (const auto n = root["noise"]) {
      check_keys(n, "noise", {"pixel_sigma", "depth_sigma", "depth_dropout", "gyro_noise", "accel_noise",
                              "gyro_walk", "accel_walk", "accel_bias", "gyro_bias", "bias_walk"});
      read_if(n, "pixel_sigma", s.noise.pixel_sigma);
      read_if(n, "depth_sigma", s.noise.depth_sigma);
      read_if(n, "depth_dropout", s.noise.depth_dropout);
      read_if(n, "gyro_noise", s.noise.imu.gyro_noise);
      read_if(n, "accel_noise", s.noise.imu.accel_noise);
      read_if(n, "gyro_walk", s.noise.imu.gyro_walk);
      read_if(n, "accel_walk", s.noise.imu.accel_walk);
      read_if(n, "bias_walk", s.noise.bias_walk);
      if (n["accel_bias"]) s.noise.accel_bias = as_vec3(n["accel_bias"], "noise.accel_bias");
      if (n["gyro_bias"]) s.noise.gyro_bias = as_vec3(n["gyro_bias"], "noise.gyro_bias");
    }
    if (const auto d = root["detection"]) {
      check_keys(d, "detection", {"miss_probability", "box_jitter", "blackouts"});
      read_if(d, "miss_probability", s.detection.miss_probability);
      read_if(d, "box_jitter", s.detection.box_jitter);
      if (d["blackouts"]) {
        for (const auto& row : as_rows<2>(d["blackouts"], "detection.blackouts"))
          s.detection.blackouts.emplace_back(static_cast<int>(row[0]), static_cast<int>(row[1]));
      }
    }
  } catch (const YAML::Exception& e) {
    spec_error(std::string("scene spec: ") + e.what());
  }
  s.validate();
  return s;
}

SceneSpec SceneSpec::from_yaml_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open scene spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_yaml(ss.str());
}

namespace {

void emit_vec(YAML::Emitter& e, const Vec3& v) {
  e << YAML::Flow << YAML::BeginSeq << v.x() << v.y() << v.z() << YAML::EndSeq;
}

template <size_t N>
void emit_rows(YAML::Emitter& e, const std::vector<std::array<double, N>>& rows) {
  e << YAML::BeginSeq;
  for (const auto& r : rows) {
    e << YAML::Flow << YAML::BeginSeq;
    for (double v : r) e << v;
    e << YAML::EndSeq;
  }
  e << YAML::EndSeq;
}

}  // namespace

std::string SceneSpec::to_yaml() const {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << seed;
  e << YAML::Key << "start_time" << YAML::Value << start_time;
  e << YAML::Key << "duration" << YAML::Value << duration;
  e << YAML::Key << "frame_rate" << YAML::Value << frame_rate;
  e << YAML::Key << "imu_rate" << YAML::Value << imu_rate;
  e << YAML::Key << "texture_cell" << YAML::Value << texture_cell;
  e << YAML::Key << "render_supersample" << YAML::Value << render_supersample;
  e << YAML::Key << "camera" << YAML::Value << YAML::BeginMap << YAML::Key << "fx" << YAML::Value << camera.fx
    << YAML::Key << "fy" << YAML::Value << camera.fy << YAML::Key << "cx" << YAML::Value << camera.cx << YAML::Key
    << "cy" << YAML::Value << camera.cy << YAML::Key << "width" << YAML::Value << camera.width << YAML::Key
    << "height" << YAML::Value << camera.height << YAML::EndMap;
  const Quat& q = body_from_camera.rotation();
  e << YAML::Key << "body_from_camera" << YAML::Value << YAML::BeginMap << YAML::Key << "translation"
    << YAML::Value;
  emit_vec(e, body_from_camera.translation());
  e << YAML::Key << "rotation_xyzw" << YAML::Value << YAML::Flow << YAML::BeginSeq << q.x() << q.y() << q.z()
    << q.w() << YAML::EndSeq << YAML::EndMap;
  e << YAML::Key << "room" << YAML::Value << YAML::BeginMap << YAML::Key << "min" << YAML::Value;
  emit_vec(e, room_min);
  e << YAML::Key << "max" << YAML::Value;
  emit_vec(e, room_max);
  e << YAML::Key << "landmarks" << YAML::Value << room_landmarks << YAML::EndMap;
  e << YAML::Key << "trajectory" << YAML::Value;
  emit_rows(e, trajectory);
  e << YAML::Key << "objects" << YAML::Value << YAML::BeginSeq;
  for (const auto& o : objects) {
    e << YAML::BeginMap << YAML::Key << "class" << YAML::Value << o.class_label << YAML::Key << "size"
      << YAML::Value;
    emit_vec(e, o.size);
    e << YAML::Key << "landmarks" << YAML::Value << o.landmarks << YAML::Key << "boxed" << YAML::Value << o.boxed
      << YAML::Key << "static" << YAML::Value << o.is_static << YAML::Key << "waypoints" << YAML::Value;
    emit_rows(e, o.waypoints);
    e << YAML::EndMap;
  }
  e << YAML::EndSeq;
  e << YAML::Key << "noise" << YAML::Value << YAML::BeginMap << YAML::Key << "pixel_sigma" << YAML::Value
    << noise.pixel_sigma << YAML::Key << "depth_sigma" << YAML::Value << noise.depth_sigma << YAML::Key
    << "depth_dropout" << YAML::Value << noise.depth_dropout << YAML::Key << "gyro_noise" << YAML::Value
    << noise.imu.gyro_noise << YAML::Key << "accel_noise" << YAML::Value << noise.imu.accel_noise << YAML::Key
    << "gyro_walk" << YAML::Value << noise.imu.gyro_walk << YAML::Key << "accel_walk" << YAML::Value
    << noise.imu.accel_walk << YAML::Key << "accel_bias" << YAML::Value;
  emit_vec(e, noise.accel_bias);
  e << YAML::Key << "gyro_bias" << YAML::Value;
  emit_vec(e, noise.gyro_bias);
  e << YAML::Key << "bias_walk" << YAML::Value << noise.bias_walk << YAML::EndMap;
  e << YAML::Key << "detection" << YAML::Value << YAML::BeginMap << YAML::Key << "miss_probability" << YAML::Value
    << detection.miss_probability << YAML::Key << "box_jitter" << YAML::Value << detection.box_jitter << YAML::Key
    << "blackouts" << YAML::Value << YAML::BeginSeq;
  for (const auto& [a, b] : detection.blackouts) e << YAML::Flow << YAML::BeginSeq << a << b << YAML::EndSeq;
  e << YAML::EndSeq << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// Presets

namespace {

std::vector<std::array<double, 7>> wander(Rng& rng, double duration, const Vec3& base, const Vec3& reach,
                                          double yaw_reach, double step) {
  std::vector<std::array<double, 7>> w;
  for (double t = -step; t <= duration + 2.0 * step; t += step) {
    const bool anchor = t <= 0.0;
    const Vec3 off = anchor ? Vec3::Zero()
                            : Vec3(rng.uniform(-1, 1) * reach.x(), rng.uniform(-1, 1) * reach.y(),
                                   rng.uniform(-1, 1) * reach.z());
    const double yaw = anchor ? 0.0 : rng.uniform(-1, 1) * yaw_reach;
    const double pitch = anchor ? 0.0 : rng.uniform(-1, 1) * 0.08;
    const double roll = anchor ? 0.0 : rng.uniform(-1, 1) * 0.04;
    const Vec3 p = base + off;
    w.push_back({t, p.x(), p.y(), p.z(), yaw, pitch, roll});
  }
  return w;
}

/// Back-and-forth walk between two points with a short pause at each end.
std::vector<std::array<double, 4>> pace(const Vec3& a, const Vec3& b, double speed, double pause, double phase,
                                        double duration) {
  std::vector<std::array<double, 4>> w;
  const double leg = (b - a).norm() / speed;
  double t = -phase - leg - pause;
  bool at_a = true;
  while (t < duration + leg + pause) {
    const Vec3& p = at_a ? a : b;
    w.push_back({t, p.x(), p.y(), p.z()});
    w.push_back({t + pause, p.x(), p.y(), p.z()});
    t += pause + leg;
    at_a = !at_a;
  }
  return w;
}

std::vector<std::array<double, 4>> sway(const Vec3& c, double amplitude, double period, double duration) {
  std::vector<std::array<double, 4>> w;
  int k = 0;
  for (double t = -period; t < duration + period; t += period / 2.0, ++k) {
    const double s = (k % 2 == 0) ? amplitude : -amplitude;
    w.push_back({t, c.x() + 0.4 * s, c.y() + s, c.z()});
  }
  return w;
}

SceneObject furniture(const char* label, const Vec3& center, const Vec3& size, int landmarks) {
  SceneObject o;
  o.class_label = label;
  o.size = size;
  o.landmarks = landmarks;
  o.boxed = false;
  o.is_static = true;
  o.waypoints = {{0.0, center.x(), center.y(), center.z()}};
  return o;
}

}  // namespace

SceneSpec static_scene(std::uint64_t seed, double duration) {
  SceneSpec s;
  s.seed = seed;
  s.duration = duration;
  Rng rng(seed, 0x7363656E65ULL);
  s.trajectory = wander(rng, duration, Vec3(0.0, 0.0, 1.3), Vec3(0.35, 0.5, 0.15), 0.3, 1.5);
  s.objects.push_back(furniture("desk", Vec3(3.2, 0.3, 0.38), Vec3(0.9, 1.8, 0.76), 120));
  s.objects.push_back(furniture("cabinet", Vec3(4.4, -2.2, 0.9), Vec3(0.9, 0.9, 1.8), 80));
  s.objects.push_back(furniture("shelf", Vec3(4.6, 2.3, 1.0), Vec3(0.7, 1.0, 2.0), 80));
  s.noise.accel_bias = Vec3(0.03, -0.02, 0.04);
  s.noise.gyro_bias = Vec3(0.002, -0.001, 0.0015);
  s.noise.depth_sigma = 0.0025;
  s.noise.depth_dropout = 0.02;
  s.detection.miss_probability = 0.1;
  s.detection.box_jitter = 2.0;
  return s;
}

SceneSpec walking_scene(std::uint64_t seed, double duration) {
  SceneSpec s = static_scene(seed, duration);
  auto person = [](const char* label, std::vector<std::array<double, 4>> w, double height, int landmarks,
                   bool boxed) {
    SceneObject o;
    o.class_label = label;
    o.size = Vec3(0.35, 0.5, height);
    o.landmarks = landmarks;
    o.boxed = boxed;
    o.waypoints = std::move(w);
    return o;
  };
  // Two people pacing along the viewing direction, one crossing diagonally.
  s.objects.push_back(person("person", pace(Vec3(1.7, -0.45, 0.85), Vec3(3.9, -0.7, 0.85), 0.9, 0.8, 0.0, duration),
                             1.7, 115, true));
  s.objects.push_back(person("person", pace(Vec3(3.8, 0.6, 0.85), Vec3(1.8, 0.35, 0.85), 0.8, 1.2, 1.7, duration),
                             1.7, 115, true));
  s.objects.push_back(person("person", pace(Vec3(2.6, -2.0, 0.85), Vec3(2.2, 1.9, 0.85), 0.7, 1.5, 3.1, duration),
                             1.7, 100, true));
  // Seated person rocking slowly.
  s.objects.push_back(person("person", sway(Vec3(2.3, 1.25, 0.65), 0.06, 3.0, duration), 1.3, 100, true));
  // Unlabeled mover the detector does not know.
  SceneObject chair;
  chair.class_label = "chair";
  chair.size = Vec3(0.5, 0.5, 0.9);
  chair.landmarks = 380;
  chair.boxed = false;
  chair.waypoints = pace(Vec3(2.0, -1.4, 0.45), Vec3(2.1, 0.6, 0.45), 0.5, 1.0, 0.7, duration);
  s.objects.push_back(chair);
  return s;
}

// ---------------------------------------------------------------------------
// Scene

namespace {

double slab_enter(const Vec3& origin, const Vec3& dir, const Vec3& lo, const Vec3& hi) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < lo[a] || origin[a] > hi[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double ta = (lo[a] - origin[a]) / dir[a];
    double tb = (hi[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t1 <= 0.0) return std::numeric_limits<double>::infinity();
  return t0;
}

constexpr std::uint64_t kDepthKey = 0x4445505448ULL;
constexpr std::uint64_t kLandmarkDepthKey = 0x4C44455054ULL;
constexpr std::uint64_t kPixelKey = 0x504958454CULL;
constexpr std::uint64_t kMissKey = 0x4D495353ULL;
constexpr std::uint64_t kJitterKey = 0x4A4954ULL;
constexpr std::uint64_t kTextureKey = 0x54455854ULL;

std::uint64_t key3(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d = 0) {
  return hash_combine(hash_combine(hash_combine(a, b), c), d);
}

}  // namespace

Scene Scene::generate(const SceneSpec& spec) {
  spec.validate();
  Scene s;
  s.spec_ = spec;
  s.trajectory_ = BodyTrajectory(spec.trajectory);
  for (const auto& o : spec.objects) {
    std::vector<double> t;
    std::array<std::vector<double>, 3> v;
    for (const auto& w : o.waypoints) {
      t.push_back(w[0]);
      for (int k = 0; k < 3; ++k) v[k].push_back(w[k + 1]);
    }
    s.object_paths_.push_back({CubicSpline(t, v[0]), CubicSpline(t, v[1]), CubicSpline(t, v[2])});
  }

  // Landmarks on the room faces, area-weighted, then on each object's faces.
  Rng rng(spec.seed, 1);
  auto sample_box_surface = [&rng](const Vec3& lo, const Vec3& hi) {
    const Vec3 e = hi - lo;
    const double areas[3] = {e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};
    const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
    double pick = rng.uniform() * total;
    int axis = 0;
    bool high = false;
    for (int f = 0; f < 6; ++f) {
      const double a = areas[f / 2];
      if (pick < a || f == 5) {
        axis = f / 2;
        high = f % 2 == 1;
        break;
      }
      pick -= a;
    }
    Vec3 p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()), rng.uniform(lo.z(), hi.z()));
    p[axis] = high ? hi[axis] : lo[axis];
    return p;
  };
  for (int i = 0; i < spec.room_landmarks; ++i) {
    SceneLandmark l;
    l.position = sample_box_surface(spec.room_min, spec.room_max);
    l.score = rng.uniform_int(20, 120);
    s.landmarks_.push_back(l);
  }
  for (size_t o = 0; o < spec.objects.size(); ++o) {
    const Vec3 half = spec.objects[o].size / 2.0;
    for (int i = 0; i < spec.objects[o].landmarks; ++i) {
      SceneLandmark l;
      l.position = sample_box_surface(-half, half);
      l.object = static_cast<int>(o);
      l.score = rng.uniform_int(20, 120);
      s.landmarks_.push_back(l);
    }
  }

  // IMU stream with bias random walk.
  const double dt = 1.0 / spec.imu_rate;
  const int n_imu = static_cast<int>(std::floor(spec.duration * spec.imu_rate + 1e-9)) + 1;
  Rng imu_rng(spec.seed, 2);
  ImuBias bias{spec.noise.gyro_bias, spec.noise.accel_bias};
  const double gn = spec.noise.imu.gyro_noise * std::sqrt(spec.imu_rate);
  const double an = spec.noise.imu.accel_noise * std::sqrt(spec.imu_rate);
  const double gw = spec.noise.imu.gyro_walk * std::sqrt(dt);
  const double aw = spec.noise.imu.accel_walk * std::sqrt(dt);
  const Vec3 g = gravity_vector();
  for (int k = 0; k < n_imu; ++k) {
    const double tau = k * dt;
    const Quat q = s.trajectory_.rotation(tau);
    ImuSample smp;
    smp.timestamp = spec.start_time + tau;
    smp.gyro = s.trajectory_.angular_velocity_body(tau) + bias.gyro +
               Vec3(imu_rng.normal(gn), imu_rng.normal(gn), imu_rng.normal(gn));
    smp.accel = q.inverse() * (s.trajectory_.acceleration(tau) - g) + bias.accel +
                Vec3(imu_rng.normal(an), imu_rng.normal(an), imu_rng.normal(an));
    s.imu_.push_back(smp);
    s.bias_track_.emplace_back(smp.timestamp, bias);
    if (spec.noise.bias_walk) {
      bias.gyro += Vec3(imu_rng.normal(gw), imu_rng.normal(gw), imu_rng.normal(gw));
      bias.accel += Vec3(imu_rng.normal(aw), imu_rng.normal(aw), imu_rng.normal(aw));
    }
  }

  // Frames, object placements and detections.
  const int n_frames = static_cast<int>(std::floor(spec.duration * spec.frame_rate + 1e-9)) + 1;
  const PinholeCamera& cam = spec.camera;
  for (int f = 0; f < n_frames; ++f) {
    SceneFrame fr;
    fr.index = f;
    fr.timestamp = spec.start_time + f / spec.frame_rate;
    fr.truth = s.truth_at(fr.timestamp);
    std::vector<Vec3> centers;
    for (size_t o = 0; o < spec.objects.size(); ++o) centers.push_back(s.object_center(static_cast<int>(o), fr.timestamp));
    s.object_centers_.push_back(centers);

    const PoseSE3 cam_from_world = (fr.truth.pose * spec.body_from_camera).inverse();
    for (size_t o = 0; o < spec.objects.size(); ++o) {
      const SceneObject& obj = spec.objects[o];
      if (!obj.boxed || obj.is_static) continue;
      const Vec3 half = obj.size / 2.0;
      double x1 = 1e300, y1 = 1e300, x2 = -1e300, y2 = -1e300;
      bool behind = false;
      for (int c = 0; c < 8; ++c) {
        const Vec3 corner = centers[o] + Vec3((c & 1) ? half.x() : -half.x(), (c & 2) ? half.y() : -half.y(),
                                              (c & 4) ? half.z() : -half.z());
        const Vec3 pc = cam_from_world * corner;
        if (pc.z() <= 0.1) {
          behind = true;
          break;
        }
        const Vec2 uv(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
        x1 = std::min(x1, uv.x());
        y1 = std::min(y1, uv.y());
        x2 = std::max(x2, uv.x());
        y2 = std::max(y2, uv.y());
      }
      if (behind) continue;
      DetectionBox b;
      b.class_label = obj.class_label;
      b.x1 = x1;
      b.y1 = y1;
      b.x2 = x2;
      b.y2 = y2;
      b.score = 0.9;
      b.frame_index = f;
      b.object_id = static_cast<int>(o);
      const DetectionBox clamped = b.clamped(cam.width, cam.height);
      if (clamped.empty()) continue;
      fr.true_boxes.push_back(b);
    }

    bool blank = unit_from_bits(mix64(key3(spec.seed, kMissKey, static_cast<std::uint64_t>(f)))) <
                 spec.detection.miss_probability;
    for (const auto& [a, b] : spec.detection.blackouts)
      if (f >= a && f <= b) blank = true;
    if (!blank) {
      for (const auto& tb : fr.true_boxes) {
        DetectionBox d = tb;
        const double j = spec.detection.box_jitter;
        const auto base = key3(spec.seed, kJitterKey, static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(tb.object_id));
        d.x1 += j * keyed_normal(hash_combine(base, 1));
        d.y1 += j * keyed_normal(hash_combine(base, 2));
        d.x2 += j * keyed_normal(hash_combine(base, 3));
        d.y2 += j * keyed_normal(hash_combine(base, 4));
        d = d.clamped(cam.width, cam.height);
        if (d.empty()) continue;
        d.object_id = -1;
        fr.detections.push_back(d);
      }
    }
    s.frames_.push_back(std::move(fr));
  }
  return s;
}

NavState Scene::truth_at(double t) const {
  const double tau = t - spec_.start_time;
  NavState s;
  s.pose = PoseSE3(trajectory_.rotation(tau), trajectory_.position(tau));
  s.velocity = trajectory_.velocity(tau);
  if (!bias_track_.empty()) {
    auto it = std::upper_bound(bias_track_.begin(), bias_track_.end(), t,
                               [](double v, const auto& e) { return v < e.first; });
    if (it != bias_track_.begin()) --it;
    s.bias = it->second;
  } else {
    s.bias = {spec_.noise.gyro_bias, spec_.noise.accel_bias};
  }
  return s;
}

Vec3 Scene::object_center(int object, double t) const {
  const double tau = t - spec_.start_time;
  const auto& p = object_paths_[object];
  return {p[0].value(tau), p[1].value(tau), p[2].value(tau)};
}

Vec3 Scene::landmark_world(int id, double t) const {
  const SceneLandmark& l = landmarks_[id];
  if (l.object < 0) return l.position;
  return object_center(l.object, t) + l.position;
}

bool Scene::landmark_dynamic(int id) const {
  const int o = landmarks_[id].object;
  return o >= 0 && !spec_.objects[o].is_static;
}

bool Scene::landmark_boxed(int id) const {
  const int o = landmarks_[id].object;
  return o >= 0 && spec_.objects[o].boxed && !spec_.objects[o].is_static;
}

PoseSE3 Scene::world_from_camera(FrameIndex f) const { return frames_[f].truth.pose * spec_.body_from_camera; }

std::vector<LandmarkView> Scene::visible(FrameIndex f) const {
  std::vector<LandmarkView> out;
  const PoseSE3 wc = world_from_camera(f);
  const PoseSE3 cw = wc.inverse();
  const Vec3 c = wc.translation();
  const double t = frames_[f].timestamp;
  const auto& centers = object_centers_[f];
  const PinholeCamera& cam = spec_.camera;
  for (int id = 0; id < static_cast<int>(landmarks_.size()); ++id) {
    const Vec3 pw = landmark_world(id, t);
    const Vec3 pc = cw * pw;
    if (pc.z() <= 0.1) continue;
    const Vec2 uv(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
    if (!cam.in_image(uv, 1.0)) continue;
    const Vec3 dir = pw - c;
    bool occluded = false;
    for (size_t o = 0; o < centers.size() && !occluded; ++o) {
      const Vec3 half = spec_.objects[o].size / 2.0;
      const double s = slab_enter(c, dir, centers[o] - half, centers[o] + half);
      if (s < 1.0 - 1e-7) occluded = true;
    }
    if (occluded) continue;
    out.push_back({id, uv, pc.z()});
  }
  return out;
}

Scene::Hit Scene::raycast(FrameIndex f, const Vec3& origin, const Vec3& dir) const {
  Hit hit;
  hit.t = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) continue;
    const bool up = dir[a] > 0;
    const double t = ((up ? spec_.room_max[a] : spec_.room_min[a]) - origin[a]) / dir[a];
    if (t > 0 && t < hit.t) {
      hit.t = t;
      hit.surface = 2 * a + (up ? 1 : 0);
    }
  }
  const auto& centers = object_centers_[f];
  for (size_t o = 0; o < centers.size(); ++o) {
    const Vec3 half = spec_.objects[o].size / 2.0;
    const double t = slab_enter(origin, dir, centers[o] - half, centers[o] + half);
    if (t > 0 && t < hit.t) {
      hit.t = t;
      hit.surface = 6 + static_cast<int>(o);
    }
  }
  if (hit.surface >= 0) hit.point = origin + hit.t * dir;
  return hit;
}

double Scene::true_depth(FrameIndex f, double x, double y) const {
  const PoseSE3 wc = world_from_camera(f);
  const Vec3 dir = wc.rotation() * spec_.camera.normalized(Vec2(x, y));
  const Hit h = raycast(f, wc.translation(), dir);
  return h.surface >= 0 ? h.t : 0.0;
}

double Scene::measured_depth(FrameIndex f, int x, int y) const {
  if (x < 0 || y < 0 || x >= spec_.camera.width || y >= spec_.camera.height) return 0.0;
  const double d = true_depth(f, x, y);
  if (!(d > 0.0)) return 0.0;
  const auto key = key3(spec_.seed, kDepthKey, static_cast<std::uint64_t>(f),
                        static_cast<std::uint64_t>(y) * 65536ULL + static_cast<std::uint64_t>(x));
  if (unit_from_bits(mix64(key ^ 0xD0ULL)) < spec_.noise.depth_dropout) return 0.0;
  return std::max(0.0, d + spec_.noise.depth_sigma * d * d * keyed_normal(key));
}

double Scene::measured_landmark_depth(FrameIndex f, int landmark, double true_z) const {
  const auto key =
      key3(spec_.seed, kLandmarkDepthKey, static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(landmark));
  if (unit_from_bits(mix64(key ^ 0xD0ULL)) < spec_.noise.depth_dropout) return 0.0;
  return std::max(0.0, true_z + spec_.noise.depth_sigma * true_z * true_z * keyed_normal(key));
}

Vec2 Scene::noisy_pixel(FrameIndex f, int landmark, const Vec2& pixel) const {
  const auto key = key3(spec_.seed, kPixelKey, static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(landmark));
  return pixel + spec_.noise.pixel_sigma * Vec2(keyed_normal(hash_combine(key, 1)), keyed_normal(hash_combine(key, 2)));
}

DepthSampler Scene::depth_sampler(FrameIndex f) const {
  return [this, f](int x, int y) { return measured_depth(f, x, y); };
}

std::uint8_t Scene::shade(FrameIndex f, const Hit& hit) const {
  Vec3 local = hit.point;
  int face = hit.surface;
  int axis = hit.surface / 2;
  if (hit.surface >= 6) {
    const int o = hit.surface - 6;
    local = hit.point - object_centers_[f][o];
    const Vec3 half = spec_.objects[o].size / 2.0;
    const Vec3 ratio = local.cwiseAbs().cwiseQuotient(half);
    ratio.maxCoeff(&axis);
    face = 6 + 6 * o + 2 * axis + (local[axis] > 0 ? 1 : 0);
  }
  const double u = local[(axis + 1) % 3];
  const double v = local[(axis + 2) % 3];
  const double cs = spec_.texture_cell;
  auto cell = [&](double scale, std::uint64_t layer) {
    const auto i = static_cast<std::int64_t>(std::floor(u / (cs * scale)));
    const auto j = static_cast<std::int64_t>(std::floor(v / (cs * scale)));
    return unit_from_bits(mix64(key3(spec_.seed ^ kTextureKey, static_cast<std::uint64_t>(face) * 8 + layer,
                                     static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j))));
  };
  const double value = 25.0 + 150.0 * cell(1.0, 0) + 70.0 * cell(3.0, 1);
  return static_cast<std::uint8_t>(std::clamp(value, 0.0, 255.0));
}

GrayImage Scene::render(FrameIndex f) const {
  const PinholeCamera& cam = spec_.camera;
  GrayImage img(cam.width, cam.height);
  const PoseSE3 wc = world_from_camera(f);
  const Mat3 r = wc.rotation_matrix();
  const int ss = spec_.render_supersample;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double px = x + (sx + 0.5) / ss - 0.5;
          const double py = y + (sy + 0.5) / ss - 0.5;
          const Hit h = raycast(f, wc.translation(), r * cam.normalized(Vec2(px, py)));
          acc += h.surface >= 0 ? shade(f, h) : 0.0;
        }
      img(x, y) = static_cast<std::uint8_t>(std::lround(acc / (ss * ss)));
    }
  return img;
}

DepthImage Scene::render_depth(FrameIndex f) const {
  const PinholeCamera& cam = spec_.camera;
  DepthImage d(cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) d(x, y) = static_cast<float>(measured_depth(f, x, y));
  return d;
}

Trajectory Scene::ground_truth() const {
  std::vector<std::pair<double, PoseSE3>> out;
  for (const auto& f : frames_) out.emplace_back(f.timestamp, f.truth.pose);
  return out;
}

// ---------------------------------------------------------------------------
// Export

void export_tum(const Scene& scene, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root / "rgb", ec);
  fs::create_directories(root / "depth", ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + root.string() + ": " + ec.message());
  constexpr double kDepthOffset = 0.003;  // depth stamps trail color slightly, like a real sensor pair
  constexpr double kDepthScale = 5000.0;

  auto open = [&](const fs::path& p) {
    std::ofstream out(p);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + p.string());
    out << std::fixed << std::setprecision(6);
    return out;
  };
  auto stamp = [](double t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", t);
    return std::string(buf);
  };

  std::ofstream rgb = open(root / "rgb.txt");
  std::ofstream depth = open(root / "depth.txt");
  rgb << "# color images\n# timestamp filename\n";
  depth << "# depth maps\n# timestamp filename\n";
  for (const auto& f : scene.frames()) {
    const std::string cname = "rgb/" + stamp(f.timestamp) + ".png";
    const std::string dname = "depth/" + stamp(f.timestamp + kDepthOffset) + ".png";
    write_rgb_png(root / cname, scene.render(f.index));
    write_depth_png(root / dname, scene.render_depth(f.index), kDepthScale);
    rgb << stamp(f.timestamp) << " " << cname << "\n";
    depth << stamp(f.timestamp + kDepthOffset) << " " << dname << "\n";
  }

  std::ofstream gt = open(root / "groundtruth.txt");
  gt << "# timestamp tx ty tz qx qy qz qw\n" << std::setprecision(9);
  for (const auto& f : scene.frames()) {
    const auto& p = f.truth.pose;
    const Quat& q = p.rotation();
    gt << f.timestamp << " " << p.translation().x() << " " << p.translation().y() << " " << p.translation().z() << " "
       << q.x() << " " << q.y() << " " << q.z() << " " << q.w() << "\n";
  }

  std::ofstream imu = open(root / "imu.csv");
  imu << "timestamp,wx,wy,wz,ax,ay,az\n" << std::setprecision(9);
  for (const auto& s : scene.imu())
    imu << s.timestamp << "," << s.gyro.x() << "," << s.gyro.y() << "," << s.gyro.z() << "," << s.accel.x() << ","
        << s.accel.y() << "," << s.accel.z() << "\n";

  std::ofstream det = open(root / "detections.txt");
  det << "# timestamp class x1 y1 x2 y2 score\n";
  for (const auto& f : scene.frames())
    for (const auto& b : f.detections)
      det << f.timestamp << " " << b.class_label << " " << std::setprecision(3) << b.x1 << " " << b.y1 << " " << b.x2
          << " " << b.y2 << " " << b.score << std::setprecision(6) << "\n";

  const auto& spec = scene.spec();
  std::ofstream sensor = open(root / "sensor.yaml");
  const Quat& q = spec.body_from_camera.rotation();
  const Vec3& t = spec.body_from_camera.translation();
  sensor << std::setprecision(12) << "camera:\n  fx: " << spec.camera.fx << "\n  fy: " << spec.camera.fy
         << "\n  cx: " << spec.camera.cx << "\n  cy: " << spec.camera.cy << "\n  width: " << spec.camera.width
         << "\n  height: " << spec.camera.height << "\nbody_from_camera:\n  translation: [" << t.x() << ", " << t.y()
         << ", " << t.z() << "]\n  rotation_xyzw: [" << q.x() << ", " << q.y() << ", " << q.z() << ", " << q.w()
         << "]\ndepth_scale: " << kDepthScale << "\nimu:\n  gyro_noise: " << spec.noise.imu.gyro_noise
         << "\n  accel_noise: " << spec.noise.imu.accel_noise << "\n  gyro_walk: " << spec.noise.imu.gyro_walk
         << "\n  accel_walk: " << spec.noise.imu.accel_walk << "\n";

  std::ofstream spec_out = open(root / "scene.yaml");
  spec_out << spec.to_yaml();
}

// ---------------------------------------------------------------------------
// Synthetic front end

SyntheticFrontend::SyntheticFrontend(const SyntheticFrontendConfig& cfg, const Scene& scene)
    : cfg_(cfg), scene_(scene) {
  cfg_.grid.validate();
}

SyntheticFrame SyntheticFrontend::process(FrameIndex f) {
  SyntheticFrame out;
  const auto t0 = std::chrono::steady_clock::now();
  const auto& frame = scene_.frames()[f];
  out.output.frame_index = f;
  out.output.timestamp = frame.timestamp;
  const PinholeCamera& cam = scene_.spec().camera;

  const auto views = scene_.visible(f);
  std::vector<int> view_of(scene_.landmarks().size(), -1);
  for (size_t i = 0; i < views.size(); ++i) view_of[views[i].landmark] = static_cast<int>(i);

  std::vector<Track> kept;
  for (const auto& t : tracks_) {
    const int v = view_of[t.landmark];
    if (v < 0) {
      out.output.unstable.push_back(t.pixel);
      continue;
    }
    Track n = t;
    n.pixel = scene_.noisy_pixel(f, t.landmark, views[v].pixel);
    if (!cam.in_image(n.pixel)) {
      out.output.unstable.push_back(t.pixel);
      continue;
    }
    kept.push_back(n);
  }
  tracks_ = std::move(kept);
  out.output.tracked = static_cast<int>(tracks_.size());

  if (cfg_.circular_mask) {
    std::stable_sort(tracks_.begin(), tracks_.end(), [](const Track& a, const Track& b) { return a.length > b.length; });
    CircularMask thin(cam.width, cam.height);
    std::vector<Track> spaced;
    for (const auto& t : tracks_) {
      if (thin.blocked(t.pixel)) continue;
      thin.block_disk(t.pixel, cfg_.grid.mask_radius);
      spaced.push_back(t);
    }
    tracks_ = std::move(spaced);
  }
  std::vector<Vec2> kept_px;
  std::set<int> tracked_landmarks;
  for (const auto& t : tracks_) {
    kept_px.push_back(t.pixel);
    tracked_landmarks.insert(t.landmark);
  }
  const auto t1 = std::chrono::steady_clock::now();
  out.output.tracking_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

  // Candidate corners: visible, untracked landmarks at their rounded noisy pixel.
  std::map<std::pair<int, int>, std::pair<int, int>> at_pixel;  // (x, y) -> (landmark, score)
  for (const auto& v : views) {
    if (tracked_landmarks.contains(v.landmark)) continue;
    const Vec2 p = scene_.noisy_pixel(f, v.landmark, v.pixel);
    const int x = static_cast<int>(std::lround(p.x()));
    const int y = static_cast<int>(std::lround(p.y()));
    if (x < 0 || y < 0 || x >= cam.width || y >= cam.height) continue;
    const int score = scene_.landmarks()[v.landmark].score;
    auto [it, inserted] = at_pixel.try_emplace({x, y}, v.landmark, score);
    if (!inserted && score > it->second.second) it->second = {v.landmark, score};
  }
  CandidateSource source = [&at_pixel](const PixelRect& cell, const CircularMask& mask) {
    std::vector<CornerCandidate> c;
    for (auto it = at_pixel.lower_bound({cell.x0, std::numeric_limits<int>::min()});
         it != at_pixel.end() && it->first.first < cell.x1; ++it) {
      const auto [x, y] = it->first;
      if (y < cell.y0 || y >= cell.y1 || mask.blocked(x, y)) continue;
      c.push_back({x, y, it->second.second});
    }
    std::sort(c.begin(), c.end(), candidate_before);
    return c;
  };
  const CircularMask mask = cfg_.circular_mask
                                ? build_mask(cam.width, cam.height, kept_px, out.output.unstable, cfg_.grid)
                                : CircularMask(cam.width, cam.height);
  const GridDetection det =
      select_new_features(cam.width, cam.height, source, mask, kept_px, cfg_.grid, skip_, cfg_.circular_mask);
  skip_ = det.next_skip;
  out.output.cells_scanned = det.cells_scanned;
  for (const auto& nf : det.features) {
    const auto& [landmark, score] = at_pixel.at({static_cast<int>(nf.pixel.x()), static_cast<int>(nf.pixel.y())});
    const Vec2 p = scene_.noisy_pixel(f, landmark, views[view_of[landmark]].pixel);
    tracks_.push_back({next_id_++, landmark, p, 0});
  }
  out.output.detected = static_cast<int>(det.features.size());
  out.output.detection_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t1).count();

  for (auto& t : tracks_) {
    ++t.length;
    const double z = views[view_of[t.landmark]].depth;
    out.output.observations.push_back({t.id, t.pixel, f, scene_.measured_landmark_depth(f, t.landmark, z)});
    out.output.track_lengths.push_back(t.length);
    out.landmark_of.push_back(t.landmark);
  }
  return out;
}

}  // namespace dvio
