#include "dvio/dataset.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "dvio/error.hpp"

namespace dvio {

namespace {

namespace fs = std::filesystem;

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  return in;
}

bool skip_line(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

[[noreturn]] void parse_error(const fs::path& path, int line_no, const std::string& what) {
  throw Error(ErrorCode::IoFailure, path.string() + ":" + std::to_string(line_no) + ": " + what);
}

void require_increasing(const fs::path& path, int line_no, double prev, double t, bool strict = true) {
  if (strict ? !(t > prev) : t < prev) {
    std::ostringstream os;
    os << path.string() << ":" << line_no << ": timestamp " << std::fixed << t << " after " << prev;
    throw Error(ErrorCode::NonMonotonicTimestamp, os.str());
  }
}

}  // namespace

std::vector<DetectionBox> SequenceManifest::detections_at(double t, double tolerance) const {
  auto it = std::lower_bound(detections.begin(), detections.end(), t - tolerance,
                             [](const TimedDetections& d, double v) { return d.timestamp < v; });
  const TimedDetections* best = nullptr;
  for (; it != detections.end() && it->timestamp <= t + tolerance; ++it)
    if (!best || std::abs(it->timestamp - t) < std::abs(best->timestamp - t)) best = &*it;
  return best ? best->boxes : std::vector<DetectionBox>{};
}

std::vector<std::pair<size_t, size_t>> associate(std::span<const double> a, std::span<const double> b,
                                                 double tolerance) {
  // Candidates ordered by |dt|, then by ta + tb. Two candidates tied on both keys never share
  // an element, so the result does not depend on which list is passed first.
  std::vector<std::tuple<double, double, size_t, size_t>> cand;
  for (size_t i = 0; i < a.size(); ++i) {
    auto lo = std::lower_bound(b.begin(), b.end(), a[i] - tolerance);
    for (auto it = lo; it != b.end() && *it <= a[i] + tolerance; ++it) {
      const auto j = static_cast<size_t>(it - b.begin());
      cand.emplace_back(std::abs(a[i] - b[j]), a[i] + b[j], i, j);
    }
  }
  std::sort(cand.begin(), cand.end(), [](const auto& x, const auto& y) {
    return std::tie(std::get<0>(x), std::get<1>(x)) < std::tie(std::get<0>(y), std::get<1>(y));
  });
  std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
  std::vector<std::pair<size_t, size_t>> out;
  for (const auto& [dt, sum, i, j] : cand) {
    if (used_a[i] || used_b[j]) continue;
    used_a[i] = used_b[j] = 1;
    out.emplace_back(i, j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<TimedPath> read_file_list(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::vector<TimedPath> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (skip_line(line)) continue;
    std::istringstream ls(line);
    TimedPath e;
    std::string file;
    if (!(ls >> e.timestamp >> file)) parse_error(path, n, "expected 'timestamp filename'");
    e.path = path.parent_path() / file;
    if (!out.empty()) require_increasing(path, n, out.back().timestamp, e.timestamp);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ImuSample> read_imu_csv(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::vector<ImuSample> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (skip_line(line)) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double v[7];
    int k = 0;
    while (k < 7 && ls >> v[k]) ++k;
    if (k < 7) {
      if (out.empty() && n == 1) continue;  // header row
      parse_error(path, n, "expected 7 numeric columns");
    }
    ImuSample s{v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])};
    if (!out.empty()) require_increasing(path, n, out.back().timestamp, s.timestamp);
    out.push_back(s);
  }
  return out;
}

std::vector<TimedDetections> read_detections(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::vector<TimedDetections> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (skip_line(line)) continue;
    std::istringstream ls(line);
    double t = 0.0;
    DetectionBox b;
    if (!(ls >> t >> b.class_label >> b.x1 >> b.y1 >> b.x2 >> b.y2 >> b.score))
      parse_error(path, n, "expected 'timestamp class x1 y1 x2 y2 score'");
    if (!out.empty()) require_increasing(path, n, out.back().timestamp, t, false);
    if (out.empty() || out.back().timestamp != t) out.push_back({t, {}});
    out.back().boxes.push_back(std::move(b));
  }
  return out;
}

Trajectory read_trajectory(const fs::path& path) {
  std::ifstream in = open_input(path);
  Trajectory out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (skip_line(line)) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) parse_error(path, n, "expected 8 columns");
    const Quat q(qw, qx, qy, qz);
    if (q.norm() < 1e-9) parse_error(path, n, "zero quaternion");
    if (!out.empty()) require_increasing(path, n, out.back().first, t);
    out.emplace_back(t, PoseSE3(q.normalized(), Vec3(tx, ty, tz)));
  }
  return out;
}

void write_trajectory(const fs::path& path, const Trajectory& trajectory) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  char buf[256];
  for (const auto& [t, pose] : trajectory) {
    const Vec3& p = pose.translation();
    const Quat& q = pose.rotation();
    std::snprintf(buf, sizeof(buf), "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", t, p.x(), p.y(), p.z(), q.x(),
                  q.y(), q.z(), q.w());
    out << buf;
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

SensorConfig read_sensor_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  SensorConfig s;
  try {
    const YAML::Node root = YAML::LoadFile(path.string());
    if (const auto c = root["camera"]) {
      s.camera.fx = c["fx"].as<double>(s.camera.fx);
      s.camera.fy = c["fy"].as<double>(s.camera.fy);
      s.camera.cx = c["cx"].as<double>(s.camera.cx);
      s.camera.cy = c["cy"].as<double>(s.camera.cy);
      s.camera.width = c["width"].as<int>(s.camera.width);
      s.camera.height = c["height"].as<int>(s.camera.height);
    }
    if (const auto b = root["body_from_camera"]) {
      Vec3 t = Vec3::Zero();
      Quat q = Quat::Identity();
      if (const auto tn = b["translation"]) t = Vec3(tn[0].as<double>(), tn[1].as<double>(), tn[2].as<double>());
      if (const auto r = b["rotation_xyzw"])
        q = Quat(r[3].as<double>(), r[0].as<double>(), r[1].as<double>(), r[2].as<double>()).normalized();
      s.body_from_camera = PoseSE3(q, t);
    }
    s.depth_scale = root["depth_scale"].as<double>(s.depth_scale);
    if (const auto i = root["imu"]) {
      s.imu.gyro_noise = i["gyro_noise"].as<double>(s.imu.gyro_noise);
      s.imu.accel_noise = i["accel_noise"].as<double>(s.imu.accel_noise);
      s.imu.gyro_walk = i["gyro_walk"].as<double>(s.imu.gyro_walk);
      s.imu.accel_walk = i["accel_walk"].as<double>(s.imu.accel_walk);
    }
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::IoFailure, path.string() + ": " + e.what());
  }
  s.camera.validate();
  return s;
}

SequenceManifest load_sequence(const fs::path& root, const LoadOptions& options) {
  SequenceManifest m;
  m.root = root;
  if (fs::exists(root / "sensor.yaml")) {
    m.sensor = read_sensor_config(root / "sensor.yaml");
    m.depth_scale = m.sensor->depth_scale;
  }
  if (options.depth_scale) m.depth_scale = *options.depth_scale;

  const auto color = read_file_list(root / "rgb.txt");
  const auto depth = read_file_list(root / "depth.txt");
  std::vector<double> tc, td;
  for (const auto& c : color) tc.push_back(c.timestamp);
  for (const auto& d : depth) td.push_back(d.timestamp);
  for (const auto& [i, j] : associate(tc, td, options.association_tolerance))
    m.frames.push_back({color[i].timestamp, color[i].path, depth[j].path, depth[j].timestamp});
  m.association_warnings = static_cast<int>(color.size() - m.frames.size());
  if (!color.empty() && m.frames.empty())
    throw Error(ErrorCode::AssociationGap, "no color frame has a depth image within tolerance");
  for (const auto& f : m.frames) {
    if (!fs::exists(f.color)) throw Error(ErrorCode::MissingFile, "missing image " + f.color.string());
    if (!fs::exists(f.depth)) throw Error(ErrorCode::MissingFile, "missing image " + f.depth.string());
  }

  if (fs::exists(root / "groundtruth.txt")) m.ground_truth = read_trajectory(root / "groundtruth.txt");
  if (fs::exists(root / "detections.txt")) m.detections = read_detections(root / "detections.txt");
  if (fs::exists(root / "imu.csv")) {
    m.imu = read_imu_csv(root / "imu.csv");
    if (!m.frames.empty() && (m.imu.empty() || m.imu.front().timestamp > m.frames.front().timestamp ||
                              m.imu.back().timestamp < m.frames.back().timestamp)) {
      std::ostringstream os;
      os << std::fixed << "IMU stream does not cover the image span [" << m.frames.front().timestamp << ", "
         << m.frames.back().timestamp << "]";
      throw Error(ErrorCode::AssociationGap, os.str());
    }
  }
  return m;
}

}  // namespace dvio
