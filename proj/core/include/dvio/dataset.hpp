#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dvio/geometry.hpp"
#include "dvio/image.hpp"
#include "dvio/imu.hpp"
#include "dvio/recognition.hpp"

namespace dvio {

struct TimedPath {
  double timestamp = 0.0;
  std::filesystem::path path;
};

/// All detections reported for one image timestamp.
struct TimedDetections {
  double timestamp = 0.0;
  std::vector<DetectionBox> boxes;
};

/// Calibration read from sensor.yaml when present.
struct SensorConfig {
  PinholeCamera camera;
  PoseSE3 body_from_camera;
  double depth_scale = 5000.0;
  ImuNoise imu;
};

/// One color image with its associated depth image.
struct FrameEntry {
  double timestamp = 0.0;
  std::filesystem::path color;
  std::filesystem::path depth;
  double depth_timestamp = 0.0;
};

struct SequenceManifest {
  std::filesystem::path root;
  std::vector<FrameEntry> frames;
  std::vector<ImuSample> imu;
  std::vector<TimedDetections> detections;
  Trajectory ground_truth;
  double depth_scale = 5000.0;
  std::optional<SensorConfig> sensor;
  int association_warnings = 0;  // color frames dropped for lack of a depth partner

  bool has_imu() const { return !imu.empty(); }
  /// Detections recorded within `tolerance` of `t`; empty when the detector produced nothing.
  std::vector<DetectionBox> detections_at(double t, double tolerance = 0.02) const;
};

struct LoadOptions {
  double association_tolerance = 0.02;      // s
  std::optional<double> depth_scale;        // overrides sensor.yaml
};

/// Reads a TUM-layout sequence: rgb.txt, depth.txt, optional groundtruth.txt, imu.csv,
/// detections.txt and sensor.yaml. Throws MissingFile, NonMonotonicTimestamp, AssociationGap.
SequenceManifest load_sequence(const std::filesystem::path& root, const LoadOptions& options = {});

/// Greedy nearest-timestamp pairing within `tolerance`, closest pairs first. Returns index pairs
/// (into a, into b) sorted by the index into a. Swapping the inputs swaps the pairs.
std::vector<std::pair<size_t, size_t>> associate(std::span<const double> a, std::span<const double> b,
                                                 double tolerance);

std::vector<TimedPath> read_file_list(const std::filesystem::path& path);
std::vector<ImuSample> read_imu_csv(const std::filesystem::path& path);
std::vector<TimedDetections> read_detections(const std::filesystem::path& path);
SensorConfig read_sensor_config(const std::filesystem::path& path);

/// "timestamp tx ty tz qx qy qz qw" per line, 9 decimals.
void write_trajectory(const std::filesystem::path& path, const Trajectory& trajectory);
Trajectory read_trajectory(const std::filesystem::path& path);

}  // namespace dvio
