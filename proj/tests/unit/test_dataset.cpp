#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "dvio/dataset.hpp"
#include "dvio/error.hpp"
#include "dvio/metrics.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace dvio {
namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dvio_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void touch(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << "";
}

/// Minimal TUM layout: `n` color frames at 30 Hz, depth stamps offset by `depth_offset`.
fs::path write_sequence(const std::string& name, int n, double depth_offset, int skip_depth = -1) {
  const fs::path root = fresh_dir(name);
  std::ofstream rgb(root / "rgb.txt"), depth(root / "depth.txt");
  rgb << "# color images\n# timestamp filename\n";
  depth << "# depth images\n";
  for (int i = 0; i < n; ++i) {
    const double t = 100.0 + i / 30.0;
    char c[64], d[64];
    std::snprintf(c, sizeof c, "rgb/%.6f.png", t);
    std::snprintf(d, sizeof d, "depth/%.6f.png", t + depth_offset);
    touch(root / c);
    touch(root / d);
    rgb << std::fixed << t << " " << c << "\n";
    if (i != skip_depth) depth << std::fixed << t + depth_offset << " " << d << "\n";
  }
  return root;
}

Trajectory helix(int n, double dt = 0.1) {
  Trajectory out;
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    out.emplace_back(10.0 + t, PoseSE3(so3_exp(Vec3(0.1 * std::sin(t), 0.05 * t, 0.3 * t)),
                                       Vec3(2 * std::cos(0.5 * t), 2 * std::sin(0.5 * t), 0.2 * t)));
  }
  return out;
}

TEST(Sequence, WellFormedRoundTrip) {
  const auto root = write_sequence("wellformed", 20, 0.004);
  const SequenceManifest m = load_sequence(root);
  EXPECT_EQ(m.frames.size(), 20u);
  EXPECT_EQ(m.association_warnings, 0);
  for (const auto& f : m.frames) EXPECT_NEAR(f.depth_timestamp - f.timestamp, 0.004, 1e-9);
  EXPECT_FALSE(m.has_imu());
}

TEST(Sequence, MissingDepthDropsFrameWithWarning) {
  const auto root = write_sequence("missingdepth", 20, 0.0, 7);
  const SequenceManifest m = load_sequence(root);
  EXPECT_EQ(m.frames.size(), 19u);
  EXPECT_EQ(m.association_warnings, 1);
}

TEST(Sequence, ShuffledTimestampsRejected) {
  const auto root = write_sequence("shuffled", 5, 0.0);
  std::ofstream(root / "rgb.txt") << "100.1 a.png\n100.0 b.png\n100.2 c.png\n";
  try {
    load_sequence(root);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonMonotonicTimestamp);
  }
}

TEST(Sequence, MissingImageAndListRejected) {
  const auto root = write_sequence("missingimage", 5, 0.0);
  fs::remove_all(root / "rgb");
  try {
    load_sequence(root);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingFile);
  }
  fs::remove(root / "depth.txt");
  EXPECT_THROW(load_sequence(root), Error);
}

TEST(Sequence, ImuMustCoverFrames) {
  const auto root = write_sequence("imucover", 10, 0.0);
  std::ofstream(root / "imu.csv") << "100.05,0,0,0,0,0,9.81\n100.10,0,0,0,0,0,9.81\n";
  try {
    load_sequence(root);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AssociationGap);
  }
}

TEST(Sequence, NoAssociationIsGap) {
  const auto root = write_sequence("noassoc", 5, 0.5);
  try {
    load_sequence(root);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AssociationGap);
  }
}

TEST(Association, SymmetricPairs) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a, b;
    for (int i = 0; i < 60; ++i) a.push_back(i / 30.0 + 0.001 * trial);
    for (int i = 0; i < 50; ++i) b.push_back(i / 25.0 + jitter(rng));
    std::sort(b.begin(), b.end());
    auto ab = associate(a, b, 0.02);
    auto ba = associate(b, a, 0.02);
    std::set<std::pair<size_t, size_t>> s1(ab.begin(), ab.end()), s2;
    for (const auto& [i, j] : ba) s2.insert({j, i});
    EXPECT_EQ(s1, s2);
    for (const auto& [i, j] : ab) EXPECT_LE(std::abs(a[i] - b[j]), 0.02);
  }
}

TEST(Readers, ImuCsvWithAndWithoutHeader) {
  const auto dir = fresh_dir("imucsv");
  std::ofstream(dir / "h.csv") << "timestamp,gx,gy,gz,ax,ay,az\n1.0,0.1,0.2,0.3,1,2,3\n1.005,0,0,0,0,0,9.81\n";
  std::ofstream(dir / "n.csv") << "1.0 0.1 0.2 0.3 1 2 3\n1.005 0 0 0 0 0 9.81\n";
  for (const char* f : {"h.csv", "n.csv"}) {
    const auto s = read_imu_csv(dir / f);
    ASSERT_EQ(s.size(), 2u) << f;
    EXPECT_EQ(s[0].gyro, Vec3(0.1, 0.2, 0.3));
    EXPECT_EQ(s[0].accel, Vec3(1, 2, 3));
    EXPECT_DOUBLE_EQ(s[1].timestamp, 1.005);
  }
}

TEST(Readers, DetectionsGroupedByTimestamp) {
  const auto dir = fresh_dir("detections");
  std::ofstream(dir / "detections.txt") << "# timestamp class x1 y1 x2 y2 score\n"
                                        << "1.0 person 10 20 30 40 0.9\n"
                                        << "1.0 chair 50 60 70 80 0.5\n"
                                        << "1.1 person 12 20 32 40 0.8\n";
  const auto d = read_detections(dir / "detections.txt");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].boxes.size(), 2u);
  EXPECT_EQ(d[0].boxes[1].class_label, "chair");
  EXPECT_EQ(d[1].boxes[0].x1, 12.0);
  SequenceManifest m;
  m.detections = d;
  EXPECT_EQ(m.detections_at(1.005).size(), 2u);
  EXPECT_TRUE(m.detections_at(1.05).empty());
}

TEST(TrajectoryFile, RoundTripLossless) {
  const auto dir = fresh_dir("traj");
  const Trajectory t = helix(200);
  write_trajectory(dir / "t.txt", t);
  const Trajectory r = read_trajectory(dir / "t.txt");
  ASSERT_EQ(r.size(), t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    EXPECT_NEAR(r[i].first, t[i].first, 1e-9);
    EXPECT_LT((r[i].second.translation() - t[i].second.translation()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(std::abs(r[i].second.rotation().angularDistance(t[i].second.rotation())), 1e-8);
  }
}

TEST(Ate, IdentityAndRigidInvariance) {
  const Trajectory ref = helix(100);
  EXPECT_LT(compute_ate(ref, ref), 1e-12);
  for (unsigned s = 0; s < 10; ++s) {
    const PoseSE3 T = oracle::random_pose(s, 3.0, 10.0);
    Trajectory moved;
    for (const auto& [t, p] : ref) moved.emplace_back(t, T * p);
    EXPECT_LT(compute_ate(moved, ref), 1e-9) << s;
  }
}

TEST(Ate, ConstructedNoiseMatchesMagnitude) {
  const Trajectory ref = helix(1000, 0.02);
  std::mt19937 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  Trajectory est;
  for (const auto& [t, p] : ref) {
    const Vec3 dir = Vec3(n(rng), n(rng), n(rng)).normalized();
    est.emplace_back(t, PoseSE3(p.rotation(), p.translation() + 0.05 * dir));
  }
  EXPECT_NEAR(compute_ate(est, ref), 0.05, 0.005);
}

TEST(Ate, TooFewPairsThrows) {
  const Trajectory two = helix(2);
  try {
    compute_ate(two, two);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateGeometry);
  }
}

TEST(Rpe, IdentityAndConstantDrift) {
  const Trajectory ref = helix(300, 0.05);
  const RpeResult zero = compute_rpe(ref, ref, 1.0);
  EXPECT_LT(zero.translation, 1e-12);
  EXPECT_LT(zero.rotation, 1e-9);
  Trajectory drift;
  for (const auto& [t, p] : ref)
    drift.emplace_back(t, PoseSE3(p.rotation(), p.translation() + Vec3(0.01, 0, 0) * (t - ref.front().first)));
  const RpeResult r = compute_rpe(drift, ref, 1.0);
  EXPECT_NEAR(r.translation, 0.01, 1e-9);
  EXPECT_LT(r.rotation, 1e-9);
  EXPECT_GT(r.pairs, 0);
}

TEST(Rpe, ShortTrajectoryThrows) {
  const Trajectory ref = helix(5, 0.05);
  try {
    compute_rpe(ref, ref, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSpan);
  }
}

TEST(CorrectRate, CoverageExamples) {
  const Trajectory ref = helix(100);
  EXPECT_DOUBLE_EQ(compute_correct_rate(ref, ref), 1.0);
  const Trajectory first_half(ref.begin(), ref.begin() + 50);
  EXPECT_DOUBLE_EQ(compute_correct_rate(first_half, ref), 0.5);
  Trajectory half_bad;
  for (size_t i = 0; i < ref.size(); ++i) {
    PoseSE3 p = ref[i].second;
    if (i % 2 == 1) p = PoseSE3(p.rotation(), p.translation() + Vec3(0, 0, i % 4 == 1 ? 1.0 : -1.0));
    half_bad.emplace_back(ref[i].first, p);
  }
  EXPECT_DOUBLE_EQ(compute_correct_rate(half_bad, ref), 0.5);
}

TEST(Evaluate, JsonReport) {
  const Trajectory ref = helix(100);
  const EvalResult e = evaluate(ref, ref);
  EXPECT_EQ(e.matched, 100);
  EXPECT_EQ(e.per_frame_errors.size(), 100u);
  const auto j = nlohmann::json::parse(to_json(e));
  for (const char* key : {"ate_rmse", "t_rpe", "r_rpe", "correct_rate", "per_frame_errors"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["correct_rate"].get<double>(), 1.0);
}

}  // namespace
}  // namespace dvio
