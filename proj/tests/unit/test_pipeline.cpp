#include <gtest/gtest.h>

#include <filesystem>

#include "dvio/error.hpp"
#include "dvio/pipeline.hpp"

namespace fs = std::filesystem;

namespace dvio {
namespace {

RunResult run_scene(const Scene& scene, PipelineConfig cfg) {
  auto src = make_scene_source(scene, cfg);
  return run_pipeline(*src, cfg);
}

void expect_identical(const Trajectory& a, const Trajectory& b) {
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(a[i].second.translation(), b[i].second.translation()) << i;
    EXPECT_EQ(a[i].second.rotation().coeffs(), b[i].second.rotation().coeffs()) << i;
  }
}

TEST(Config, DefaultsValidateAndRoundTrip) {
  PipelineConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  const PipelineConfig back = PipelineConfig::from_yaml(cfg.to_yaml());
  EXPECT_EQ(back.to_yaml(), cfg.to_yaml());
}

TEST(Config, UnknownKeysRejected) {
  for (const char* text : {"estimator:\n  window_sise: 8\n", "bogus:\n  x: 1\n"}) {
    try {
      PipelineConfig::from_yaml(text);
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid);
    }
  }
}

TEST(Config, OverridesAndMerge) {
  PipelineConfig cfg = PipelineConfig::from_yaml("estimator:\n  window_size: 8\nconsistency:\n  threshold_px: 4.5\n");
  EXPECT_EQ(cfg.estimator.window_size, 8);
  EXPECT_EQ(cfg.estimator.consistency.threshold_px, 4.5);
  cfg.apply_override("estimator.window_size=12");
  cfg.apply_override("recognition.epsilon=0.5");
  EXPECT_EQ(cfg.estimator.window_size, 12);
  EXPECT_EQ(cfg.recognition.epsilon, 0.5);
  cfg.merge_yaml("compensation:\n  miss_limit: 2\n");
  EXPECT_EQ(cfg.compensation.miss_limit, 2);
  EXPECT_EQ(cfg.estimator.window_size, 12);
  EXPECT_THROW(cfg.apply_override("estimator.window_size"), Error);
  EXPECT_THROW(cfg.apply_override("estimator.window_size=abc"), Error);
  EXPECT_THROW(cfg.apply_override("nope.key=1"), Error);
}

TEST(Config, InvalidValuesRejected) {
  PipelineConfig cfg;
  cfg.estimator.window_size = 1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = PipelineConfig{};
  cfg.join_timeout_ms = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Config, AblationVariants) {
  EXPECT_EQ(ablation_variants().size(), 5u);
  const PipelineConfig base;
  EXPECT_TRUE(apply_ablation(base, "disable_detection").ablation.disable_detection);
  EXPECT_TRUE(apply_ablation(base, "disable_mcc").ablation.disable_mcc);
  EXPECT_FALSE(apply_ablation(base, "disable_mcc").effective_estimator().consistency_check);
  EXPECT_TRUE(apply_ablation(base, "disable_circular_mask").ablation.disable_circular_mask);
  EXPECT_TRUE(apply_ablation(base, "disable_seg_like_mask").ablation.disable_seg_like_mask);
  EXPECT_THROW(apply_ablation(base, "disable_everything"), Error);
  PipelineConfig vo = base;
  vo.vo_mode = true;
  EXPECT_FALSE(vo.effective_estimator().use_imu);
}

TEST(Pipeline, StaticSceneAccurate) {
  const Scene scene = Scene::generate(static_scene(1, 20.0));
  PipelineConfig cfg;
  cfg.sync = true;
  const RunResult r = run_scene(scene, cfg);
  ASSERT_TRUE(r.eval.has_value());
  EXPECT_EQ(r.trajectory.size(), scene.frames().size());
  EXPECT_LT(r.eval->ate_rmse, 0.01);
  EXPECT_GT(r.eval->correct_rate, 0.99);
  EXPECT_GT(r.imu_rate_trajectory.size(), 5 * r.trajectory.size());
  for (size_t k = 1; k < r.imu_rate_trajectory.size(); ++k)
    EXPECT_GT(r.imu_rate_trajectory[k].first, r.imu_rate_trajectory[k - 1].first);
}

TEST(Pipeline, VisualOnlyModeRuns) {
  const Scene scene = Scene::generate(static_scene(1, 6.0));
  PipelineConfig cfg;
  cfg.sync = true;
  cfg.vo_mode = true;
  const RunResult r = run_scene(scene, cfg);
  ASSERT_TRUE(r.eval.has_value());
  EXPECT_LT(r.eval->ate_rmse, 0.05);
  EXPECT_TRUE(r.imu_rate_trajectory.empty());
}

TEST(Pipeline, SyncRunsAreBitIdentical) {
  const Scene scene = Scene::generate(walking_scene(7, 4.0));
  PipelineConfig cfg;
  cfg.sync = true;
  const RunResult a = run_scene(scene, cfg);
  const RunResult b = run_scene(scene, cfg);
  expect_identical(a.trajectory, b.trajectory);
  EXPECT_EQ(a.flagged_semantic, b.flagged_semantic);
  EXPECT_EQ(a.flagged_mcc, b.flagged_mcc);
}

TEST(Pipeline, PipelinedMatchesSync) {
  const Scene scene = Scene::generate(walking_scene(7, 4.0));
  PipelineConfig cfg;
  cfg.detection_latency_ms = 2.0;
  cfg.join_timeout_ms = 60000.0;
  cfg.sync = true;
  const RunResult sync = run_scene(scene, cfg);
  cfg.sync = false;
  const RunResult piped = run_scene(scene, cfg);
  EXPECT_EQ(piped.timing.detection_timeouts, 0);
  EXPECT_TRUE(piped.timing.pipelined);
  EXPECT_GE(piped.timing.detection_provider.p50, 2.0);
  expect_identical(sync.trajectory, piped.trajectory);
}

TEST(Pipeline, ShortJoinTimeoutFallsBackToCompensation) {
  const Scene scene = Scene::generate(walking_scene(7, 1.0));
  PipelineConfig cfg;
  cfg.detection_latency_ms = 30.0;
  cfg.join_timeout_ms = 1.0;
  const RunResult r = run_scene(scene, cfg);
  EXPECT_EQ(r.trajectory.size(), scene.frames().size());
  EXPECT_GT(r.timing.detection_timeouts, 0);
}

TEST(Pipeline, DatasetSourceWithImages) {
  const Scene scene = Scene::generate(walking_scene(7, 1.5));
  const fs::path root = fs::temp_directory_path() / "dvio_test_pipeline_dataset";
  fs::remove_all(root);
  export_tum(scene, root);
  const SequenceManifest m = load_sequence(root);
  PipelineConfig cfg;
  cfg.sync = true;
  auto src = make_dataset_source(m, cfg);
  const RunResult r = run_pipeline(*src, cfg);
  EXPECT_EQ(r.trajectory.size(), m.frames.size());
  ASSERT_TRUE(r.eval.has_value());
  EXPECT_LT(r.eval->ate_rmse, 0.05);

  const fs::path out = root / "out";
  write_run_outputs(out, r);
  for (const char* f : {"trajectory.txt", "imu_rate_trajectory.txt", "metrics.json", "timing.json", "config.yaml"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_NO_THROW(PipelineConfig::from_yaml_file(out / "config.yaml"));
}

}  // namespace
}  // namespace dvio
