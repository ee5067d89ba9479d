#include <benchmark/benchmark.h>

#include "dvio/consistency.hpp"
#include "dvio/estimator.hpp"
#include "dvio/imu.hpp"
#include "dvio/scene.hpp"

namespace dvio {
namespace {

void BM_Preintegrate(benchmark::State& state) {
  // One 30 Hz frame interval at 200 Hz.
  std::vector<ImuSample> samples;
  for (int k = 0; k <= 7; ++k) {
    const double t = k * 0.005;
    samples.push_back({t, Vec3(0.1, -0.2, 0.3) * std::cos(t), Vec3(0.2, 0.1, 9.81) + Vec3(std::sin(t), 0, 0)});
  }
  for (auto _ : state) benchmark::DoNotOptimize(PreintegratedDelta::from_samples(samples));
}
BENCHMARK(BM_Preintegrate)->Unit(benchmark::kMicrosecond);

// A full window fed from the synthetic front end, then re-optimized from a perturbed state.
void BM_WindowOptimize(benchmark::State& state) {
  static const Scene scene = Scene::generate(static_scene(5, 2.0));
  EstimatorConfig cfg;
  cfg.use_imu = state.range(0) != 0;
  SlidingWindowEstimator est(cfg, scene.spec().camera, scene.spec().body_from_camera);
  SyntheticFrontend fe({}, scene);
  est.initialize(scene.frames().front().truth);
  for (FrameIndex f = 0; f < 20; ++f) {
    const auto sf = fe.process(f);
    std::optional<PreintegratedDelta> d;
    if (cfg.use_imu && f > 0)
      d = PreintegratedDelta::from_samples(
          slice_imu(scene.imu(), scene.frames()[static_cast<size_t>(f - 1)].timestamp, sf.output.timestamp));
    est.process_frame({f, sf.output.timestamp, sf.output.observations}, {}, d ? &*d : nullptr);
  }
  std::vector<PoseSE3> poses;
  for (const auto& fs : est.frames()) poses.push_back(fs.pose);
  for (auto _ : state) {
    state.PauseTiming();
    size_t k = 0;
    for (auto& fs : est.mutable_frames()) fs.pose = PoseSE3(poses[k].rotation(), poses[k].translation() + Vec3(0.005, -0.003, 0.002) * static_cast<double>(k++ > 0));
    state.ResumeTiming();
    benchmark::DoNotOptimize(est.optimize());
  }
  state.counters["features"] = static_cast<double>(est.features().size());
}
BENCHMARK(BM_WindowOptimize)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ReprojectionResidual(benchmark::State& state) {
  const PinholeCamera cam;
  const PoseSE3 bc = default_body_from_camera();
  std::vector<PosedObservation> obs;
  for (int j = 0; j < 10; ++j)
    obs.push_back({PoseSE3(Quat::Identity(), Vec3(0.02 * j, 0, 0)), Vec2(320 + 2.0 * j, 240), j == 0 ? 0.0 : 2.0});
  for (auto _ : state) benchmark::DoNotOptimize(reprojection_residual(1, obs, cam, bc));
}
BENCHMARK(BM_ReprojectionResidual)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace dvio

// The packaged benchmark_main archive is built with a different LTO version, so main lives here.
BENCHMARK_MAIN();
