#include <benchmark/benchmark.h>

#include "dvio/fast.hpp"
#include "dvio/frontend.hpp"
#include "dvio/klt.hpp"
#include "dvio/recognition.hpp"
#include "dvio/scene.hpp"

namespace dvio {
namespace {

// Two rendered frames of the static preset and the tracked set after a short warm-up.
struct FrontendFixture {
  Scene scene = Scene::generate(static_scene(11, 1.0));
  GrayImage prev, curr;
  std::vector<Vec2> tracked;
  std::vector<Vec2> unstable;

  FrontendFixture() {
    ImageFrontend fe({}, scene.spec().camera, scene.spec().body_from_camera);
    FrontendOutput out;
    for (FrameIndex f = 0; f <= 10; ++f) {
      prev = curr;
      curr = scene.render(f);
      out = fe.process(f, scene.frames()[f].timestamp, curr, nullptr, nullptr);
    }
    for (size_t i = 0; i < out.observations.size(); ++i)
      if (out.track_lengths[i] > 1) tracked.push_back(out.observations[i].pixel);
    unstable = out.unstable;
  }

  // The longest-lived tracks, `fraction` of the feature budget.
  std::vector<Vec2> tracked_share(double fraction) const {
    const auto n = static_cast<size_t>(fraction * DetectionGridConfig{}.max_features);
    return {tracked.begin(), tracked.begin() + std::min(n, tracked.size())};
  }
};

const FrontendFixture& fixture() {
  static const FrontendFixture f;
  return f;
}

void BM_FastFullFrame(benchmark::State& state) {
  const auto& fx = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(fast_detect_cell(fx.curr, {0, 0, 640, 480}, nullptr, 20));
}
BENCHMARK(BM_FastFullFrame)->Unit(benchmark::kMillisecond);

void BM_GridDetection(benchmark::State& state) {
  const auto& fx = fixture();
  const DetectionGridConfig cfg;
  const auto tracked = fx.tracked_share(state.range(0) / 100.0);
  const CircularMask mask = build_mask(640, 480, tracked, fx.unstable, cfg);
  int scanned = 0;
  for (auto _ : state) {
    const auto r = detect_new_features(fx.curr, mask, tracked, cfg, {});
    scanned = r.cells_scanned;
    benchmark::DoNotOptimize(r);
  }
  state.counters["tracked"] = static_cast<double>(tracked.size());
  state.counters["cells_scanned"] = scanned;
}
BENCHMARK(BM_GridDetection)->Arg(0)->Arg(80)->Arg(95)->Unit(benchmark::kMillisecond);

void BM_FullFrameRedetection(benchmark::State& state) {
  const auto& fx = fixture();
  const DetectionGridConfig cfg;
  const auto tracked = fx.tracked_share(state.range(0) / 100.0);
  const CircularMask mask = build_mask(640, 480, tracked, fx.unstable, cfg);
  const int needed = cfg.max_features - static_cast<int>(tracked.size());
  for (auto _ : state) benchmark::DoNotOptimize(detect_full_frame(fx.curr, mask, needed, cfg));
  state.counters["tracked"] = static_cast<double>(tracked.size());
}
BENCHMARK(BM_FullFrameRedetection)->Arg(0)->Arg(80)->Arg(95)->Unit(benchmark::kMillisecond);

void BM_BuildMask(benchmark::State& state) {
  const auto& fx = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(build_mask(640, 480, fx.tracked, fx.unstable, DetectionGridConfig{}));
}
BENCHMARK(BM_BuildMask)->Unit(benchmark::kMicrosecond);

void BM_Pyramid(benchmark::State& state) {
  const auto& fx = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(build_pyramid(fx.curr, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_Pyramid)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_KltTrack(benchmark::State& state) {
  const auto& fx = fixture();
  KltParams p;
  p.max_level = static_cast<int>(state.range(0));
  const Pyramid a = build_pyramid(fx.prev, p.max_level);
  const Pyramid b = build_pyramid(fx.curr, p.max_level);
  for (auto _ : state) benchmark::DoNotOptimize(klt_track(a, b, fx.tracked, fx.tracked, p));
  state.counters["features"] = static_cast<double>(fx.tracked.size());
}
BENCHMARK(BM_KltTrack)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_SemanticMask(benchmark::State& state) {
  std::vector<BoxThreshold> boxes;
  for (int i = 0; i < state.range(0); ++i) {
    DetectionBox b;
    b.x1 = 40.0 * i;
    b.y1 = 50;
    b.x2 = b.x1 + 150;
    b.y2 = 400;
    boxes.push_back({b, 2.0 + 0.1 * i});
  }
  for (auto _ : state) benchmark::DoNotOptimize(build_semantic_mask(640, 480, boxes));
}
BENCHMARK(BM_SemanticMask)->Arg(1)->Arg(8)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace dvio
