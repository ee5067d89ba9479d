#ifdef DVIO_CLI11_SINGLE_HEADER
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dvio/dataset.hpp"
#include "dvio/error.hpp"
#include "dvio/metrics.hpp"
#include "dvio/pipeline.hpp"
#include "dvio/scene.hpp"

namespace fs = std::filesystem;
using namespace dvio;

namespace {

struct SceneArgs {
  std::string scene = "walking";  // preset name or spec file
  std::uint64_t seed = 7;
  double duration = 60.0;
};

void add_scene_options(CLI::App* app, SceneArgs& a) {
  app->add_option("--scene", a.scene, "Scene preset (static, walking) or scene spec YAML file")
      ->capture_default_str();
  app->add_option("--seed", a.seed, "Seed for preset scenes")->capture_default_str();
  app->add_option("--duration", a.duration, "Duration in seconds for preset scenes")->capture_default_str();
}

SceneSpec scene_spec(const SceneArgs& a) {
  if (a.scene == "static") return static_scene(a.seed, a.duration);
  if (a.scene == "walking") return walking_scene(a.seed, a.duration);
  return SceneSpec::from_yaml_file(a.scene);
}

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
  bool sync = false;
  bool vo = false;
  bool render = false;
  std::string ablate = "default";
};

void add_config_options(CLI::App* app, ConfigArgs& a) {
  app->add_option("-c,--config", a.file, "Pipeline config YAML")->check(CLI::ExistingFile);
  app->add_option("--set", a.overrides, "Override a config value, e.g. --set estimator.window_size=8");
  app->add_flag("--sync", a.sync, "Run all stages on one thread");
  app->add_flag("--vo", a.vo, "VO mode: ignore the IMU");
  app->add_flag("--render", a.render, "Synthetic input: render images and run FAST/KLT");
  app->add_option("--ablate", a.ablate, "Ablation variant")
      ->check(CLI::IsMember(ablation_variants()))
      ->capture_default_str();
}

PipelineConfig pipeline_config(const ConfigArgs& a) {
  PipelineConfig cfg;
  if (!a.file.empty()) cfg = PipelineConfig::from_yaml_file(a.file);
  if (a.sync) cfg.sync = true;
  if (a.vo) cfg.vo_mode = true;
  if (a.render) cfg.render_images = true;
  for (const auto& o : a.overrides) cfg.apply_override(o);
  cfg = apply_ablation(cfg, a.ablate);
  cfg.validate();
  return cfg;
}

void print_eval(const EvalResult& e) {
  std::printf("ATE %.4f m  T.RPE %.4f m/s  R.RPE %.4f deg/s  CR %.3f (tol %.2f m, %d poses)\n", e.ate_rmse,
              e.t_rpe_rmse, e.r_rpe_rmse, e.correct_rate, e.cr_tolerance, e.matched);
}

void report_run(const RunResult& r, const fs::path& out) {
  write_run_outputs(out, r);
  std::printf("%d frames in %.1f ms (tracking %.2f ms, optimization %.2f ms mean per frame, %d detection timeouts)\n",
              r.timing.frames, r.timing.wall_ms, r.timing.tracking_stage.mean, r.timing.optimization_stage.mean,
              r.timing.detection_timeouts);
  if (r.eval) print_eval(*r.eval);
  std::printf("outputs in %s\n", out.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic-scene RGB-D visual-inertial odometry"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run the pipeline on a TUM-layout dataset or a synthetic scene");
  std::string dataset;
  SceneArgs run_scene;
  ConfigArgs run_cfg;
  std::string run_out = "dvio_run";
  bool stream = false;
  run->add_option("--dataset", dataset, "TUM-layout sequence directory")->check(CLI::ExistingDirectory);
  add_scene_options(run, run_scene);
  add_config_options(run, run_cfg);
  run->add_option("-o,--out", run_out, "Output directory")->capture_default_str();
  run->add_flag("--stream", stream, "Print each pose as soon as it is estimated");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic scene and export it in TUM layout");
  SceneArgs sim_scene;
  std::string sim_out = "dvio_scene";
  bool spec_only = false;
  add_scene_options(sim, sim_scene);
  sim->add_option("-o,--out", sim_out, "Output directory")->capture_default_str();
  sim->add_flag("--spec-only", spec_only, "Only write the scene spec YAML");

  // eval
  auto* ev = app.add_subcommand("eval", "Compare an estimated trajectory with a reference");
  std::string est_path, ref_path, eval_json;
  EvalOptions eval_opts;
  std::string alignment = "se3";
  ev->add_option("estimated", est_path, "Estimated trajectory (TUM format)")->required()->check(CLI::ExistingFile);
  ev->add_option("reference", ref_path, "Reference trajectory (TUM format)")->required()->check(CLI::ExistingFile);
  ev->add_option("--json", eval_json, "Write the metrics report here");
  ev->add_option("--alignment", alignment, "se3 or sim3")
      ->check(CLI::IsMember({"se3", "sim3"}))
      ->capture_default_str();
  ev->add_option("--rpe-delta", eval_opts.rpe_delta, "RPE pair separation (s)")->capture_default_str();
  ev->add_option("--cr-tolerance", eval_opts.cr_tolerance, "Correct-rate position tolerance (m)")
      ->capture_default_str();

  // ablate
  auto* abl = app.add_subcommand("ablate", "Run the five ablation variants on a synthetic scene");
  SceneArgs abl_scene;
  ConfigArgs abl_cfg;
  std::string abl_out = "dvio_ablation";
  add_scene_options(abl, abl_scene);
  add_config_options(abl, abl_cfg);
  abl->add_option("-o,--out", abl_out, "Output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const PipelineConfig cfg = pipeline_config(run_cfg);
      const PoseCallback cb = stream ? PoseCallback([](double t, const PoseSE3& p) {
        const Vec3& x = p.translation();
        const Quat& q = p.rotation();
        std::printf("%.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f\n", t, x.x(), x.y(), x.z(), q.x(), q.y(), q.z(), q.w());
        std::fflush(stdout);
      })
                                     : PoseCallback{};
      RunResult r;
      if (!dataset.empty()) {
        const SequenceManifest m = load_sequence(dataset);
        if (m.association_warnings > 0)
          std::fprintf(stderr, "warning: %d color frames had no depth within tolerance and were dropped\n",
                       m.association_warnings);
        PipelineConfig c = cfg;
        if (!m.has_imu() && !c.vo_mode) {
          std::fprintf(stderr, "note: sequence has no IMU stream, running in VO mode\n");
          c.vo_mode = true;
        }
        auto src = make_dataset_source(m, c);
        r = run_pipeline(*src, c, cb);
      } else {
        const Scene scene = Scene::generate(scene_spec(run_scene));
        auto src = make_scene_source(scene, cfg);
        r = run_pipeline(*src, cfg, cb);
      }
      report_run(r, run_out);
    } else if (*sim) {
      const SceneSpec spec = scene_spec(sim_scene);
      fs::create_directories(sim_out);
      if (spec_only) {
        std::ofstream(fs::path(sim_out) / "scene.yaml") << spec.to_yaml();
      } else {
        const Scene scene = Scene::generate(spec);
        export_tum(scene, sim_out);
        std::printf("exported %zu frames, %zu IMU samples to %s\n", scene.frames().size(), scene.imu().size(),
                    sim_out.c_str());
      }
    } else if (*ev) {
      eval_opts.alignment = alignment == "sim3" ? AlignmentMode::Sim3 : AlignmentMode::SE3;
      const EvalResult e = evaluate(read_trajectory(est_path), read_trajectory(ref_path), eval_opts);
      print_eval(e);
      if (!eval_json.empty()) std::ofstream(eval_json) << to_json(e) << "\n";
    } else if (*abl) {
      const PipelineConfig cfg = pipeline_config(abl_cfg);
      const Scene scene = Scene::generate(scene_spec(abl_scene));
      const AblationReport rep = run_ablation_suite(scene, cfg);
      fs::create_directories(abl_out);
      std::ofstream(fs::path(abl_out) / "ablation.json") << rep.to_json() << "\n";
      std::ofstream(fs::path(abl_out) / "config.yaml") << cfg.to_yaml();
      std::cout << rep.to_table();
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
