// Command-line front end: one subcommand per pipeline stage plus `run`.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/spdlog.h>

#include "merg3r/error.h"
#include "merg3r/io.h"
#include "merg3r/pipeline.h"

namespace fs = std::filesystem;
using merg3r::ErrorCode;
using merg3r::PipelineConfig;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidParameter:
      return kExitConfig;
    case ErrorCode::kDivergence:
      return kExitDivergence;
    default:
      return kExitData;
  }
}

void ConfigureLogging() {
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("MERG3R_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }
}

// Flags bound to optional values so that only explicitly given flags
// override the config file.
struct ConfigFlags {
  std::optional<std::string> config_file;
  std::optional<int> subset_size, overlap, n_subsequences, k, max_keypoints,
      min_track_len, iters, threads;
  std::optional<double> conf_percentile, tau, lr, lambda;
  std::optional<uint64_t> seed;
  bool similarity_band = false;
  bool fixed_intrinsics = false;
  bool shared_intrinsics = false;

  // On `plan`, --k selects the number of interleaved subsequences.
  void Add(CLI::App* app, bool plan_stage = false) {
    app->add_option("--config", config_file, "JSON config file");
    app->add_option("--subset-size,-T", subset_size, "subset size T");
    app->add_option("--overlap,-O", overlap, "overlap O between subsets");
    app->add_option(plan_stage ? "--k,--subsequences" : "--subsequences",
                    n_subsequences,
                    "number of interleaved subsequences (0 = automatic)");
    app->add_flag("--similarity-band", similarity_band,
                  "similarity-constrained interleaving");
    if (!plan_stage) {
      app->add_option("--k", k, "neighbours per frame in the match graph");
    }
    app->add_option("--conf-percentile", conf_percentile,
                    "drop this percentile of least confident pairs");
    app->add_option("--tau", tau, "reprojection threshold in pixels");
    app->add_option("--max-keypoints", max_keypoints, "keypoints per image");
    app->add_option("--min-track-len", min_track_len, "minimum track length");
    app->add_option("--iters", iters, "bundle adjustment iterations");
    app->add_option("--lr", lr, "initial bundle adjustment learning rate");
    app->add_option("--lambda", lambda, "robust loss exponent");
    app->add_flag("--fixed-intrinsics", fixed_intrinsics,
                  "keep intrinsics fixed during bundle adjustment");
    app->add_flag("--shared-intrinsics", shared_intrinsics,
                  "one set of intrinsics for all cameras");
    app->add_option("--threads", threads, "worker threads (0 = all cores)");
    app->add_option("--seed", seed, "random seed");
  }

  PipelineConfig Resolve() const {
    PipelineConfig c;
    if (config_file) merg3r::ApplyConfigJson(merg3r::ReadText(*config_file), c);
    auto set = [](auto& field, const auto& flag) {
      if (flag) field = *flag;
    };
    set(c.subset_size, subset_size);
    set(c.overlap, overlap);
    set(c.n_subsequences, n_subsequences);
    set(c.k, k);
    set(c.max_keypoints, max_keypoints);
    set(c.min_track_len, min_track_len);
    set(c.ba_iterations, iters);
    set(c.threads, threads);
    set(c.conf_percentile, conf_percentile);
    set(c.tau_reproj, tau);
    set(c.ba_lr, lr);
    set(c.lambda, lambda);
    set(c.seed, seed);
    if (similarity_band) c.similarity_band = true;
    if (fixed_intrinsics) c.optimize_intrinsics = false;
    if (shared_intrinsics) c.shared_intrinsics = true;
    c.Validate();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  ConfigureLogging();
  CLI::App app{"merg3r: scalable multi-view reconstruction from clusters"};
  app.require_subcommand(1);

  ConfigFlags flags;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic scene");
  merg3r::SceneSpec scene_spec;
  std::string layout = "room";
  std::string perturb = "default";
  fs::path synth_out;
  synth->add_option("--cameras", scene_spec.n_cameras, "number of cameras");
  synth->add_option("--landmarks", scene_spec.n_landmarks, "number of landmarks");
  synth->add_option("--layout", layout, "room or object");
  synth->add_option("--width", scene_spec.width, "image width");
  synth->add_option("--height", scene_spec.height, "image height");
  synth->add_option("--perturb", perturb,
                    "default, none, or a JSON object of perturbation fields");
  synth->add_option("--out", synth_out, "output scene directory")->required();
  flags.Add(synth);

  // plan
  auto* plan = app.add_subcommand("plan", "order frames and split into subsets");
  fs::path plan_similarity, plan_out;
  plan->add_option("--similarity", plan_similarity, "similarity tensor")
      ->required();
  plan->add_option("--out", plan_out, "plan JSON")->required();
  flags.Add(plan, true);

  // align
  auto* align = app.add_subcommand("align", "align consecutive clusters");
  fs::path align_scene, align_plan, align_out;
  align->add_option("--scene,--clusters", align_scene, "scene directory")->required();
  align->add_option("--plan", align_plan, "plan JSON (default: scene/plan.json)");
  align->add_option("--out", align_out,
                    "transforms JSON (default: scene/transforms.json)");
  flags.Add(align);

  // track
  auto* track = app.add_subcommand("track", "build multi-view tracks");
  fs::path track_scene, track_plan, track_transforms, track_out;
  track->add_option("--clusters,--scene", track_scene, "scene directory")
      ->required();
  track->add_option("--plan", track_plan, "plan JSON");
  track->add_option("--transforms", track_transforms, "transforms JSON");
  track->add_option("--out", track_out, "tracks file");
  flags.Add(track);

  // ba
  auto* ba = app.add_subcommand("ba", "global bundle adjustment");
  fs::path ba_scene, ba_transforms, ba_tracks, ba_out;
  ba->add_option("--scene", ba_scene, "scene directory")->required();
  ba->add_option("--transforms", ba_transforms, "transforms JSON");
  ba->add_option("--tracks", ba_tracks, "tracks file");
  ba->add_option("--out", ba_out, "output directory (default: scene/refined)");
  flags.Add(ba);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate poses against ground truth");
  fs::path eval_est, eval_gt;
  std::optional<fs::path> pred_cloud, gt_cloud;
  eval->add_option("--est", eval_est, "estimated poses JSON")->required();
  eval->add_option("--gt", eval_gt, "ground-truth poses JSON")->required();
  eval->add_option("--pred-cloud", pred_cloud, "predicted PLY");
  eval->add_option("--gt-cloud", gt_cloud, "ground-truth PLY");

  // run
  auto* run = app.add_subcommand("run", "run the full pipeline");
  fs::path run_scene;
  bool run_synth = false;
  run->add_option("--scene", run_scene, "scene directory")->required();
  run->add_flag("--synth", run_synth, "generate a synthetic scene first");
  run->add_option("--cameras", scene_spec.n_cameras, "synthetic cameras");
  run->add_option("--landmarks", scene_spec.n_landmarks, "synthetic landmarks");
  run->add_option("--layout", layout, "synthetic layout");
  run->add_option("--perturb", perturb, "synthetic perturbation");
  flags.Add(run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const PipelineConfig config = flags.Resolve();
    auto or_default = [](const fs::path& p, const fs::path& fallback) {
      return p.empty() ? fallback : p;
    };
    auto synth_options = [&] {
      merg3r::SynthOptions o;
      o.scene = scene_spec;
      o.scene.seed = config.seed;
      o.scene.layout = merg3r::ParseLayout(layout);
      o.perturb = merg3r::ParsePerturbation(perturb);
      return o;
    };
    if (synth->parsed()) {
      merg3r::SynthStage(synth_options(), config, synth_out);
    } else if (plan->parsed()) {
      merg3r::PlanStage(plan_similarity, config, plan_out);
    } else if (align->parsed()) {
      const merg3r::SceneLayoutPaths p{align_scene};
      merg3r::AlignStage(p.manifest(), or_default(align_plan, p.plan()), config,
                         or_default(align_out, p.transforms()));
    } else if (track->parsed()) {
      const merg3r::SceneLayoutPaths p{track_scene};
      merg3r::TrackStage(track_scene, or_default(track_plan, p.plan()),
                         or_default(track_transforms, p.transforms()), config,
                         or_default(track_out, p.tracks()));
    } else if (ba->parsed()) {
      const merg3r::SceneLayoutPaths p{ba_scene};
      merg3r::BAStage(ba_scene, or_default(ba_transforms, p.transforms()),
                      or_default(ba_tracks, p.tracks()), config,
                      or_default(ba_out, p.refined()));
    } else if (eval->parsed()) {
      std::cout << merg3r::EvalStage(eval_est, eval_gt, pred_cloud, gt_cloud);
    } else if (run->parsed()) {
      if (run_synth) merg3r::SynthStage(synth_options(), config, run_scene);
      const std::string report = merg3r::RunPipeline(config, run_scene);
      std::cout << report;
    }
  } catch (const merg3r::Error& e) {
    spdlog::error("{}", e.what());
    return ExitCodeFor(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  }
  return 0;
}
