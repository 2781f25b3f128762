#include "merg3r/pipeline.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "merg3r/error.h"
#include "merg3r/io.h"
#include "test_util.h"

namespace merg3r {
namespace {

namespace fs = std::filesystem;
using testing::CodeOf;

TEST(PairCounts, ArithmeticExample) {
  const PairCountReport r = PairCounts(1000, 100, 11);
  EXPECT_EQ(r.subset_pairs, 110000);
  EXPECT_EQ(r.full_pairs, 1000000);
  EXPECT_DOUBLE_EQ(r.ratio, 0.11);
}

TEST(PipelineConfig, DefaultsAndJsonOverrides) {
  PipelineConfig c;
  EXPECT_EQ(c.subset_size, 100);
  EXPECT_EQ(c.overlap, 5);
  EXPECT_EQ(c.k, 5);
  EXPECT_EQ(c.conf_percentile, 70);
  EXPECT_EQ(c.tau_reproj, 8);
  EXPECT_EQ(c.max_keypoints, 4096);
  EXPECT_EQ(c.ba_iterations, 300);
  EXPECT_EQ(c.ba_lr, 3e-3);
  EXPECT_EQ(c.lambda, 0.5);
  EXPECT_NO_THROW(c.Validate());

  ApplyConfigJson(R"({"subset_size": 40, "overlap": 4, "ba_lr": 0.01, "shared_intrinsics": true})", c);
  EXPECT_EQ(c.subset_size, 40);
  EXPECT_EQ(c.overlap, 4);
  EXPECT_EQ(c.ba_lr, 0.01);
  EXPECT_TRUE(c.shared_intrinsics);
  EXPECT_EQ(c.k, 5);
  EXPECT_EQ(c.BundleAdjustment().initial_lr, 0.01);
  EXPECT_EQ(c.Tracking().max_keypoints, 4096);

  EXPECT_EQ(CodeOf([&] { ApplyConfigJson(R"({"subset": 4})", c); }), ErrorCode::kInvalidParameter);
  EXPECT_EQ(CodeOf([&] { ApplyConfigJson(R"({"k": "five"})", c); }), ErrorCode::kInvalidParameter);
  EXPECT_EQ(CodeOf([&] { ApplyConfigJson("[1]", c); }), ErrorCode::kInvalidParameter);

  PipelineConfig bad;
  bad.overlap = 100;
  EXPECT_EQ(CodeOf([&] { bad.Validate(); }), ErrorCode::kInvalidParameter);
  bad = {};
  bad.conf_percentile = 100;
  EXPECT_EQ(CodeOf([&] { bad.Validate(); }), ErrorCode::kInvalidParameter);
}

TEST(ParsePerturbation, NamedAndJson) {
  const PerturbationSpec none = ParsePerturbation("none");
  EXPECT_EQ(none.depth_noise_sigma, 0);
  EXPECT_EQ(none.outlier_match_fraction, 0);
  EXPECT_GT(none.scale_jitter, 0);
  EXPECT_EQ(ParsePerturbation("default").depth_noise_sigma,
            PerturbationSpec::Default().depth_noise_sigma);
  const PerturbationSpec p = ParsePerturbation(R"({"outlier_match_fraction": 0.3})");
  EXPECT_EQ(p.outlier_match_fraction, 0.3);
  EXPECT_EQ(p.scale_jitter, PerturbationSpec::Default().scale_jitter);
  EXPECT_EQ(CodeOf([] { ParsePerturbation(R"({"noise": 1})"); }), ErrorCode::kInvalidParameter);
  EXPECT_EQ(CodeOf([] { ParsePerturbation(R"({"outlier_match_fraction": 1.5})"); }),
            ErrorCode::kInvalidParameter);
}

TEST(SyntheticSpec, RoundTrip) {
  SynthOptions o;
  o.scene.seed = 123;
  o.scene.n_cameras = 17;
  o.scene.layout = SceneLayout::kObject;
  o.perturb.depth_noise_sigma = 0.03;
  const std::string text = EncodeSyntheticSpec(o);
  const SynthOptions back = DecodeSyntheticSpec(text);
  EXPECT_EQ(back.scene.seed, 123u);
  EXPECT_EQ(back.scene.n_cameras, 17);
  EXPECT_EQ(back.scene.layout, SceneLayout::kObject);
  EXPECT_EQ(back.perturb.depth_noise_sigma, 0.03);
  EXPECT_EQ(EncodeSyntheticSpec(back), text);
}

SynthOptions SmallScene(uint64_t seed, const PerturbationSpec& perturb = {}) {
  SynthOptions o;
  o.scene.seed = seed;
  o.scene.n_cameras = 60;
  o.scene.n_landmarks = 2500;
  o.scene.width = 160;
  o.scene.height = 120;
  o.perturb = perturb;
  return o;
}

PipelineConfig SmallConfig(int threads = 1) {
  PipelineConfig c;
  c.subset_size = 24;
  c.overlap = 5;
  c.ba_iterations = 60;
  c.threads = threads;
  return c;
}

std::string Bytes(const fs::path& p) { return ReadText(p); }

void ExpectSameOutputs(const fs::path& a, const fs::path& b) {
  for (const char* f : {"plan.json", "transforms.json", "poses_merged.json", "tracks.bin",
                        "refined/poses.json", "refined/tracks.bin", "refined/loss.csv",
                        "refined/points.ply"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_TRUE(Bytes(a / f) == Bytes(b / f)) << f;
  }
}

TEST(RunPipeline, WritesReportWithMetrics) {
  const fs::path dir = testing::TempDir("pipeline_report");
  const PipelineConfig config = SmallConfig();
  SynthStage(SmallScene(1), config, dir);
  const nlohmann::json report = nlohmann::json::parse(RunPipeline(config, dir));
  EXPECT_EQ(report, nlohmann::json::parse(ReadText(dir / "run_report.json")));
  EXPECT_EQ(report["pair_counts"]["n"], 60);
  EXPECT_EQ(report["pair_counts"]["t"], 24);
  const int k = report["pair_counts"]["k"];
  EXPECT_DOUBLE_EQ(report["pair_counts"]["ratio"].get<double>(), k * 576.0 / 3600.0);
  EXPECT_EQ(report["alignment"].size(), size_t(k - 1));
  EXPECT_GT(report["tracking"]["tracks"].get<int>(), 100);
  EXPECT_LE(report["tracking"]["matcher_invocations"].get<int>(), config.k * 60);
  EXPECT_LE(report["bundle_adjustment"]["final_loss"].get<double>(),
            report["bundle_adjustment"]["initial_loss"].get<double>());
  for (const char* stage : {"align", "track", "ba", "eval", "total"}) {
    EXPECT_TRUE(report["timings_s"].contains(stage)) << stage;
  }
  const auto& m = report["metrics"];
  EXPECT_LE(m["post_ba"]["ate"].get<double>(), m["pre_ba"]["ate"].get<double>());
  EXPECT_GE(m["post_ba"]["rra"]["15"].get<double>(), 90);
  EXPECT_TRUE(fs::exists(dir / "metrics.json"));
  EXPECT_EQ(ReadPoses(dir / "refined" / "poses.json").size(), 60u);
}

TEST(RunPipeline, ThreadCountDoesNotChangeOutputs) {
  const fs::path one = testing::TempDir("pipeline_t1");
  const fs::path many = testing::TempDir("pipeline_t8");
  SynthStage(SmallScene(2), SmallConfig(1), one);
  SynthStage(SmallScene(2), SmallConfig(8), many);
  RunPipeline(SmallConfig(1), one);
  RunPipeline(SmallConfig(8), many);
  ExpectSameOutputs(one, many);
}

TEST(RunPipeline, StagesReproduceFullRun) {
  const fs::path full = testing::TempDir("pipeline_full");
  const fs::path staged = testing::TempDir("pipeline_staged");
  const PipelineConfig config = SmallConfig();
  SynthStage(SmallScene(3), config, full);
  SynthStage(SmallScene(3), config, staged);
  RunPipeline(config, full);

  const SceneLayoutPaths p{staged};
  fs::remove(p.plan());
  PlanStage(p.similarity(), config, p.plan());
  AlignStage(p.manifest(), p.plan(), config, p.transforms());
  TrackStage(staged, p.plan(), p.transforms(), config, p.tracks());
  BAStage(staged, p.transforms(), p.tracks(), config, p.refined());
  ExpectSameOutputs(full, staged);

  // A second run from cached intermediates is also identical.
  RunPipeline(config, staged);
  ExpectSameOutputs(full, staged);
}

TEST(RunPipeline, NoiseFreeSceneRecoversTrajectory) {
  const fs::path dir = testing::TempDir("pipeline_clean");
  const PipelineConfig config = SmallConfig();
  const SynthOptions options = SmallScene(4, PerturbationSpec::NoiseFree());
  SynthStage(options, config, dir);
  const nlohmann::json report = nlohmann::json::parse(RunPipeline(config, dir));
  const double diameter = GenerateScene(options.scene).diameter;
  const auto& m = report["metrics"];
  EXPECT_LT(m["pre_ba"]["ate"].get<double>(), 1e-5 * diameter);
  EXPECT_LT(m["post_ba"]["ate"].get<double>(), 1e-5 * diameter);
  EXPECT_EQ(m["post_ba"]["rra"]["5"].get<double>(), 100);
  EXPECT_EQ(m["post_ba"]["rta"]["5"].get<double>(), 100);
}

TEST(RunPipeline, MissingSceneIsDataError) {
  const fs::path dir = testing::TempDir("pipeline_missing");
  EXPECT_EQ(CodeOf([&] { RunPipeline(SmallConfig(), dir); }), ErrorCode::kNotFound);
}

TEST(EvalStage, PerfectEstimate) {
  const fs::path dir = testing::TempDir("pipeline_eval");
  SynthStage(SmallScene(5), SmallConfig(), dir);
  const fs::path gt = dir / "gt" / "poses.json";
  const nlohmann::json m = nlohmann::json::parse(EvalStage(gt, gt, std::nullopt, std::nullopt));
  EXPECT_LT(m["ate"].get<double>(), 1e-9);
  EXPECT_EQ(m["auc_30"].get<double>(), 100);
}

int RunCli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(MERG3R_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, SynthThenRun) {
  const fs::path dir = testing::TempDir("cli_run");
  const fs::path scene = dir / "scene";
  ASSERT_EQ(RunCli("synth --seed 42 --cameras 200 --out " + scene.string(), dir / "synth.log"), 0);
  ASSERT_EQ(RunCli("run --scene " + scene.string(), dir / "run.log"), 0);
  const nlohmann::json report = nlohmann::json::parse(ReadText(scene / "run_report.json"));
  ASSERT_TRUE(report.contains("metrics"));
  EXPECT_TRUE(report["metrics"].contains("post_ba"));
  EXPECT_EQ(report["pair_counts"]["n"], 200);
}

TEST(Cli, StageCommandsAndThreads) {
  const fs::path dir = testing::TempDir("cli_stages");
  const std::string s1 = (dir / "a").string(), s8 = (dir / "b").string();
  const fs::path log = dir / "log";
  const std::string synth = "synth --cameras 60 --landmarks 2500 --width 160 --height 120 -T 24 --out ";
  ASSERT_EQ(RunCli(synth + s1, log), 0);
  ASSERT_EQ(RunCli(synth + s8, log), 0);
  ASSERT_EQ(RunCli("align --scene " + s1 + " --threads 1", log), 0);
  ASSERT_EQ(RunCli("align --scene " + s8 + " --threads 8", log), 0);
  EXPECT_TRUE(Bytes(fs::path(s1) / "transforms.json") == Bytes(fs::path(s8) / "transforms.json"));
  ASSERT_EQ(RunCli("track --scene " + s1 + " --threads 1", log), 0);
  ASSERT_EQ(RunCli("track --scene " + s8 + " --threads 8", log), 0);
  ASSERT_EQ(RunCli("ba --scene " + s1 + " --iters 40 --threads 1", log), 0);
  ASSERT_EQ(RunCli("ba --scene " + s8 + " --iters 40 --threads 8", log), 0);
  EXPECT_TRUE(Bytes(fs::path(s1) / "refined/poses.json") == Bytes(fs::path(s8) / "refined/poses.json"));
  ASSERT_EQ(RunCli("eval --est " + s1 + "/refined/poses.json --gt " + s1 + "/gt/poses.json", log), 0);
  const nlohmann::json m = nlohmann::json::parse(ReadText(log));
  EXPECT_TRUE(m.contains("ate"));
  EXPECT_TRUE(m.contains("auc_30"));
}

TEST(Cli, ExitCodes) {
  const fs::path dir = testing::TempDir("cli_exit");
  const fs::path log = dir / "log";
  EXPECT_EQ(RunCli("--help", log), 0);
  EXPECT_EQ(RunCli("run --no-such-flag", log), 2);
  EXPECT_EQ(RunCli("synth --perturb '{\"bogus\": 1}' --out " + (dir / "x").string(), log), 2);
  EXPECT_EQ(RunCli("run --scene " + (dir / "missing").string(), log), 3);
  const std::string scene = (dir / "s").string();
  ASSERT_EQ(RunCli("synth --cameras 30 --landmarks 1500 --width 160 --height 120 -T 12 --out " + scene, log), 0);
  EXPECT_EQ(RunCli("run --scene " + scene + " --lr 1e300 --iters 5", log), 4);
}

}  // namespace
}  // namespace merg3r
