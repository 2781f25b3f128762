#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "merg3r/alignment.h"
#include "merg3r/bundle_adjustment.h"
#include "merg3r/evaluation.h"
#include "merg3r/ordering.h"
#include "merg3r/synthetic.h"
#include "merg3r/tracking.h"

namespace merg3r {

struct PipelineConfig {
  int subset_size = 100;
  int overlap = 5;
  int n_subsequences = 0;
  bool similarity_band = false;
  int k = 5;
  double conf_percentile = 70.0;
  size_t max_correspondences = 50000;
  double tau_reproj = 8.0;
  int max_keypoints = 4096;
  int min_track_len = 2;
  int ba_iterations = 300;
  double ba_lr = 3e-3;
  double lambda = 0.5;
  bool optimize_intrinsics = true;
  bool shared_intrinsics = false;
  int threads = 1;
  uint64_t seed = 42;

  void Validate() const;
  PlanOptions Plan() const;
  TrackingOptions Tracking() const;
  BAConfig BundleAdjustment() const;
};

// Overrides fields of `config` with the keys present in a JSON object.
// Unknown keys and mistyped values throw kInvalidParameter.
void ApplyConfigJson(const std::string& text, PipelineConfig& config);

// Conventional file names inside a scene directory.
struct SceneLayoutPaths {
  std::filesystem::path root;

  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path similarity() const { return root / "similarity.mrgt"; }
  std::filesystem::path plan() const { return root / "plan.json"; }
  std::filesystem::path transforms() const { return root / "transforms.json"; }
  std::filesystem::path merged_poses() const { return root / "poses_merged.json"; }
  std::filesystem::path tracks() const { return root / "tracks.bin"; }
  std::filesystem::path matches() const { return root / "matches"; }
  std::filesystem::path refined() const { return root / "refined"; }
  std::filesystem::path report() const { return root / "run_report.json"; }
  std::filesystem::path gt() const { return root / "gt"; }
  std::filesystem::path gt_scene() const { return root / "gt" / "scene.json"; }
  std::filesystem::path gt_poses() const { return root / "gt" / "poses.json"; }
  std::filesystem::path gt_warps() const { return root / "gt" / "transforms.json"; }
  std::filesystem::path gt_cloud() const { return root / "gt" / "landmarks.ply"; }
};

struct SynthOptions {
  SceneSpec scene;
  PerturbationSpec perturb;
};

// Parses a --perturb value: "default", "none", or a JSON object of fields.
PerturbationSpec ParsePerturbation(const std::string& text);

std::string EncodeSyntheticSpec(const SynthOptions& options);
SynthOptions DecodeSyntheticSpec(const std::string& text);

// Generates a scene, plans its subsets and writes the full interchange
// layout plus gt/ under `out_dir`.
void SynthStage(const SynthOptions& options, const PipelineConfig& config,
                const std::filesystem::path& out_dir);

SceneGraphPlan PlanStage(const std::filesystem::path& similarity_path,
                         const PipelineConfig& config,
                         const std::filesystem::path& out_plan);

std::vector<ClusterReconstruction> LoadAllClusters(
    const std::filesystem::path& manifest_path,
    const SceneGraphPlan* plan = nullptr);

struct AlignStageResult {
  std::vector<AlignmentResult> pairwise;
  std::vector<Sim3Transform> transforms;
};

AlignStageResult AlignStage(const std::filesystem::path& manifest_path,
                            const std::filesystem::path& plan_path,
                            const PipelineConfig& config,
                            const std::filesystem::path& out_transforms);

// Synthetic matcher when the scene was generated, precomputed matches
// otherwise.
class MatcherSource {
 public:
  explicit MatcherSource(const std::filesystem::path& scene_dir);
  MatcherSource(const MatcherSource&) = delete;
  MatcherSource& operator=(const MatcherSource&) = delete;
  Matcher& matcher() { return *matcher_; }
  bool synthetic() const { return scene_.has_value(); }

 private:
  std::optional<SyntheticScene> scene_;
  std::unique_ptr<Matcher> matcher_;
};

TrackingResult TrackStage(const std::filesystem::path& scene_dir,
                          const std::filesystem::path& plan_path,
                          const std::filesystem::path& transforms_path,
                          const PipelineConfig& config,
                          const std::filesystem::path& out_tracks);

struct BAStageResult {
  BAResult ba;
  double initial_reprojection = 0.0;
  double final_reprojection = 0.0;
  size_t observations = 0;
};

// Writes poses.json, tracks.bin, loss.csv and points.ply into out_dir.
BAStageResult BAStage(const std::filesystem::path& scene_dir,
                      const std::filesystem::path& transforms_path,
                      const std::filesystem::path& tracks_path,
                      const PipelineConfig& config,
                      const std::filesystem::path& out_dir);

// Metrics of est against gt, matched by frame id, as JSON text.
std::string EvalStage(const std::filesystem::path& est_poses,
                      const std::filesystem::path& gt_poses,
                      const std::optional<std::filesystem::path>& pred_cloud,
                      const std::optional<std::filesystem::path>& gt_cloud);

// Cameras in frame-id order paired with the ground truth of the same ids.
std::pair<std::vector<CameraPose>, std::vector<CameraPose>> PairByFrame(
    const std::vector<CameraParams>& est, const std::vector<CameraParams>& gt);

// ATE of the clusters' own cameras mapped through the inverse injected warp,
// with the same duplicate-frame policy as merging.
double OracleNoiseFloor(const std::vector<ClusterReconstruction>& clusters,
                        const std::vector<Sim3Transform>& warps,
                        const std::vector<CameraParams>& gt);

struct PairCountReport {
  int n = 0;
  int t = 0;
  int k = 0;
  double subset_pairs = 0;  // K * T^2
  double full_pairs = 0;    // N^2
  double ratio = 0;
};

PairCountReport PairCounts(int n, int t, int k);

// plan -> align -> track -> ba -> eval through files under scene_dir;
// returns the run report JSON text, also written to run_report.json.
std::string RunPipeline(const PipelineConfig& config,
                        const std::filesystem::path& scene_dir);

}  // namespace merg3r
