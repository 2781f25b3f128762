#include "merg3r/pipeline.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "merg3r/cluster.h"
#include "merg3r/error.h"
#include "merg3r/io.h"

namespace merg3r {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

json ParseObject(const std::string& text, const std::string& what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidParameter, what + ": " + e.what());
  }
  if (!j.is_object()) {
    throw Error(ErrorCode::kInvalidParameter, what + " must be a JSON object");
  }
  return j;
}

template <typename T>
void Take(const json& j, const char* key, T& field, const std::string& what) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kInvalidParameter,
                what + ": field '" + key + "' has the wrong type");
  }
}

void RejectUnknown(const json& j, std::initializer_list<const char*> keys,
                   const std::string& what) {
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) {
      throw Error(ErrorCode::kInvalidParameter,
                  what + ": unknown field '" + k + "'");
    }
  }
}

json Sim3Json(const Sim3Transform& t) {
  const Eigen::Vector4d q = RotationToQuaternion(t.rotation);
  return {{"scale", t.scale},
          {"quaternion", {q[0], q[1], q[2], q[3]}},
          {"translation", {t.translation[0], t.translation[1], t.translation[2]}}};
}

json MetricsJson(const TrajectoryMetrics& m) {
  json rra = json::object(), rta = json::object();
  for (const auto& [t, v] : m.relative.rra_at) rra[std::to_string(t)] = v;
  for (const auto& [t, v] : m.relative.rta_at) rta[std::to_string(t)] = v;
  return {{"ate", m.trajectory.ate},
          {"rre_deg", m.trajectory.rre},
          {"rte", m.trajectory.rte},
          {"rra", rra},
          {"rta", rta},
          {"auc_30", m.relative.auc_at_30},
          {"pairs", m.relative.pairs},
          {"skipped_pairs", m.relative.skipped_pairs}};
}

// Runs fn(), recording its wall time and prefixing errors with the stage.
template <typename Fn>
auto Timed(const char* stage, json& timings, Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  auto finish = [&] {
    timings[stage] = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - start)
                         .count();
  };
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      finish();
    } else {
      auto r = fn();
      finish();
      return r;
    }
  } catch (const Error& e) {
    throw Error(e.code(), std::string("stage ") + stage + ": " + e.what());
  }
}

std::string LossCsv(const BAResult& r) {
  std::string out = "iteration,lr,loss\n";
  char line[128];
  for (size_t i = 0; i < r.loss_history.size(); ++i) {
    const double lr = i < r.lr_history.size() ? r.lr_history[i] : 0.0;
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g\n", i, lr,
                  r.loss_history[i]);
    out += line;
  }
  return out;
}

}  // namespace

void PipelineConfig::Validate() const {
  auto fail = [](const std::string& m) {
    throw Error(ErrorCode::kInvalidParameter, m);
  };
  if (subset_size < 2) fail("subset_size must be >= 2");
  if (overlap < 1 || overlap >= subset_size) {
    fail("overlap must satisfy 1 <= overlap < subset_size");
  }
  if (n_subsequences < 0) fail("n_subsequences must be >= 0");
  if (k < 1) fail("k must be >= 1");
  if (!(conf_percentile >= 0 && conf_percentile < 100)) {
    fail("conf_percentile must lie in [0, 100)");
  }
  if (!(tau_reproj > 0)) fail("tau_reproj must be positive");
  if (max_keypoints < 1) fail("max_keypoints must be >= 1");
  if (min_track_len < 2) fail("min_track_len must be >= 2");
  BundleAdjustment().Validate();
}

PlanOptions PipelineConfig::Plan() const {
  return {subset_size, overlap, n_subsequences, similarity_band};
}

TrackingOptions PipelineConfig::Tracking() const {
  return {k, tau_reproj, max_keypoints, min_track_len, threads};
}

BAConfig PipelineConfig::BundleAdjustment() const {
  BAConfig c;
  c.iterations = ba_iterations;
  c.initial_lr = ba_lr;
  c.lambda = lambda;
  c.optimize_intrinsics = optimize_intrinsics;
  c.shared_intrinsics = shared_intrinsics;
  c.threads = threads;
  return c;
}

void ApplyConfigJson(const std::string& text, PipelineConfig& c) {
  const std::string what = "config";
  const json j = ParseObject(text, what);
  RejectUnknown(j,
                {"subset_size", "overlap", "n_subsequences", "similarity_band",
                 "k", "conf_percentile", "max_correspondences", "tau_reproj",
                 "max_keypoints", "min_track_len", "ba_iterations", "ba_lr",
                 "lambda", "optimize_intrinsics", "shared_intrinsics",
                 "threads", "seed"},
                what);
  Take(j, "subset_size", c.subset_size, what);
  Take(j, "overlap", c.overlap, what);
  Take(j, "n_subsequences", c.n_subsequences, what);
  Take(j, "similarity_band", c.similarity_band, what);
  Take(j, "k", c.k, what);
  Take(j, "conf_percentile", c.conf_percentile, what);
  Take(j, "max_correspondences", c.max_correspondences, what);
  Take(j, "tau_reproj", c.tau_reproj, what);
  Take(j, "max_keypoints", c.max_keypoints, what);
  Take(j, "min_track_len", c.min_track_len, what);
  Take(j, "ba_iterations", c.ba_iterations, what);
  Take(j, "ba_lr", c.ba_lr, what);
  Take(j, "lambda", c.lambda, what);
  Take(j, "optimize_intrinsics", c.optimize_intrinsics, what);
  Take(j, "shared_intrinsics", c.shared_intrinsics, what);
  Take(j, "threads", c.threads, what);
  Take(j, "seed", c.seed, what);
}

PerturbationSpec ParsePerturbation(const std::string& text) {
  if (text == "default") return PerturbationSpec::Default();
  if (text == "none") return PerturbationSpec::NoiseFree();
  const std::string what = "perturbation";
  const json j = ParseObject(text, what);
  RejectUnknown(j,
                {"scale_jitter", "rotation_jitter_deg", "translation_jitter",
                 "pose_rotation_noise_deg", "pose_translation_noise",
                 "depth_noise_sigma", "confidence_gain",
                 "match_pixel_noise_sigma", "outlier_match_fraction"},
                what);
  PerturbationSpec p;
  Take(j, "scale_jitter", p.scale_jitter, what);
  Take(j, "rotation_jitter_deg", p.rotation_jitter_deg, what);
  Take(j, "translation_jitter", p.translation_jitter, what);
  Take(j, "pose_rotation_noise_deg", p.pose_rotation_noise_deg, what);
  Take(j, "pose_translation_noise", p.pose_translation_noise, what);
  Take(j, "depth_noise_sigma", p.depth_noise_sigma, what);
  Take(j, "confidence_gain", p.confidence_gain, what);
  Take(j, "match_pixel_noise_sigma", p.match_pixel_noise_sigma, what);
  Take(j, "outlier_match_fraction", p.outlier_match_fraction, what);
  p.Validate();
  return p;
}

std::string EncodeSyntheticSpec(const SynthOptions& o) {
  const SceneSpec& s = o.scene;
  const PerturbationSpec& p = o.perturb;
  json j = {{"format_version", kFormatVersion},
            {"scene",
             {{"seed", s.seed},
              {"n_cameras", s.n_cameras},
              {"n_landmarks", s.n_landmarks},
              {"layout", LayoutName(s.layout)},
              {"width", s.width},
              {"height", s.height},
              {"fov_deg", s.fov_deg},
              {"splat_radius", s.splat_radius}}},
            {"perturbation",
             {{"scale_jitter", p.scale_jitter},
              {"rotation_jitter_deg", p.rotation_jitter_deg},
              {"translation_jitter", p.translation_jitter},
              {"pose_rotation_noise_deg", p.pose_rotation_noise_deg},
              {"pose_translation_noise", p.pose_translation_noise},
              {"depth_noise_sigma", p.depth_noise_sigma},
              {"confidence_gain", p.confidence_gain},
              {"match_pixel_noise_sigma", p.match_pixel_noise_sigma},
              {"outlier_match_fraction", p.outlier_match_fraction}}}};
  return j.dump(1) + "\n";
}

SynthOptions DecodeSyntheticSpec(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    SynthOptions o;
    const json& s = j.at("scene");
    o.scene.seed = s.at("seed").get<uint64_t>();
    o.scene.n_cameras = s.at("n_cameras").get<int>();
    o.scene.n_landmarks = s.at("n_landmarks").get<int>();
    o.scene.layout = ParseLayout(s.at("layout").get<std::string>());
    o.scene.width = s.at("width").get<int>();
    o.scene.height = s.at("height").get<int>();
    o.scene.fov_deg = s.at("fov_deg").get<double>();
    o.scene.splat_radius = s.at("splat_radius").get<int>();
    o.perturb = ParsePerturbation(j.at("perturbation").dump());
    return o;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchemaViolation,
                std::string("synthetic scene spec: ") + e.what());
  }
}

void SynthStage(const SynthOptions& options, const PipelineConfig& config,
                const fs::path& out_dir) {
  config.Validate();
  const SceneLayoutPaths paths{out_dir};
  const SyntheticScene scene = GenerateScene(options.scene);
  const SimilarityMatrix sim = SyntheticSimilarity(scene);
  const SceneGraphPlan plan = BuildPlan(sim, config.Plan());

  SceneManifest manifest;
  for (const CameraParams& cam : scene.gt_cameras) {
    manifest.images.push_back({cam.frame_id, cam.intrinsics.width,
                               cam.intrinsics.height, std::nullopt});
  }
  manifest.similarity_path = "similarity.mrgt";
  std::vector<Sim3Transform> warps;
  for (size_t k = 0; k < plan.subsets.size(); ++k) {
    const RenderedCluster rc = RenderCluster(scene, static_cast<int>(k),
                                             plan.subsets[k], options.perturb);
    manifest.clusters.push_back(WriteCluster(out_dir, rc.cluster));
    warps.push_back(rc.warp);
  }
  WriteSimilarity(paths.similarity(), sim);
  WritePlan(paths.plan(), plan);
  WriteManifest(paths.manifest(), manifest);
  WriteText(paths.gt_scene(), EncodeSyntheticSpec(options));
  WritePoses(paths.gt_poses(), scene.gt_cameras);
  WriteTransforms(paths.gt_warps(), warps);
  PointCloud gt_cloud;
  gt_cloud.points = scene.landmarks;
  WritePly(paths.gt_cloud(), gt_cloud);
  spdlog::info("synthesised {} cameras, {} landmarks, {} clusters in {}",
               scene.gt_cameras.size(), scene.landmarks.size(),
               plan.subsets.size(), out_dir.string());
}

SceneGraphPlan PlanStage(const fs::path& similarity_path,
                         const PipelineConfig& config,
                         const fs::path& out_plan) {
  config.Validate();
  const SceneGraphPlan plan =
      BuildPlan(ReadSimilarity(similarity_path), config.Plan());
  WritePlan(out_plan, plan);
  spdlog::info("planned {} subsets of size <= {}", plan.subsets.size(),
               plan.subset_size);
  return plan;
}

std::vector<ClusterReconstruction> LoadAllClusters(
    const fs::path& manifest_path, const SceneGraphPlan* plan) {
  const SceneManifest manifest = ReadManifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  std::vector<ClusterReconstruction> clusters;
  for (size_t k = 0; k < manifest.clusters.size(); ++k) {
    if (manifest.clusters[k].cluster_id != static_cast<int>(k)) {
      throw Error(ErrorCode::kSchemaViolation,
                  "manifest clusters must be numbered 0..K-1 in order");
    }
    clusters.push_back(LoadCluster(manifest, base, static_cast<int>(k)));
    if (plan != nullptr) ValidateAgainstPlan(clusters.back(), *plan);
  }
  if (plan != nullptr && clusters.size() != plan->subsets.size()) {
    throw Error(ErrorCode::kSchemaViolation,
                "manifest has " + std::to_string(clusters.size()) +
                    " clusters but the plan has " +
                    std::to_string(plan->subsets.size()) + " subsets");
  }
  return clusters;
}

AlignStageResult AlignStage(const fs::path& manifest_path,
                            const fs::path& plan_path,
                            const PipelineConfig& config,
                            const fs::path& out_transforms) {
  config.Validate();
  const SceneGraphPlan plan = ReadPlan(plan_path);
  const auto clusters = LoadAllClusters(manifest_path, &plan);
  AlignStageResult r;
  r.pairwise = AlignConsecutiveClusters(clusters, config.conf_percentile, {},
                                        config.threads,
                                        config.max_correspondences);
  r.transforms = ChainAlignments(r.pairwise);
  WriteTransforms(out_transforms, r.transforms);
  const MergedScene merged = MergeClusters(clusters, r.transforms, false);
  WritePoses(out_transforms.parent_path() / "poses_merged.json",
             merged.Cameras());
  for (size_t k = 0; k < r.pairwise.size(); ++k) {
    spdlog::info("aligned cluster {} to {}: {} inliers, objective {:.4g}",
                 k + 1, k, r.pairwise[k].inlier_count,
                 r.pairwise[k].final_objective);
  }
  return r;
}

MatcherSource::MatcherSource(const fs::path& scene_dir) {
  const SceneLayoutPaths paths{scene_dir};
  if (fs::exists(paths.gt_scene())) {
    const SynthOptions o = DecodeSyntheticSpec(ReadText(paths.gt_scene()));
    scene_ = GenerateScene(o.scene);
    matcher_ = std::make_unique<SyntheticMatcher>(*scene_, o.perturb);
  } else {
    matcher_ = std::make_unique<FileMatcher>(paths.matches());
  }
}

TrackingResult TrackStage(const fs::path& scene_dir, const fs::path& plan_path,
                          const fs::path& transforms_path,
                          const PipelineConfig& config,
                          const fs::path& out_tracks) {
  config.Validate();
  const SceneLayoutPaths paths{scene_dir};
  const SceneGraphPlan plan = ReadPlan(plan_path);
  const auto clusters = LoadAllClusters(paths.manifest(), &plan);
  const MergedScene merged =
      MergeClusters(clusters, ReadTransforms(transforms_path), false);
  const SimilarityMatrix sim = ReadSimilarity(paths.similarity());
  MatcherSource source(scene_dir);
  TrackingResult r = RunTracking(sim, merged, source.matcher(), config.Tracking());
  WriteTracks(out_tracks, r.tracks);
  spdlog::info("{} edges, {} matches ({} verified), {} tracks, {} failed edges",
               r.graph.edges.size(), r.raw_matches, r.verified_matches,
               r.tracks.size(), r.failed_edges);
  return r;
}

BAStageResult BAStage(const fs::path& scene_dir, const fs::path& transforms_path,
                      const fs::path& tracks_path, const PipelineConfig& config,
                      const fs::path& out_dir) {
  config.Validate();
  const SceneLayoutPaths paths{scene_dir};
  const auto clusters = LoadAllClusters(paths.manifest());
  MergedScene merged =
      MergeClusters(clusters, ReadTransforms(transforms_path), false);
  std::vector<Track> tracks = ReadTracks(tracks_path);
  const BAProblem problem = BuildBAProblem(merged, tracks);
  BAStageResult r;
  r.observations = problem.observations.size();
  r.initial_reprojection = MeanReprojectionError(problem);
  r.ba = RunBundleAdjustment(problem, config.BundleAdjustment());
  r.final_reprojection = MeanReprojectionError(r.ba.problem);
  ApplyBAResult(r.ba.problem, merged, tracks);
  WritePoses(out_dir / "poses.json", merged.Cameras());
  WriteTracks(out_dir / "tracks.bin", tracks);
  WriteText(out_dir / "loss.csv", LossCsv(r.ba));
  WritePly(out_dir / "points.ply", merged.cloud);
  spdlog::info("bundle adjustment: reprojection {:.4f} -> {:.4f} px",
               r.initial_reprojection, r.final_reprojection);
  return r;
}

std::pair<std::vector<CameraPose>, std::vector<CameraPose>> PairByFrame(
    const std::vector<CameraParams>& est, const std::vector<CameraParams>& gt) {
  std::vector<CameraPose> e, g;
  for (const CameraParams& c : est) {
    auto it = std::find_if(gt.begin(), gt.end(), [&](const CameraParams& x) {
      return x.frame_id == c.frame_id;
    });
    if (it == gt.end()) {
      throw Error(ErrorCode::kInvalidInput,
                  "frame " + std::to_string(c.frame_id) +
                      " has no ground-truth pose");
    }
    e.push_back(c.pose);
    g.push_back(it->pose);
  }
  return {e, g};
}

std::string EvalStage(const fs::path& est_poses, const fs::path& gt_poses,
                      const std::optional<fs::path>& pred_cloud,
                      const std::optional<fs::path>& gt_cloud) {
  const auto [est, gt] = PairByFrame(ReadPoses(est_poses), ReadPoses(gt_poses));
  json j = MetricsJson(EvaluateTrajectory(est, gt));
  if (pred_cloud && gt_cloud) {
    const CloudDistance d =
        PointCloudDistance(ReadPly(*pred_cloud), ReadPly(*gt_cloud));
    j["accuracy"] = d.accuracy;
    j["completion"] = d.completion;
  }
  return j.dump(1) + "\n";
}

double OracleNoiseFloor(const std::vector<ClusterReconstruction>& clusters,
                        const std::vector<Sim3Transform>& warps,
                        const std::vector<CameraParams>& gt) {
  std::vector<Sim3Transform> inverse;
  for (const auto& w : warps) inverse.push_back(w.Inverse());
  const MergedScene scene = MergeClusters(clusters, inverse, false);
  const auto [est, ref] = PairByFrame(scene.Cameras(), gt);
  return ComputeTrajectoryErrors(est, ref).ate;
}

PairCountReport PairCounts(int n, int t, int k) {
  PairCountReport r;
  r.n = n;
  r.t = t;
  r.k = k;
  r.subset_pairs = double(k) * t * t;
  r.full_pairs = double(n) * n;
  r.ratio = r.full_pairs > 0 ? r.subset_pairs / r.full_pairs : 0.0;
  return r;
}

std::string RunPipeline(const PipelineConfig& config, const fs::path& scene_dir) {
  config.Validate();
  const SceneLayoutPaths paths{scene_dir};
  json timings = json::object();
  const auto t0 = std::chrono::steady_clock::now();

  if (!fs::exists(paths.plan())) {
    Timed("plan", timings,
          [&] { PlanStage(paths.similarity(), config, paths.plan()); });
  }
  const SceneGraphPlan plan = ReadPlan(paths.plan());
  const AlignStageResult align = Timed("align", timings, [&] {
    return AlignStage(paths.manifest(), paths.plan(), config, paths.transforms());
  });
  const TrackingResult track = Timed("track", timings, [&] {
    return TrackStage(scene_dir, paths.plan(), paths.transforms(), config,
                      paths.tracks());
  });
  const BAStageResult ba = Timed("ba", timings, [&] {
    return BAStage(scene_dir, paths.transforms(), paths.tracks(), config,
                   paths.refined());
  });

  json report;
  report["format_version"] = kFormatVersion;
  const int n = static_cast<int>(plan.pseudo_order.size());
  const PairCountReport pc =
      PairCounts(n, plan.subset_size, static_cast<int>(plan.subsets.size()));
  report["pair_counts"] = {{"n", pc.n},
                           {"t", pc.t},
                           {"k", pc.k},
                           {"subset_pairs", pc.subset_pairs},
                           {"full_pairs", pc.full_pairs},
                           {"ratio", pc.ratio}};
  json align_j = json::array();
  size_t peak_corr = 0;
  for (const auto& a : align.pairwise) {
    align_j.push_back({{"transform", Sim3Json(a.transform)},
                       {"inliers", a.inlier_count},
                       {"initial_objective", a.initial_objective},
                       {"final_objective", a.final_objective},
                       {"iterations", a.iterations_used}});
    peak_corr = std::max(peak_corr, size_t(a.inlier_count));
  }
  report["alignment"] = align_j;
  report["tracking"] = {{"edges", track.graph.edges.size()},
                        {"matcher_invocations", track.matcher_invocations},
                        {"failed_edges", track.failed_edges},
                        {"raw_matches", track.raw_matches},
                        {"verified_matches", track.verified_matches},
                        {"tracks", track.tracks.size()},
                        {"ambiguous_components", track.merge.ambiguous}};
  report["bundle_adjustment"] = {
      {"observations", ba.observations},
      {"initial_loss", ba.ba.loss_history.front()},
      {"final_loss", ba.ba.loss_history[ba.ba.best_iteration]},
      {"best_iteration", ba.ba.best_iteration},
      {"behind_camera", ba.ba.behind_camera},
      {"initial_reprojection_px", ba.initial_reprojection},
      {"final_reprojection_px", ba.final_reprojection}};
  report["peak_counts"] = {{"alignment_inliers", peak_corr},
                           {"matches", track.raw_matches},
                           {"ba_observations", ba.observations}};

  if (fs::exists(paths.gt_poses())) {
    Timed("eval", timings, [&] {
      const auto gt = ReadPoses(paths.gt_poses());
      const auto [pre_e, pre_g] =
          PairByFrame(ReadPoses(paths.merged_poses()), gt);
      const auto [post_e, post_g] =
          PairByFrame(ReadPoses(paths.refined() / "poses.json"), gt);
      json metrics;
      metrics["pre_ba"] = MetricsJson(EvaluateTrajectory(pre_e, pre_g));
      metrics["post_ba"] = MetricsJson(EvaluateTrajectory(post_e, post_g));
      if (fs::exists(paths.gt_warps())) {
        const auto clusters = LoadAllClusters(paths.manifest());
        metrics["noise_floor_ate"] =
            OracleNoiseFloor(clusters, ReadTransforms(paths.gt_warps()), gt);
      }
      WriteText(scene_dir / "metrics.json", metrics.dump(1) + "\n");
      report["metrics"] = metrics;
    });
  }
  timings["total"] = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
  report["timings_s"] = timings;
  const std::string text = report.dump(1) + "\n";
  WriteText(paths.report(), text);
  return text;
}

}  // namespace merg3r
