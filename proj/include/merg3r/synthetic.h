#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "merg3r/cluster.h"
#include "merg3r/geometry.h"
#include "merg3r/ordering.h"
#include "merg3r/tracking.h"

namespace merg3r {

enum class SceneLayout { kRoom, kObject };

SceneLayout ParseLayout(const std::string& name);
std::string LayoutName(SceneLayout layout);

struct SceneSpec {
  uint64_t seed = 42;
  int n_cameras = 200;
  int n_landmarks = 5000;
  SceneLayout layout = SceneLayout::kRoom;
  int width = 320;
  int height = 240;
  double fov_deg = 70.0;  // Horizontal field of view.
  int splat_radius = 2;   // Landmark footprint is (2r + 1)^2 pixels.
};

struct SyntheticScene {
  SceneSpec spec;
  std::vector<Eigen::Vector3d> landmarks;
  std::vector<CameraParams> gt_cameras;
  // Sorted ids of the landmarks each camera sees unoccluded.
  std::vector<std::vector<int>> visibility;
  double diameter = 0.0;  // Bounding-box diagonal of the landmarks.
};

// Deterministic for a fixed spec. Every kept landmark is seen by at least
// two cameras and every camera sees at least 50 landmarks; throws
// kGenerationFailure after 100 unsuccessful attempts.
SyntheticScene GenerateScene(const SceneSpec& spec);

struct PerturbationSpec {
  // Per-cluster gauge warp.
  double scale_jitter = 0.2;          // Scale drawn from [1 - j, 1 + j].
  double rotation_jitter_deg = 30.0;  // Angle drawn from [0, j].
  double translation_jitter = 1.0;    // Scene units, per axis in [-j, j].
  // Per-frame camera error inside a cluster.
  double pose_rotation_noise_deg = 0.1;
  double pose_translation_noise = 0.002;  // Fraction of the scene diameter.
  double depth_noise_sigma = 0.01;  // Log-normal sigma.
  double confidence_gain = 100.0;   // c = 1 / (1 + |rel. error| * gain).
  double match_pixel_noise_sigma = 0.5;
  double outlier_match_fraction = 0.1;

  static PerturbationSpec Default() { return {}; }
  // Keeps the gauge warps and removes every noise source.
  static PerturbationSpec NoiseFree();
  void Validate() const;
};

struct RenderedCluster {
  ClusterReconstruction cluster;
  // Injected warp: cluster coordinates = warp * world coordinates.
  Sim3Transform warp;
};

// Renders subset `frames` of the scene as cluster `cluster_id`.
RenderedCluster RenderCluster(const SyntheticScene& scene, int cluster_id,
                              const std::vector<int>& frames,
                              const PerturbationSpec& perturb);

// Ground-truth depth of a camera: z-buffered landmark splats.
DepthMap RenderDepth(const SyntheticScene& scene, int camera);

// Shared-visibility similarity |V_i ^ V_j| / sqrt(|V_i| |V_j|).
SimilarityMatrix SyntheticSimilarity(const SyntheticScene& scene);

// Projects co-visible landmarks into both frames. Keypoint noise is fixed per
// (frame, landmark) so the same landmark yields the same keypoint in every
// pair; outlier pairs get a uniformly random pixel in frame j.
class SyntheticMatcher : public Matcher {
 public:
  SyntheticMatcher(const SyntheticScene& scene, const PerturbationSpec& perturb);
  MatchSet Match(int frame_i, int frame_j, int max_keypoints) override;

  // Same as Match, also returning the landmark behind each pair (-1 for
  // outliers).
  MatchSet MatchWithLandmarks(int frame_i, int frame_j, int max_keypoints,
                              std::vector<int>* landmarks) const;

 private:
  Eigen::Vector2d Keypoint(int frame, int landmark) const;
  std::vector<int> Keypoints(int frame, int max_keypoints) const;

  const SyntheticScene& scene_;
  PerturbationSpec perturb_;
};

uint64_t SplitMix64(uint64_t x);
uint64_t MixSeed(uint64_t a, uint64_t b, uint64_t c = 0);

// Small platform-independent generator used by all synthetic data.
class SplitMixRng {
 public:
  explicit SplitMixRng(uint64_t seed) : state_(seed) {}
  uint64_t Next();
  double Uniform();  // [0, 1)
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  double Normal();
  Eigen::Vector3d UnitVector();

 private:
  uint64_t state_;
};

}  // namespace merg3r
