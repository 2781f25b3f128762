#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "merg3r/cluster.h"
#include "merg3r/geometry.h"

namespace merg3r {

// Pairs (p_a, p_b) of 3D points believed to be the same surface point in
// two cluster frames, with combined per-pair confidence.
struct CorrespondenceSet {
  std::vector<Eigen::Vector3d> points_a;
  std::vector<Eigen::Vector3d> points_b;
  std::vector<double> confidences;

  size_t size() const { return points_a.size(); }
};

struct AlignmentResult {
  Sim3Transform transform;  // Maps cluster b coordinates into cluster a.
  int inlier_count = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  int iterations_used = 0;
  double final_delta = 0.0;
  std::vector<double> objective_history;
};

struct IrlsOptions {
  int max_iters = 20;
  double tol = 1e-9;
  // Huber threshold = huber_k * robust residual scale.
  double huber_k = 1.345;
  // Lower bound on the threshold relative to the point spread.
  double delta_floor = 1e-6;
  // When false only the confidence-weighted closed form is computed.
  bool robust = true;
};

double HuberRho(double r, double delta);
// rho'(r) / r, the IRLS weight of a residual of norm r.
double HuberWeight(double r, double delta);

// Drops the floor(n * percentile / 100) least confident pairs. Among equal
// confidences the lower index is dropped first. Survivors keep their order.
CorrespondenceSet FilterByConfidencePercentile(const CorrespondenceSet& c,
                                               double percentile);

// Unprojects every pixel valid in both clusters for each shared frame,
// filters by confidence percentile and subsamples to at most max_pairs.
CorrespondenceSet ExtractOverlapCorrespondences(const ClusterReconstruction& a,
                                                const ClusterReconstruction& b,
                                                double conf_percentile,
                                                size_t max_pairs = 50000);

// Closed-form minimiser of sum_i w_i |a_i - T b_i|^2 over Sim(3).
// Throws kDegenerateGeometry for fewer than 3 points, zero total weight or a
// collinear configuration.
Sim3Transform WeightedUmeyama(const std::vector<Eigen::Vector3d>& a,
                              const std::vector<Eigen::Vector3d>& b,
                              const std::vector<double>& weights);

// Robust Sim(3) fit minimising sum_i c_i rho(|a_i - T b_i|) by IRLS.
AlignmentResult EstimateSim3Irls(const CorrespondenceSet& c,
                                 const IrlsOptions& options = {});

// World transforms per cluster: identity for cluster 0 and
// T_{0,1} o ... o T_{k-1,k} for cluster k.
std::vector<Sim3Transform> ChainAlignments(
    const std::vector<AlignmentResult>& pairwise);

// Aligns each pair of consecutive clusters (concurrently when threads > 1).
std::vector<AlignmentResult> AlignConsecutiveClusters(
    const std::vector<ClusterReconstruction>& clusters, double conf_percentile,
    const IrlsOptions& options = {}, int threads = 1,
    size_t max_pairs = 50000);

// A frame expressed in the global frame. Stored depths stay in the source
// cluster's units; depth_scale converts them to global units.
struct MergedFrame {
  CameraParams camera;
  DepthMap depth;
  ConfidenceMap confidence;
  double depth_scale = 1.0;
  int cluster_id = 0;
  double mean_confidence = 0.0;

  // Global-frame depth at the nearest pixel, or nullopt when invalid.
  std::optional<double> DepthAt(const Eigen::Vector2d& pixel) const;
};

// Frames in the global frame, sorted by frame id.
struct MergedScene {
  std::vector<MergedFrame> frames;
  PointCloud cloud;

  const MergedFrame* Find(int frame_id) const;
  std::vector<CameraParams> Cameras() const;
};

// Unprojects every valid pixel with confidence >= conf_floor through the
// scene's current cameras.
PointCloud SceneCloud(const MergedScene& scene, double conf_floor);

// Maps every cluster into the global frame. A frame reconstructed by several
// clusters keeps the instance with the higher mean confidence.
MergedScene MergeClusters(const std::vector<ClusterReconstruction>& clusters,
                          const std::vector<Sim3Transform>& transforms,
                          bool build_cloud = true, double conf_floor = 0.0);

}  // namespace merg3r
