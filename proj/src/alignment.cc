#include "merg3r/alignment.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/SVD>

#include "merg3r/error.h"
#include "merg3r/parallel.h"

namespace merg3r {
namespace {

// Normal-consistent MAD scale for residual norms centred at zero.
constexpr double kMadToSigma = 1.4826;

double Median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + v[mid]);
}

std::vector<double> Residuals(const CorrespondenceSet& c, const Sim3Transform& t) {
  std::vector<double> r(c.size());
  for (size_t i = 0; i < c.size(); ++i) {
    r[i] = (c.points_a[i] - t * c.points_b[i]).norm();
  }
  return r;
}

double Objective(const std::vector<double>& r, const std::vector<double>& conf,
                 double delta) {
  double sum = 0.0;
  for (size_t i = 0; i < r.size(); ++i) sum += conf[i] * HuberRho(r[i], delta);
  return sum;
}

double Spread(const std::vector<Eigen::Vector3d>& pts) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double var = 0.0;
  for (const auto& p : pts) var += (p - mean).squaredNorm();
  return std::sqrt(var / pts.size());
}

double ParameterChange(const Sim3Transform& a, const Sim3Transform& b,
                       double scale_ref) {
  return std::abs(a.scale - b.scale) / a.scale +
         RotationAngle(a.rotation.transpose() * b.rotation) +
         (a.translation - b.translation).norm() / scale_ref;
}

}  // namespace

double HuberRho(double r, double delta) {
  return r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
}

double HuberWeight(double r, double delta) {
  return r <= delta ? 1.0 : delta / r;
}

CorrespondenceSet FilterByConfidencePercentile(const CorrespondenceSet& c,
                                               double percentile) {
  if (!(percentile >= 0.0 && percentile < 100.0)) {
    throw Error(ErrorCode::kInvalidParameter,
                "confidence percentile must lie in [0, 100)");
  }
  const size_t n = c.size();
  const size_t drop = static_cast<size_t>(
      std::floor(static_cast<double>(n) * percentile / 100.0 + 1e-9));
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t x, size_t y) {
    if (c.confidences[x] != c.confidences[y]) {
      return c.confidences[x] < c.confidences[y];
    }
    return x < y;
  });
  std::vector<char> keep(n, 1);
  for (size_t i = 0; i < drop; ++i) keep[idx[i]] = 0;
  CorrespondenceSet out;
  for (size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    out.points_a.push_back(c.points_a[i]);
    out.points_b.push_back(c.points_b[i]);
    out.confidences.push_back(c.confidences[i]);
  }
  return out;
}

CorrespondenceSet ExtractOverlapCorrespondences(const ClusterReconstruction& a,
                                                const ClusterReconstruction& b,
                                                double conf_percentile,
                                                size_t max_pairs) {
  CorrespondenceSet all;
  bool shared = false;
  for (size_t ia = 0; ia < a.size(); ++ia) {
    const int ib = b.IndexOf(a.frame_ids[ia]);
    if (ib < 0) continue;
    shared = true;
    const DepthMap& da = a.depths[ia];
    const DepthMap& db = b.depths[ib];
    const ConfidenceMap& ca = a.confidences[ia];
    const ConfidenceMap& cb = b.confidences[ib];
    if (da.width != db.width || da.height != db.height) {
      throw Error(ErrorCode::kSchemaViolation,
                  "frame " + std::to_string(a.frame_ids[ia]) +
                      " has different sizes in the two clusters");
    }
    for (int y = 0; y < da.height; ++y) {
      for (int x = 0; x < da.width; ++x) {
        const float za = da.at(x, y);
        const float zb = db.at(x, y);
        if (za <= 0 || zb <= 0) continue;
        const Eigen::Vector2d px(x, y);
        all.points_a.push_back(Unproject(px, za, a.cameras[ia]));
        all.points_b.push_back(Unproject(px, zb, b.cameras[ib]));
        all.confidences.push_back(
            std::min<double>(ca.at(x, y), cb.at(x, y)));
      }
    }
  }
  if (!shared) {
    throw Error(ErrorCode::kNoOverlap,
                "clusters " + std::to_string(a.cluster_id) + " and " +
                    std::to_string(b.cluster_id) + " share no frames");
  }
  CorrespondenceSet kept = FilterByConfidencePercentile(all, conf_percentile);
  if (kept.size() == 0) {
    throw Error(ErrorCode::kInsufficientCorrespondences,
                "no valid overlap pixels between clusters " +
                    std::to_string(a.cluster_id) + " and " +
                    std::to_string(b.cluster_id));
  }
  if (max_pairs == 0 || kept.size() <= max_pairs) return kept;
  CorrespondenceSet sub;
  const size_t n = kept.size();
  for (size_t j = 0; j < max_pairs; ++j) {
    const size_t i = j * n / max_pairs;
    sub.points_a.push_back(kept.points_a[i]);
    sub.points_b.push_back(kept.points_b[i]);
    sub.confidences.push_back(kept.confidences[i]);
  }
  return sub;
}

Sim3Transform WeightedUmeyama(const std::vector<Eigen::Vector3d>& a,
                              const std::vector<Eigen::Vector3d>& b,
                              const std::vector<double>& weights) {
  const size_t n = a.size();
  if (n < 3 || b.size() != n || weights.size() != n) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "similarity fit needs at least 3 correspondences");
  }
  double wsum = 0.0;
  Eigen::Vector3d mean_a = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_b = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    wsum += weights[i];
    mean_a += weights[i] * a[i];
    mean_b += weights[i] * b[i];
  }
  if (!(wsum > 0)) {
    throw Error(ErrorCode::kDegenerateGeometry, "total weight is zero");
  }
  mean_a /= wsum;
  mean_b /= wsum;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d cov_b = Eigen::Matrix3d::Zero();
  double var_b = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d da = a[i] - mean_a;
    const Eigen::Vector3d db = b[i] - mean_b;
    cov += weights[i] * da * db.transpose();
    cov_b += weights[i] * db * db.transpose();
    var_b += weights[i] * db.squaredNorm();
  }
  cov /= wsum;
  cov_b /= wsum;
  var_b /= wsum;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd_b(cov_b);
  const Eigen::Vector3d sb = svd_b.singularValues();
  if (!(sb[0] > 0) || sb[1] <= 1e-12 * sb[0]) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "correspondences are collinear or coincident");
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU |
                                                 Eigen::ComputeFullV);
  Eigen::Vector3d s(1, 1, 1);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s[2] = -1;
  Sim3Transform t;
  t.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  t.scale = svd.singularValues().dot(s) / var_b;
  if (!(t.scale > 0)) {
    throw Error(ErrorCode::kDegenerateGeometry, "non-positive scale estimate");
  }
  t.translation = mean_a - t.scale * (t.rotation * mean_b);
  return t;
}

AlignmentResult EstimateSim3Irls(const CorrespondenceSet& c,
                                 const IrlsOptions& options) {
  if (c.points_b.size() != c.size() || c.confidences.size() != c.size()) {
    throw Error(ErrorCode::kInvalidInput, "correspondence arrays differ");
  }
  AlignmentResult result;
  Sim3Transform t = WeightedUmeyama(c.points_a, c.points_b, c.confidences);
  std::vector<double> r = Residuals(c, t);
  const double scale_ref = std::max(Spread(c.points_a), 1e-300);
  const double floor = options.delta_floor * scale_ref;
  double delta = std::max(options.huber_k * kMadToSigma * Median(r), floor);
  double objective = Objective(r, c.confidences, delta);
  result.initial_objective = objective;
  result.objective_history.push_back(objective);

  std::vector<double> w(c.size());
  for (int it = 0; options.robust && it < options.max_iters; ++it) {
    for (size_t i = 0; i < c.size(); ++i) {
      w[i] = c.confidences[i] * HuberWeight(r[i], delta);
    }
    Sim3Transform next;
    try {
      next = WeightedUmeyama(c.points_a, c.points_b, w);
    } catch (const Error&) {
      break;  // Down-weighting left a degenerate support; keep the last fit.
    }
    std::vector<double> r_next = Residuals(c, next);
    const double obj_same_delta = Objective(r_next, c.confidences, delta);
    if (obj_same_delta > objective * (1 + 1e-12)) break;
    const double change = ParameterChange(t, next, scale_ref);
    t = next;
    r = std::move(r_next);
    // The threshold may only shrink, which keeps the objective monotone.
    delta = std::min(
        delta, std::max(options.huber_k * kMadToSigma * Median(r), floor));
    objective = Objective(r, c.confidences, delta);
    result.objective_history.push_back(objective);
    result.iterations_used = it + 1;
    if (change < options.tol) break;
  }

  result.transform = t;
  result.final_objective = objective;
  result.final_delta = delta;
  result.inlier_count = static_cast<int>(
      std::count_if(r.begin(), r.end(), [&](double x) { return x <= delta; }));
  return result;
}

std::vector<Sim3Transform> ChainAlignments(
    const std::vector<AlignmentResult>& pairwise) {
  std::vector<Sim3Transform> out;
  out.reserve(pairwise.size() + 1);
  out.push_back(Sim3Transform::Identity());
  for (const auto& p : pairwise) {
    out.push_back(ComposeSim3(out.back(), p.transform));
  }
  return out;
}

std::vector<AlignmentResult> AlignConsecutiveClusters(
    const std::vector<ClusterReconstruction>& clusters, double conf_percentile,
    const IrlsOptions& options, int threads, size_t max_pairs) {
  if (clusters.size() < 2) return {};
  std::vector<AlignmentResult> results(clusters.size() - 1);
  ParallelFor(results.size(), threads, [&](size_t k) {
    const CorrespondenceSet c = ExtractOverlapCorrespondences(
        clusters[k], clusters[k + 1], conf_percentile, max_pairs);
    results[k] = EstimateSim3Irls(c, options);
  });
  return results;
}

std::optional<double> MergedFrame::DepthAt(const Eigen::Vector2d& pixel) const {
  const std::optional<float> z = depth.SampleNearest(pixel);
  if (!z || !(*z > 0)) return std::nullopt;
  return *z * depth_scale;
}

const MergedFrame* MergedScene::Find(int frame_id) const {
  auto it = std::lower_bound(
      frames.begin(), frames.end(), frame_id,
      [](const MergedFrame& f, int id) { return f.camera.frame_id < id; });
  if (it == frames.end() || it->camera.frame_id != frame_id) return nullptr;
  return &*it;
}

std::vector<CameraParams> MergedScene::Cameras() const {
  std::vector<CameraParams> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(f.camera);
  return out;
}

PointCloud SceneCloud(const MergedScene& scene, double conf_floor) {
  PointCloud cloud;
  for (const MergedFrame& f : scene.frames) {
    for (int y = 0; y < f.depth.height; ++y) {
      for (int x = 0; x < f.depth.width; ++x) {
        const float z = f.depth.at(x, y);
        const float conf = f.confidence.at(x, y);
        if (z <= 0 || conf < conf_floor) continue;
        cloud.points.push_back(
            Unproject(Eigen::Vector2d(x, y), z * f.depth_scale, f.camera));
        cloud.confidences.push_back(conf);
      }
    }
  }
  return cloud;
}

MergedScene MergeClusters(const std::vector<ClusterReconstruction>& clusters,
                          const std::vector<Sim3Transform>& transforms,
                          bool build_cloud, double conf_floor) {
  if (clusters.size() != transforms.size()) {
    throw Error(ErrorCode::kInvalidInput,
                "one transform per cluster is required");
  }
  MergedScene scene;
  for (size_t k = 0; k < clusters.size(); ++k) {
    const ClusterReconstruction& c = clusters[k];
    const Sim3Transform& t = transforms[k];
    for (size_t i = 0; i < c.size(); ++i) {
      const double mean_conf = c.MeanConfidence(static_cast<int>(i));
      auto it = std::lower_bound(
          scene.frames.begin(), scene.frames.end(), c.frame_ids[i],
          [](const MergedFrame& f, int id) { return f.camera.frame_id < id; });
      const bool exists = it != scene.frames.end() &&
                          it->camera.frame_id == c.frame_ids[i];
      if (exists && it->mean_confidence >= mean_conf) continue;
      MergedFrame f;
      f.camera = TransformCamera(t, c.cameras[i]);
      f.depth = c.depths[i];
      f.depth_scale = t.scale;
      f.confidence = c.confidences[i];
      f.cluster_id = c.cluster_id;
      f.mean_confidence = mean_conf;
      if (exists) {
        *it = std::move(f);
      } else {
        scene.frames.insert(it, std::move(f));
      }
    }
  }
  if (build_cloud) scene.cloud = SceneCloud(scene, conf_floor);
  return scene;
}

}  // namespace merg3r
