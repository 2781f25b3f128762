#include "merg3r/evaluation.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "merg3r/alignment.h"
#include "merg3r/error.h"

namespace merg3r {
namespace {

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

std::vector<Eigen::Vector3d> Centers(const std::vector<CameraPose>& poses) {
  std::vector<Eigen::Vector3d> c;
  c.reserve(poses.size());
  for (const auto& p : poses) c.push_back(p.Center());
  return c;
}

void CheckParallel(const std::vector<CameraPose>& est,
                   const std::vector<CameraPose>& gt, size_t min_size) {
  if (est.size() != gt.size()) {
    throw Error(ErrorCode::kInvalidInput,
                "estimated and ground-truth trajectories differ in length");
  }
  if (est.size() < min_size) {
    throw Error(ErrorCode::kDegenerateGeometry,
                "trajectory needs at least " + std::to_string(min_size) +
                    " poses");
  }
}

double AngleBetween(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace

Sim3Transform UmeyamaAlign(const std::vector<CameraPose>& est,
                           const std::vector<CameraPose>& gt) {
  CheckParallel(est, gt, 3);
  return WeightedUmeyama(Centers(gt), Centers(est),
                         std::vector<double>(est.size(), 1.0));
}

PairErrors RelativePairErrors(const std::vector<CameraPose>& est,
                              const std::vector<CameraPose>& gt) {
  CheckParallel(est, gt, 2);
  PairErrors out;
  const size_t n = est.size();
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      const Eigen::Matrix3d r_est =
          est[j].rotation * est[i].rotation.transpose();
      const Eigen::Matrix3d r_gt = gt[j].rotation * gt[i].rotation.transpose();
      const Eigen::Vector3d t_est =
          est[j].translation - r_est * est[i].translation;
      const Eigen::Vector3d t_gt = gt[j].translation - r_gt * gt[i].translation;
      const double t_scale =
          1.0 + gt[i].translation.norm() + gt[j].translation.norm();
      if (t_gt.norm() <= 1e-12 * t_scale) {
        ++out.skipped;
        continue;
      }
      out.rotation_deg.push_back(
          RotationAngle(r_est.transpose() * r_gt) * kRadToDeg);
      out.translation_deg.push_back(
          t_est.norm() == 0.0 ? 90.0 : AngleBetween(t_est, t_gt) * kRadToDeg);
    }
  }
  return out;
}

RelativeAccuracy PairwiseRelativeAccuracy(const std::vector<CameraPose>& est,
                                          const std::vector<CameraPose>& gt,
                                          const std::vector<int>& thresholds) {
  const PairErrors e = RelativePairErrors(est, gt);
  RelativeAccuracy out;
  out.pairs = static_cast<int>(e.rotation_deg.size());
  out.skipped_pairs = e.skipped;
  auto percent_below = [&](const std::vector<double>& v, double tau) {
    if (v.empty()) return 0.0;
    const auto k = std::count_if(v.begin(), v.end(),
                                 [&](double x) { return x < tau; });
    return 100.0 * static_cast<double>(k) / static_cast<double>(v.size());
  };
  for (int tau : thresholds) {
    out.rra_at[tau] = percent_below(e.rotation_deg, tau);
    out.rta_at[tau] = percent_below(e.translation_deg, tau);
  }
  double sum = 0.0;
  for (int t = 1; t <= 30; ++t) {
    sum += std::min(percent_below(e.rotation_deg, t),
                    percent_below(e.translation_deg, t));
  }
  out.auc_at_30 = sum / 30.0;
  return out;
}

TrajectoryErrors ComputeTrajectoryErrors(const std::vector<CameraPose>& est,
                                         const std::vector<CameraPose>& gt) {
  TrajectoryErrors out;
  out.alignment = UmeyamaAlign(est, gt);
  const Sim3Transform& a = out.alignment;
  const size_t n = est.size();
  double sq = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sq += (a * est[i].Center() - gt[i].Center()).squaredNorm();
  }
  out.ate = std::sqrt(sq / n);

  // Relative motions in the aligned frame: camera-to-world poses mapped by a.
  auto world_pose = [&](const CameraPose& p, bool aligned) {
    Eigen::Matrix3d r = p.rotation.transpose();
    Eigen::Vector3d c = p.Center();
    if (aligned) {
      r = a.rotation * r;
      c = a * c;
    }
    return std::make_pair(r, c);
  };
  double rot_sum = 0.0;
  double trans_sum = 0.0;
  for (size_t i = 0; i + 1 < n; ++i) {
    const auto [re0, ce0] = world_pose(est[i], true);
    const auto [re1, ce1] = world_pose(est[i + 1], true);
    const auto [rg0, cg0] = world_pose(gt[i], false);
    const auto [rg1, cg1] = world_pose(gt[i + 1], false);
    const Eigen::Matrix3d d_est = re0.transpose() * re1;
    const Eigen::Matrix3d d_gt = rg0.transpose() * rg1;
    const Eigen::Vector3d t_est = re0.transpose() * (ce1 - ce0);
    const Eigen::Vector3d t_gt = rg0.transpose() * (cg1 - cg0);
    rot_sum += RotationAngle(d_gt.transpose() * d_est) * kRadToDeg;
    trans_sum += (t_est - t_gt).norm();
  }
  if (n > 1) {
    out.rre = rot_sum / (n - 1);
    out.rte = trans_sum / (n - 1);
  }
  return out;
}

TrajectoryMetrics EvaluateTrajectory(const std::vector<CameraPose>& est,
                                     const std::vector<CameraPose>& gt) {
  return {ComputeTrajectoryErrors(est, gt), PairwiseRelativeAccuracy(est, gt)};
}

KdTree::KdTree(std::vector<Eigen::Vector3d> points)
    : points_(std::move(points)) {
  std::vector<size_t> idx(points_.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  nodes_.reserve(points_.size());
  root_ = Build(idx, 0, idx.size(), 0);
}

int KdTree::Build(std::vector<size_t>& idx, size_t lo, size_t hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const size_t mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](size_t a, size_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({axis, idx[mid], -1, -1});
  const int left = Build(idx, lo, mid, depth + 1);
  const int right = Build(idx, mid + 1, hi, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::Search(int node, const Eigen::Vector3d& q, size_t& best,
                    double& best_d2) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Eigen::Vector3d& p = points_[n.point];
  const double d2 = (p - q).squaredNorm();
  if (d2 < best_d2) {
    best_d2 = d2;
    best = n.point;
  }
  const double diff = q[n.axis] - p[n.axis];
  Search(diff < 0 ? n.left : n.right, q, best, best_d2);
  if (diff * diff < best_d2) Search(diff < 0 ? n.right : n.left, q, best, best_d2);
}

std::pair<size_t, double> KdTree::Nearest(const Eigen::Vector3d& q) const {
  size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  Search(root_, q, best, best_d2);
  return {best, std::sqrt(best_d2)};
}

CloudDistance PointCloudDistance(const PointCloud& pred, const PointCloud& gt) {
  if (pred.empty() || gt.empty()) {
    throw Error(ErrorCode::kInvalidInput, "point clouds must be nonempty");
  }
  auto mean_nn = [](const PointCloud& from, const PointCloud& to) {
    const KdTree tree(to.points);
    double sum = 0.0;
    for (const auto& p : from.points) sum += tree.Nearest(p).second;
    return sum / static_cast<double>(from.size());
  };
  return {mean_nn(pred, gt), mean_nn(gt, pred)};
}

}  // namespace merg3r
