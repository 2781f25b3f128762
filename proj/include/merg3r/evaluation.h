#pragma once

#include <map>
#include <vector>

#include "merg3r/geometry.h"

namespace merg3r {

// Similarity mapping estimated camera centers onto ground-truth centers in
// the least-squares sense. Throws kDegenerateGeometry for fewer than three
// poses or collinear centers.
Sim3Transform UmeyamaAlign(const std::vector<CameraPose>& est,
                           const std::vector<CameraPose>& gt);

struct RelativeAccuracy {
  std::map<int, double> rra_at;  // Threshold (degrees) -> percentage.
  std::map<int, double> rta_at;
  double auc_at_30 = 0.0;
  int pairs = 0;
  int skipped_pairs = 0;  // Pairs with zero ground-truth baseline.
};

// Angular errors of relative rotations and translation directions over all
// unordered pairs. AUC@30 averages min(RRA@t, RTA@t) over t = 1..30.
RelativeAccuracy PairwiseRelativeAccuracy(const std::vector<CameraPose>& est,
                                          const std::vector<CameraPose>& gt,
                                          const std::vector<int>& thresholds = {
                                              5, 15, 30});

struct PairErrors {
  std::vector<double> rotation_deg;
  std::vector<double> translation_deg;
  int skipped = 0;
};

// Per-pair errors in (i < j) lexicographic order.
PairErrors RelativePairErrors(const std::vector<CameraPose>& est,
                              const std::vector<CameraPose>& gt);

struct TrajectoryErrors {
  double ate = 0.0;  // RMSE of aligned camera centers.
  double rre = 0.0;  // Mean consecutive relative rotation error, degrees.
  double rte = 0.0;  // Mean consecutive relative translation error.
  Sim3Transform alignment;
};

TrajectoryErrors ComputeTrajectoryErrors(const std::vector<CameraPose>& est,
                                         const std::vector<CameraPose>& gt);

struct TrajectoryMetrics {
  TrajectoryErrors trajectory;
  RelativeAccuracy relative;
};

TrajectoryMetrics EvaluateTrajectory(const std::vector<CameraPose>& est,
                                     const std::vector<CameraPose>& gt);

struct CloudDistance {
  double accuracy = 0.0;    // Mean distance pred -> nearest gt point.
  double completion = 0.0;  // Mean distance gt -> nearest pred point.
};

// Throws kInvalidInput when either cloud is empty.
CloudDistance PointCloudDistance(const PointCloud& pred, const PointCloud& gt);

// Static 3-d tree for nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Eigen::Vector3d> points);
  // Index and distance of the nearest stored point.
  std::pair<size_t, double> Nearest(const Eigen::Vector3d& q) const;
  size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = 0;
    size_t point = 0;
    int left = -1;
    int right = -1;
  };
  int Build(std::vector<size_t>& idx, size_t lo, size_t hi, int depth);
  void Search(int node, const Eigen::Vector3d& q, size_t& best,
              double& best_d2) const;

  std::vector<Eigen::Vector3d> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace merg3r
