#pragma once

#include <vector>

#include <Eigen/Core>

namespace merg3r {

// Dense pairwise visual similarity. Construction validates symmetry,
// unit diagonal and the [0, 1] range, throwing kInvalidSimilarity.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  explicit SimilarityMatrix(Eigen::MatrixXd values);

  int n() const { return static_cast<int>(values_.rows()); }
  double operator()(int i, int j) const { return values_(i, j); }
  const Eigen::MatrixXd& values() const { return values_; }

 private:
  Eigen::MatrixXd values_;
};

struct SceneGraphPlan {
  std::vector<int> pseudo_order;
  std::vector<int> interleaved_order;
  std::vector<std::vector<int>> subsets;
  int subset_size = 0;
  int overlap = 0;
  int n_subsequences = 0;
};

// Sum of similarities between consecutive entries of `path`.
double PathObjective(const SimilarityMatrix& m, const std::vector<int>& path);

// Approximate maximum-similarity Hamiltonian path: greedy nearest neighbour
// from the node with the largest row sum, then open-path 2-opt passes.
// Never returns a path worse than the identity ordering.
std::vector<int> BuildPseudoOrder(const SimilarityMatrix& m,
                                  int max_two_opt_passes = 10);

// Cyclic deal of `order` into k subsequences with stride ceil(n / k).
std::vector<int> Interleave(const std::vector<int>& order, int k);

// Walks the interleaved sequence, preferring as next frame the first
// unselected image whose similarity to the previous pick lies in
// [0.5 m, 0.95 m], m being the median similarity of the previous pick to all
// other images. Falls back to the next unselected image that is not overly
// dissimilar (>= 0.5 m), then to the next unselected image.
std::vector<int> InterleaveSimilarityConstrained(const std::vector<int>& order,
                                                 const SimilarityMatrix& m,
                                                 int k);

// Number of sliding windows of size t with overlap o over n frames.
int NumWindows(int n, int t, int o);

// Sliding windows of length t and stride t - o. A window is kept when it
// holds at least o frames beyond its first frame, i.e. when it adds a frame
// the previous window does not cover.
SceneGraphPlan MakeSubsets(const std::vector<int>& interleaved, int t, int o);

struct PlanOptions {
  int subset_size = 100;
  int overlap = 5;
  int n_subsequences = 0;  // 0 selects NumWindows(n, T, O).
  bool similarity_band = false;
};

SceneGraphPlan BuildPlan(const SimilarityMatrix& m, const PlanOptions& options);

}  // namespace merg3r
