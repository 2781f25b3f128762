#include "merg3r/ordering.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "merg3r/error.h"

namespace merg3r {
namespace {

void CheckPermutation(const std::vector<int>& order) {
  std::vector<char> seen(order.size(), 0);
  for (int v : order) {
    if (v < 0 || v >= static_cast<int>(order.size()) || seen[v]) {
      throw Error(ErrorCode::kInvalidParameter, "order is not a permutation");
    }
    seen[v] = 1;
  }
}

double Median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lo + hi);
}

// Moves segments of up to three frames, possibly reversed, to the position
// that gains the most.
bool OrOptPass(const SimilarityMatrix& m, std::vector<int>& path) {
  const int n = static_cast<int>(path.size());
  bool improved = false;
  for (int len = 1; len <= 3 && len < n; ++len) {
    for (int i = 0; i + len <= n; ++i) {
      const int first = path[i];
      const int last = path[i + len - 1];
      const int prev = i > 0 ? path[i - 1] : -1;
      const int next = i + len < n ? path[i + len] : -1;
      // Objective change from cutting the segment out.
      double cut = 0.0;
      if (prev >= 0) cut -= m(prev, first);
      if (next >= 0) cut -= m(last, next);
      if (prev >= 0 && next >= 0) cut += m(prev, next);
      // Insert between rest[pos - 1] and rest[pos], rest being the path
      // without the segment.
      auto rest_at = [&](int q) { return q < i ? path[q] : path[q + len]; };
      const int rest_n = n - len;
      double best_gain = 1e-12;
      int best_pos = -1;
      bool best_rev = false;
      for (int pos = 0; pos <= rest_n; ++pos) {
        if (pos == i) continue;  // Original position.
        const int a = pos > 0 ? rest_at(pos - 1) : -1;
        const int b = pos < rest_n ? rest_at(pos) : -1;
        for (int rev = 0; rev < 2; ++rev) {
          const int head = rev ? last : first;
          const int tail = rev ? first : last;
          double gain = cut;
          if (a >= 0) gain += m(a, head);
          if (b >= 0) gain += m(tail, b);
          if (a >= 0 && b >= 0) gain -= m(a, b);
          if (gain > best_gain) {
            best_gain = gain;
            best_pos = pos;
            best_rev = rev == 1;
          }
        }
      }
      if (best_pos < 0) continue;
      std::vector<int> seg(path.begin() + i, path.begin() + i + len);
      if (best_rev) std::reverse(seg.begin(), seg.end());
      path.erase(path.begin() + i, path.begin() + i + len);
      path.insert(path.begin() + best_pos, seg.begin(), seg.end());
      improved = true;
    }
  }
  return improved;
}

// Open-path 2-opt: reversing path[i..j] replaces edges (i-1, i) and (j, j+1)
// by (i-1, j) and (i, j+1); missing end edges contribute nothing.
bool TwoOptPass(const SimilarityMatrix& m, std::vector<int>& path) {
  const int n = static_cast<int>(path.size());
  bool improved = false;
  for (int i = 0; i < n - 1; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;
      double before = 0.0;
      double after = 0.0;
      if (i > 0) {
        before += m(path[i - 1], path[i]);
        after += m(path[i - 1], path[j]);
      }
      if (j < n - 1) {
        before += m(path[j], path[j + 1]);
        after += m(path[i], path[j + 1]);
      }
      if (after > before + 1e-12) {
        std::reverse(path.begin() + i, path.begin() + j + 1);
        improved = true;
      }
    }
  }
  return improved;
}

}  // namespace

SimilarityMatrix::SimilarityMatrix(Eigen::MatrixXd values)
    : values_(std::move(values)) {
  if (values_.rows() != values_.cols()) {
    throw Error(ErrorCode::kInvalidSimilarity, "matrix is not square");
  }
  const int n = static_cast<int>(values_.rows());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double v = values_(i, j);
      if (!(v >= 0.0 && v <= 1.0)) {
        throw Error(ErrorCode::kInvalidSimilarity,
                    "entry (" + std::to_string(i) + "," + std::to_string(j) +
                        ") outside [0, 1]");
      }
      if (std::abs(v - values_(j, i)) > 1e-9) {
        throw Error(ErrorCode::kInvalidSimilarity,
                    "matrix not symmetric at (" + std::to_string(i) + "," +
                        std::to_string(j) + ")");
      }
    }
    if (std::abs(values_(i, i) - 1.0) > 1e-9) {
      throw Error(ErrorCode::kInvalidSimilarity,
                  "diagonal entry " + std::to_string(i) + " is not 1");
    }
  }
}

double PathObjective(const SimilarityMatrix& m, const std::vector<int>& path) {
  double sum = 0.0;
  for (size_t i = 1; i < path.size(); ++i) sum += m(path[i - 1], path[i]);
  return sum;
}

std::vector<int> BuildPseudoOrder(const SimilarityMatrix& m,
                                  int max_two_opt_passes) {
  const int n = m.n();
  if (n < 1) throw Error(ErrorCode::kInvalidSimilarity, "empty matrix");
  std::vector<int> identity(n);
  std::iota(identity.begin(), identity.end(), 0);
  if (n <= 2) return identity;

  int start = 0;
  double best_row = -1.0;
  for (int i = 0; i < n; ++i) {
    const double row = m.values().row(i).sum();
    if (row > best_row) {
      best_row = row;
      start = i;
    }
  }

  std::vector<int> path;
  path.reserve(n);
  std::vector<char> visited(n, 0);
  path.push_back(start);
  visited[start] = 1;
  for (int step = 1; step < n; ++step) {
    const int cur = path.back();
    int next = -1;
    double best = -1.0;
    for (int j = 0; j < n; ++j) {
      if (!visited[j] && m(cur, j) > best) {
        best = m(cur, j);
        next = j;
      }
    }
    path.push_back(next);
    visited[next] = 1;
  }

  for (int pass = 0; pass < max_two_opt_passes; ++pass) {
    const bool two_opt = TwoOptPass(m, path);
    const bool or_opt = OrOptPass(m, path);
    if (!two_opt && !or_opt) break;
  }

  if (PathObjective(m, identity) > PathObjective(m, path)) return identity;
  return path;
}

std::vector<int> Interleave(const std::vector<int>& order, int k) {
  const int n = static_cast<int>(order.size());
  if (k < 1 || k > std::max(n, 1)) {
    throw Error(ErrorCode::kInvalidParameter,
                "interleave k=" + std::to_string(k) + " outside [1, " +
                    std::to_string(n) + "]");
  }
  const int stride = (n + k - 1) / k;
  std::vector<int> out;
  out.reserve(n);
  for (int i = 0; i < k * stride; ++i) {
    const int idx = (i % k) * stride + i / k;
    if (idx < n) out.push_back(order[idx]);
  }
  return out;
}

std::vector<int> InterleaveSimilarityConstrained(const std::vector<int>& order,
                                                 const SimilarityMatrix& m,
                                                 int k) {
  const std::vector<int> base = Interleave(order, k);
  const int n = static_cast<int>(base.size());
  if (m.n() != n) {
    throw Error(ErrorCode::kInvalidParameter,
                "similarity matrix size does not match the ordering");
  }
  CheckPermutation(base);
  if (n == 0) return base;

  std::vector<int> position(n);
  for (int i = 0; i < n; ++i) position[base[i]] = i;
  std::vector<char> selected(n, 0);
  std::vector<int> out;
  out.reserve(n);
  out.push_back(base[0]);
  selected[base[0]] = 1;

  std::vector<double> sims;
  while (static_cast<int>(out.size()) < n) {
    const int last = out.back();
    sims.clear();
    for (int j = 0; j < n; ++j) {
      if (j != last) sims.push_back(m(last, j));
    }
    const double median = Median(sims);
    const double lo = 0.5 * median;
    const double hi = 0.95 * median;

    int in_band = -1;
    int not_dissimilar = -1;
    int any = -1;
    for (int step = 1; step <= n && in_band < 0; ++step) {
      const int cand = base[(position[last] + step) % n];
      if (selected[cand]) continue;
      const double s = m(last, cand);
      if (any < 0) any = cand;
      if (not_dissimilar < 0 && s >= lo) not_dissimilar = cand;
      if (s >= lo && s <= hi) in_band = cand;
    }
    const int pick =
        in_band >= 0 ? in_band : (not_dissimilar >= 0 ? not_dissimilar : any);
    out.push_back(pick);
    selected[pick] = 1;
  }
  return out;
}

int NumWindows(int n, int t, int o) {
  if (n <= t) return 1;
  const int stride = t - o;
  return (n - t + stride - 1) / stride + 1;
}

SceneGraphPlan MakeSubsets(const std::vector<int>& interleaved, int t, int o) {
  const int n = static_cast<int>(interleaved.size());
  if (n < 1) throw Error(ErrorCode::kInvalidParameter, "no frames to split");
  if (t < 1 || o < 0 || o >= t) {
    throw Error(ErrorCode::kInvalidParameter,
                "subset size / overlap must satisfy 0 <= O < T (T=" +
                    std::to_string(t) + ", O=" + std::to_string(o) + ")");
  }
  SceneGraphPlan plan;
  plan.interleaved_order = interleaved;
  plan.subset_size = t;
  plan.overlap = o;
  const int stride = t - o;
  for (int start = 0; start < n; start += stride) {
    const int end = std::min(n, start + t);
    if (start > 0 && end - start - 1 < o) break;
    plan.subsets.emplace_back(interleaved.begin() + start,
                              interleaved.begin() + end);
    if (end == n) break;
  }
  return plan;
}

SceneGraphPlan BuildPlan(const SimilarityMatrix& m, const PlanOptions& options) {
  const int n = m.n();
  const int k = options.n_subsequences > 0
                    ? options.n_subsequences
                    : std::min(n, NumWindows(n, options.subset_size,
                                             options.overlap));
  if (options.overlap >= options.subset_size) {
    throw Error(ErrorCode::kInvalidParameter, "overlap must be < subset size");
  }
  std::vector<int> pseudo = BuildPseudoOrder(m);
  std::vector<int> interleaved = options.similarity_band
                                     ? InterleaveSimilarityConstrained(pseudo, m, k)
                                     : Interleave(pseudo, k);
  SceneGraphPlan plan = MakeSubsets(interleaved, options.subset_size,
                                    options.overlap);
  plan.pseudo_order = std::move(pseudo);
  plan.n_subsequences = k;
  return plan;
}

}  // namespace merg3r
