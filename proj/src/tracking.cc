#include "merg3r/tracking.h"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "merg3r/error.h"
#include "merg3r/io.h"
#include "merg3r/parallel.h"

namespace merg3r {
namespace {

struct KeypointKey {
  int frame;
  int x;
  int y;
  bool operator==(const KeypointKey& o) const {
    return frame == o.frame && x == o.x && y == o.y;
  }
};

struct KeypointKeyHash {
  size_t operator()(const KeypointKey& k) const {
    size_t h = std::hash<int>()(k.frame);
    h = h * 1000003u ^ std::hash<int>()(k.x);
    h = h * 1000003u ^ std::hash<int>()(k.y);
    return h;
  }
};

class DisjointSet {
 public:
  int Add() {
    parent_.push_back(static_cast<int>(parent_.size()));
    rank_.push_back(0);
    return parent_.back();
  }
  int Find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void Union(int a, int b) {
    a = Find(a);
    b = Find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  }

 private:
  std::vector<int> parent_;
  std::vector<int> rank_;
};

bool ReprojectsWithin(const Eigen::Vector2d& from_px, const CameraParams& from,
                      const DepthMap& from_depth, double from_scale,
                      const Eigen::Vector2d& to_px, const CameraParams& to,
                      double tau) {
  const std::optional<float> z = from_depth.SampleNearest(from_px);
  if (!z || !(*z > 0)) return false;
  const Eigen::Vector3d x = Unproject(from_px, *z * from_scale, from);
  const std::optional<Eigen::Vector2d> p = Project(x, to);
  return p && (*p - to_px).norm() <= tau;
}

}  // namespace

FrameGraph BuildFrameGraph(const SimilarityMatrix& m, int k) {
  const int n = m.n();
  if (k < 1 || k >= n) {
    throw Error(ErrorCode::kInvalidParameter,
                "k must satisfy 1 <= k < n (k=" + std::to_string(k) +
                    ", n=" + std::to_string(n) + ")");
  }
  FrameGraph graph;
  std::set<std::pair<int, int>> used;
  std::vector<int> cand(n - 1);
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j) {
      if (j != i) cand.push_back(j);
    }
    std::stable_sort(cand.begin(), cand.end(),
                     [&](int a, int b) { return m(i, a) > m(i, b); });
    int added = 0;
    for (int j : cand) {
      if (added == k) break;
      const auto key = std::minmax(i, j);
      if (!used.insert(key).second) continue;
      graph.edges.emplace_back(i, j);
      ++added;
    }
  }
  return graph;
}

MatchSet FileMatcher::Match(int frame_i, int frame_j, int max_keypoints) {
  auto path_for = [&](int a, int b) {
    return dir_ / (std::to_string(a) + "_" + std::to_string(b) + ".json");
  };
  MatchSet ms;
  std::filesystem::path path = path_for(frame_i, frame_j);
  if (std::filesystem::exists(path)) {
    const std::vector<uint8_t> bytes = ReadFileBytes(path);
    ms = DecodeMatchSet(std::string(bytes.begin(), bytes.end()),
                        path.string());
  } else {
    path = path_for(frame_j, frame_i);
    const std::vector<uint8_t> bytes = ReadFileBytes(path);
    ms = DecodeMatchSet(std::string(bytes.begin(), bytes.end()),
                        path.string());
    std::swap(ms.frame_i, ms.frame_j);
    for (auto& p : ms.pairs) std::swap(p.in_i, p.in_j);
  }
  if (ms.frame_i != frame_i || ms.frame_j != frame_j) {
    throw Error(ErrorCode::kSchemaViolation,
                path.string() + ": frame ids do not match the file name");
  }
  if (max_keypoints > 0 && ms.pairs.size() > size_t(max_keypoints)) {
    ms.pairs.resize(max_keypoints);
    if (!ms.scores.empty()) ms.scores.resize(max_keypoints);
  }
  return ms;
}

MatchSet VerifyMatches(const MatchSet& ms, const CameraParams& cam_i,
                       const DepthMap& depth_i, const CameraParams& cam_j,
                       const DepthMap& depth_j, double tau,
                       double depth_scale_i, double depth_scale_j) {
  if (!(tau > 0)) {
    throw Error(ErrorCode::kInvalidParameter, "tau_reproj must be positive");
  }
  MatchSet out;
  out.frame_i = ms.frame_i;
  out.frame_j = ms.frame_j;
  const bool has_scores = ms.scores.size() == ms.pairs.size();
  for (size_t p = 0; p < ms.pairs.size(); ++p) {
    const MatchPair& pair = ms.pairs[p];
    if (!ReprojectsWithin(pair.in_i, cam_i, depth_i, depth_scale_i, pair.in_j,
                          cam_j, tau) ||
        !ReprojectsWithin(pair.in_j, cam_j, depth_j, depth_scale_j, pair.in_i,
                          cam_i, tau)) {
      continue;
    }
    out.pairs.push_back(pair);
    if (has_scores) out.scores.push_back(ms.scores[p]);
  }
  return out;
}

std::vector<Track> MergeTracks(const std::vector<MatchSet>& matches,
                               const MergedScene& scene, int min_track_len,
                               TrackMergeStats* stats) {
  std::unordered_map<KeypointKey, int, KeypointKeyHash> index;
  std::vector<TrackObservation> nodes;
  DisjointSet dsu;
  auto node_of = [&](int frame, const Eigen::Vector2d& px) {
    const KeypointKey key{frame, static_cast<int>(std::lround(px.x())),
                          static_cast<int>(std::lround(px.y()))};
    auto [it, inserted] = index.try_emplace(key, 0);
    if (inserted) {
      it->second = dsu.Add();
      nodes.push_back({frame, px});
    }
    return it->second;
  };
  for (const MatchSet& ms : matches) {
    for (const MatchPair& p : ms.pairs) {
      dsu.Union(node_of(ms.frame_i, p.in_i), node_of(ms.frame_j, p.in_j));
    }
  }

  // Components in order of their first keypoint.
  std::unordered_map<int, int> component_of_root;
  std::vector<std::vector<int>> components;
  for (int v = 0; v < static_cast<int>(nodes.size()); ++v) {
    auto [it, inserted] = component_of_root.try_emplace(
        dsu.Find(v), static_cast<int>(components.size()));
    if (inserted) components.emplace_back();
    components[it->second].push_back(v);
  }

  TrackMergeStats local;
  local.components = static_cast<int>(components.size());
  std::vector<Track> tracks;
  for (std::vector<int>& comp : components) {
    std::sort(comp.begin(), comp.end(), [&](int a, int b) {
      return nodes[a].frame_id < nodes[b].frame_id ||
             (nodes[a].frame_id == nodes[b].frame_id && a < b);
    });
    bool ambiguous = false;
    for (size_t i = 1; i < comp.size(); ++i) {
      if (nodes[comp[i]].frame_id == nodes[comp[i - 1]].frame_id) {
        ambiguous = true;
      }
    }
    if (ambiguous) {
      ++local.ambiguous;
      continue;
    }
    Track track;
    Eigen::Vector3d weighted = Eigen::Vector3d::Zero();
    Eigen::Vector3d plain = Eigen::Vector3d::Zero();
    double conf_sum = 0.0;
    for (int v : comp) {
      const TrackObservation& obs = nodes[v];
      const MergedFrame* frame = scene.Find(obs.frame_id);
      if (frame == nullptr) continue;
      const std::optional<double> z = frame->DepthAt(obs.pixel);
      if (!z) continue;
      const Eigen::Vector3d x = Unproject(obs.pixel, *z, frame->camera);
      const double c =
          std::max(0.0f, frame->confidence.SampleNearest(obs.pixel).value_or(0));
      weighted += c * x;
      plain += x;
      conf_sum += c;
      track.observations.push_back(obs);
    }
    const int len = static_cast<int>(track.observations.size());
    if (len < std::max(2, min_track_len)) {
      ++local.too_short;
      continue;
    }
    track.point = conf_sum > 0 ? Eigen::Vector3d(weighted / conf_sum)
                               : Eigen::Vector3d(plain / len);
    track.confidence = conf_sum / len;
    tracks.push_back(std::move(track));
  }
  if (stats != nullptr) *stats = local;
  return tracks;
}

TrackingResult RunTracking(const SimilarityMatrix& m, const MergedScene& scene,
                           Matcher& matcher, const TrackingOptions& options) {
  TrackingResult result;
  result.graph = BuildFrameGraph(m, options.k);
  const size_t n_edges = result.graph.edges.size();
  std::vector<MatchSet> verified(n_edges);
  std::vector<char> failed(n_edges, 0);
  std::vector<size_t> raw(n_edges, 0);
  ParallelFor(n_edges, options.threads, [&](size_t e) {
    const auto [i, j] = result.graph.edges[e];
    const MergedFrame* fi = scene.Find(i);
    const MergedFrame* fj = scene.Find(j);
    if (fi == nullptr || fj == nullptr) {
      failed[e] = 1;
      return;
    }
    MatchSet ms;
    try {
      ms = matcher.Match(i, j, options.max_keypoints);
    } catch (const std::exception& ex) {
      failed[e] = 1;
      spdlog::warn("matching frames {} and {} failed: {}", i, j, ex.what());
      return;
    }
    if (options.max_keypoints > 0 &&
        ms.pairs.size() > size_t(options.max_keypoints)) {
      ms.pairs.resize(options.max_keypoints);
      if (!ms.scores.empty()) ms.scores.resize(options.max_keypoints);
    }
    raw[e] = ms.pairs.size();
    verified[e] = VerifyMatches(ms, fi->camera, fi->depth, fj->camera,
                                fj->depth, options.tau_reproj,
                                fi->depth_scale, fj->depth_scale);
  });
  result.matcher_invocations = 0;
  for (size_t e = 0; e < n_edges; ++e) {
    const auto [i, j] = result.graph.edges[e];
    if (scene.Find(i) != nullptr && scene.Find(j) != nullptr) {
      ++result.matcher_invocations;
    }
    result.failed_edges += failed[e];
    result.raw_matches += raw[e];
    result.verified_matches += verified[e].pairs.size();
  }
  result.tracks =
      MergeTracks(verified, scene, options.min_track_len, &result.merge);
  return result;
}

}  // namespace merg3r
