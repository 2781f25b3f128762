#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "merg3r/alignment.h"
#include "merg3r/cluster.h"
#include "merg3r/geometry.h"
#include "merg3r/ordering.h"
#include "merg3r/track.h"

namespace merg3r {

// Undirected frame pairs to be matched, each stored once with the proposing
// frame first.
struct FrameGraph {
  std::vector<std::pair<int, int>> edges;
};

// Every frame, in index order, proposes its k most similar frames. A pair
// that already exists is skipped in favour of the next nearest neighbour.
// Throws kInvalidParameter unless 1 <= k < n.
FrameGraph BuildFrameGraph(const SimilarityMatrix& m, int k);

// Feature matcher plug-in. Match may be called concurrently from several
// threads and signals failure by throwing.
class Matcher {
 public:
  virtual ~Matcher() = default;
  virtual MatchSet Match(int frame_i, int frame_j, int max_keypoints) = 0;
};

// Serves precomputed matches stored as <dir>/<i>_<j>.json.
class FileMatcher : public Matcher {
 public:
  explicit FileMatcher(std::filesystem::path dir) : dir_(std::move(dir)) {}
  MatchSet Match(int frame_i, int frame_j, int max_keypoints) override;

 private:
  std::filesystem::path dir_;
};

// Keeps the pairs whose pixels both have valid depth and whose reprojection
// i -> j and j -> i lands within tau pixels of the matched pixel.
// depth_scale_* converts stored depth values into the cameras' units.
MatchSet VerifyMatches(const MatchSet& ms, const CameraParams& cam_i,
                       const DepthMap& depth_i, const CameraParams& cam_j,
                       const DepthMap& depth_j, double tau,
                       double depth_scale_i = 1.0, double depth_scale_j = 1.0);

struct TrackMergeStats {
  int components = 0;
  int ambiguous = 0;  // Components seeing one frame at two pixels.
  int too_short = 0;
};

// Unions matched keypoints, identified by (frame, nearest integer pixel),
// and fuses each valid component into a track in the merged frame.
std::vector<Track> MergeTracks(const std::vector<MatchSet>& matches,
                               const MergedScene& scene, int min_track_len,
                               TrackMergeStats* stats = nullptr);

struct TrackingOptions {
  int k = 5;
  double tau_reproj = 8.0;
  int max_keypoints = 4096;
  int min_track_len = 2;
  int threads = 1;
};

struct TrackingResult {
  std::vector<Track> tracks;
  FrameGraph graph;
  int matcher_invocations = 0;
  int failed_edges = 0;
  size_t raw_matches = 0;
  size_t verified_matches = 0;
  TrackMergeStats merge;
};

TrackingResult RunTracking(const SimilarityMatrix& m, const MergedScene& scene,
                           Matcher& matcher, const TrackingOptions& options);

}  // namespace merg3r
