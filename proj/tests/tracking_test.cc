#include "merg3r/tracking.h"

#include <atomic>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "merg3r/synthetic.h"
#include "test_util.h"

namespace merg3r {
namespace {

using testing::CodeOf;

SimilarityMatrix RandomSimilarity(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0, 1);
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) m(i, j) = m(j, i) = u(rng);
  }
  return SimilarityMatrix(m);
}

void CheckGraph(const FrameGraph& g, int n, int k) {
  std::set<std::pair<int, int>> seen;
  std::vector<int> degree(n, 0);
  for (const auto& [i, j] : g.edges) {
    ASSERT_NE(i, j);
    ASSERT_TRUE(seen.insert(std::minmax(i, j)).second) << i << "," << j;
    ++degree[i];
    ++degree[j];
  }
  EXPECT_LE(int(g.edges.size()), k * n);
  EXPECT_GE(int(g.edges.size()), (k * n + 1) / 2);
  for (int d : degree) EXPECT_GE(d, 1);
}

TEST(BuildFrameGraph, TwoFrames) {
  Eigen::MatrixXd m(2, 2);
  m << 1, 0.3, 0.3, 1;
  const FrameGraph g = BuildFrameGraph(SimilarityMatrix(m), 1);
  ASSERT_EQ(g.edges.size(), 1u);
  EXPECT_EQ(g.edges[0], std::make_pair(0, 1));
}

TEST(BuildFrameGraph, TenFramesKThree) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const FrameGraph g = BuildFrameGraph(RandomSimilarity(rng, 10), 3);
    EXPECT_GE(g.edges.size(), 15u);
    EXPECT_LE(g.edges.size(), 30u);
    CheckGraph(g, 10, 3);
  }
}

TEST(BuildFrameGraph, DuplicateIsReplacedByNextNeighbour) {
  // 0 and 1 are mutual nearest neighbours; 1 then takes its second choice.
  Eigen::MatrixXd m(3, 3);
  m << 1, 0.9, 0.2,
       0.9, 1, 0.5,
       0.2, 0.5, 1;
  const FrameGraph g = BuildFrameGraph(SimilarityMatrix(m), 1);
  ASSERT_EQ(g.edges.size(), 3u);
  EXPECT_EQ(g.edges[0], std::make_pair(0, 1));
  EXPECT_EQ(g.edges[1], std::make_pair(1, 2));
  EXPECT_EQ(g.edges[2], std::make_pair(2, 0));
}

TEST(BuildFrameGraph, ProposesMostSimilar) {
  std::mt19937_64 rng(2);
  const SimilarityMatrix m = RandomSimilarity(rng, 30);
  const FrameGraph g = BuildFrameGraph(m, 4);
  CheckGraph(g, 30, 4);
  // Frame 0 proposes first, so it gets exactly its top 4.
  std::vector<int> order;
  for (int j = 1; j < 30; ++j) order.push_back(j);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return m(0, a) > m(0, b); });
  for (int e = 0; e < 4; ++e) {
    EXPECT_EQ(g.edges[e], std::make_pair(0, order[e]));
  }
}

TEST(BuildFrameGraph, LinearGrowth) {
  std::mt19937_64 rng(3);
  std::vector<size_t> counts;
  for (int n : {100, 200, 400}) {
    const FrameGraph g = BuildFrameGraph(RandomSimilarity(rng, n), 5);
    CheckGraph(g, n, 5);
    counts.push_back(g.edges.size());
  }
  for (size_t i = 1; i < counts.size(); ++i) {
    const double ratio = double(counts[i]) / counts[i - 1];
    EXPECT_GT(ratio, 1.9);
    EXPECT_LT(ratio, 2.1);
  }
}

TEST(BuildFrameGraph, RejectsBadK) {
  std::mt19937_64 rng(4);
  const SimilarityMatrix m = RandomSimilarity(rng, 5);
  EXPECT_EQ(CodeOf([&] { BuildFrameGraph(m, 5); }), ErrorCode::kInvalidParameter);
  EXPECT_EQ(CodeOf([&] { BuildFrameGraph(m, 0); }), ErrorCode::kInvalidParameter);
}

// Two 640x480 cameras facing the plane z = 1 from z = -5, offset along x.
struct PlanePair {
  CameraParams cam_i, cam_j;
  DepthMap depth_i{640, 480, 6.f}, depth_j{640, 480, 6.f};

  PlanePair() {
    const auto k = testing::TestIntrinsics(640, 480);
    cam_i.intrinsics = cam_j.intrinsics = k;
    cam_i.frame_id = 0;
    cam_j.frame_id = 1;
    cam_i.pose.translation = {0, 0, 5};
    cam_j.pose.translation = {-0.5, 0, 5};
  }

  // Pixel in j of the plane point behind pixel `px` of i.
  Eigen::Vector2d Transfer(const Eigen::Vector2d& px) const {
    return *Project(Unproject(px, 6.0, cam_i), cam_j);
  }

  MatchSet TrueMatches(std::mt19937_64& rng, int n) const {
    std::uniform_real_distribution<double> ux(60, 639), uy(0, 479);
    MatchSet ms;
    ms.frame_i = 0;
    ms.frame_j = 1;
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d px(ux(rng), uy(rng));
      ms.pairs.push_back({px, Transfer(px)});
    }
    return ms;
  }
};

TEST(VerifyMatches, PerfectMatchesAllKept) {
  std::mt19937_64 rng(5);
  const PlanePair p;
  const MatchSet ms = p.TrueMatches(rng, 200);
  const MatchSet v = VerifyMatches(ms, p.cam_i, p.depth_i, p.cam_j, p.depth_j, 8);
  EXPECT_EQ(v.pairs.size(), 200u);
}

TEST(VerifyMatches, OffsetMatchesAllRejected) {
  std::mt19937_64 rng(6);
  const PlanePair p;
  MatchSet ms = p.TrueMatches(rng, 200);
  for (auto& pair : ms.pairs) pair.in_j.y() += 20;
  EXPECT_TRUE(VerifyMatches(ms, p.cam_i, p.depth_i, p.cam_j, p.depth_j, 8).pairs.empty());
}

TEST(VerifyMatches, RandomPixelsRejected) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ux(0, 639), uy(0, 479);
  const PlanePair p;
  for (int trial = 0; trial < 20; ++trial) {
    MatchSet ms = p.TrueMatches(rng, 80);
    for (int i = 0; i < 20; ++i) {
      ms.pairs.push_back({{ux(rng), uy(rng)}, {ux(rng), uy(rng)}});
    }
    const MatchSet v = VerifyMatches(ms, p.cam_i, p.depth_i, p.cam_j, p.depth_j, 8);
    int true_kept = 0;
    for (const auto& pair : v.pairs) {
      for (int i = 0; i < 80; ++i) {
        if (pair.in_i == ms.pairs[i].in_i && pair.in_j == ms.pairs[i].in_j) ++true_kept;
      }
    }
    EXPECT_EQ(true_kept, 80);
    EXPECT_GE(100 - int(v.pairs.size()), 18);
  }
}

TEST(VerifyMatches, RequiresDepthBothWaysAndKeepsScores) {
  std::mt19937_64 rng(8);
  PlanePair p;
  MatchSet ms = p.TrueMatches(rng, 3);
  ms.scores = {0.1, 0.2, 0.3};
  const auto& px = ms.pairs[1].in_j;
  p.depth_j.at(int(std::lround(px.x())), int(std::lround(px.y()))) = 0;
  const MatchSet v = VerifyMatches(ms, p.cam_i, p.depth_i, p.cam_j, p.depth_j, 8);
  ASSERT_EQ(v.pairs.size(), 2u);
  EXPECT_EQ(v.scores, (std::vector<double>{0.1, 0.3}));
  EXPECT_EQ(CodeOf([&] { VerifyMatches(ms, p.cam_i, p.depth_i, p.cam_j, p.depth_j, 0); }),
            ErrorCode::kInvalidParameter);
}

TEST(VerifyMatches, InvariantToPairOrder) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ux(0, 639), uy(0, 479), off(-12, 12);
  const PlanePair p;
  MatchSet ms = p.TrueMatches(rng, 300);
  for (auto& pair : ms.pairs) pair.in_j += Eigen::Vector2d(off(rng), off(rng));
  MatchSet shuffled = ms;
  std::shuffle(shuffled.pairs.begin(), shuffled.pairs.end(), rng);
  auto as_set = [](const MatchSet& m) {
    std::set<std::array<double, 4>> s;
    for (const auto& q : m.pairs) s.insert({q.in_i.x(), q.in_i.y(), q.in_j.x(), q.in_j.y()});
    return s;
  };
  const auto a = as_set(VerifyMatches(ms, p.cam_i, p.depth_i, p.cam_j, p.depth_j, 8));
  const auto b = as_set(VerifyMatches(shuffled, p.cam_i, p.depth_i, p.cam_j, p.depth_j, 8));
  EXPECT_EQ(a, b);
  EXPECT_GT(a.size(), 0u);
  EXPECT_LT(a.size(), 300u);
}

// Frames with identity rotation; frame f's camera sits at `centers[f]` and
// sees a constant depth and confidence.
MergedScene FlatScene(const std::vector<Eigen::Vector3d>& centers,
                      const std::vector<float>& conf, float depth = 5.f,
                      int w = 64, int h = 48) {
  MergedScene s;
  for (size_t f = 0; f < centers.size(); ++f) {
    MergedFrame mf;
    mf.camera.frame_id = int(f);
    mf.camera.intrinsics = {50, 50, 32, 24, w, h};
    mf.camera.pose.translation = -centers[f];
    mf.depth = DepthMap(w, h, depth);
    mf.confidence = ConfidenceMap(w, h, conf[f]);
    mf.cluster_id = 0;
    s.frames.push_back(mf);
  }
  return s;
}

MatchSet Pairs(int fi, int fj, std::vector<std::array<double, 4>> px) {
  MatchSet ms;
  ms.frame_i = fi;
  ms.frame_j = fj;
  for (const auto& p : px) ms.pairs.push_back({{p[0], p[1]}, {p[2], p[3]}});
  return ms;
}

TEST(MergeTracks, Transitivity) {
  const MergedScene s = FlatScene({{0, 0, -5}, {0.1, 0, -5}, {0.2, 0, -5}}, {1, 1, 1});
  const auto tracks = MergeTracks(
      {Pairs(0, 1, {{10, 10, 11, 10}}), Pairs(1, 2, {{11, 10, 12, 10}})}, s, 2);
  ASSERT_EQ(tracks.size(), 1u);
  ASSERT_EQ(tracks[0].observations.size(), 3u);
  for (int f = 0; f < 3; ++f) EXPECT_EQ(tracks[0].observations[f].frame_id, f);
}

TEST(MergeTracks, EqualConfidenceAverages) {
  const MergedScene s = FlatScene({{0, 0, -5}, {0.5, 0, -5}}, {0.7f, 0.7f});
  const auto tracks = MergeTracks({Pairs(0, 1, {{20, 30, 25, 31}})}, s, 2);
  ASSERT_EQ(tracks.size(), 1u);
  const Eigen::Vector3d p = Unproject({20, 30}, 5, s.frames[0].camera);
  const Eigen::Vector3d q = Unproject({25, 31}, 5, s.frames[1].camera);
  EXPECT_LT((tracks[0].point - (p + q) / 2).norm(), 1e-12);
  EXPECT_FLOAT_EQ(tracks[0].confidence, 0.7f);
}

TEST(MergeTracks, HandWeightedFusion) {
  // Both frames see their world point at the principal point, depth 5.
  const MergedScene s = FlatScene({{0, 0, -5}, {1, 0, -5}}, {3, 1});
  const auto tracks = MergeTracks({Pairs(0, 1, {{32, 24, 32, 24}})}, s, 2);
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_LT((tracks[0].point - Eigen::Vector3d(0.25, 0, 0)).norm(), 1e-12);
  EXPECT_DOUBLE_EQ(tracks[0].confidence, 2.0);
}

TEST(MergeTracks, AmbiguousAndShortComponentsDropped) {
  const MergedScene s = FlatScene({{0, 0, -5}, {0.1, 0, -5}, {0.2, 0, -5}}, {1, 1, 1});
  TrackMergeStats stats;
  // Frame 0 pixels (5,5) and (40,5) both chain to (7,5) in frame 1.
  const auto tracks = MergeTracks(
      {Pairs(0, 1, {{5, 5, 7, 5}, {40, 5, 7, 5}, {20, 20, 21, 20}}),
       Pairs(1, 2, {{21, 20, 22, 20}}), Pairs(0, 2, {{30, 30, 31, 30}})},
      s, 3, &stats);
  EXPECT_EQ(stats.components, 3);
  EXPECT_EQ(stats.ambiguous, 1);
  EXPECT_EQ(stats.too_short, 1);
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_EQ(tracks[0].observations.size(), 3u);
}

TEST(MergeTracks, RoundsKeypointsButKeepsSubpixel) {
  const MergedScene s = FlatScene({{0, 0, -5}, {0.1, 0, -5}, {0.2, 0, -5}}, {1, 1, 1});
  const auto tracks = MergeTracks(
      {Pairs(0, 1, {{10.2, 5.4, 12.3, 5.1}}), Pairs(0, 2, {{9.8, 4.6, 13.7, 4.9}})}, s, 2);
  ASSERT_EQ(tracks.size(), 1u);
  ASSERT_EQ(tracks[0].observations.size(), 3u);
  EXPECT_EQ(tracks[0].observations[0].pixel, Eigen::Vector2d(10.2, 5.4));
  EXPECT_EQ(tracks[0].observations[2].pixel, Eigen::Vector2d(13.7, 4.9));
}

TEST(MergeTracks, FusionWithinMemberBounds) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<float> uc(0.1f, 3.f);
  std::uniform_real_distribution<double> ux(0, 63), uy(0, 47);
  std::vector<Eigen::Vector3d> centers;
  std::vector<float> conf;
  for (int f = 0; f < 6; ++f) {
    centers.push_back(testing::RandomVector(rng, 0.5) + Eigen::Vector3d(0, 0, -5));
    conf.push_back(uc(rng));
  }
  const MergedScene s = FlatScene(centers, conf);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<MatchSet> matches;
    for (int f = 1; f < 6; ++f) {
      matches.push_back(Pairs(0, f, {{ux(rng), uy(rng), ux(rng), uy(rng)}}));
      matches.back().pairs[0].in_i = matches[0].pairs[0].in_i;
    }
    const auto tracks = MergeTracks(matches, s, 2);
    ASSERT_EQ(tracks.size(), 1u);
    const Track& t = tracks[0];
    double lo = 1e9, hi = -1e9;
    Eigen::Vector3d bmin = Eigen::Vector3d::Constant(1e9), bmax = -bmin;
    for (const auto& o : t.observations) {
      lo = std::min<double>(lo, conf[o.frame_id]);
      hi = std::max<double>(hi, conf[o.frame_id]);
      const Eigen::Vector3d x = Unproject(o.pixel, 5, s.frames[o.frame_id].camera);
      bmin = bmin.cwiseMin(x);
      bmax = bmax.cwiseMax(x);
    }
    EXPECT_GE(t.confidence, lo - 1e-12);
    EXPECT_LE(t.confidence, hi + 1e-12);
    EXPECT_TRUE((t.point.array() >= bmin.array() - 1e-12).all());
    EXPECT_TRUE((t.point.array() <= bmax.array() + 1e-12).all());
  }
}

// Reference partition: BFS over the keypoint graph, then the same
// ambiguity and length rules.
std::set<std::set<std::pair<int, std::pair<int, int>>>> BruteForceTracks(
    const std::vector<MatchSet>& matches, int min_len) {
  using Key = std::pair<int, std::pair<int, int>>;
  auto key = [](int f, const Eigen::Vector2d& p) {
    return Key{f, {int(std::lround(p.x())), int(std::lround(p.y()))}};
  };
  std::map<Key, std::vector<Key>> adj;
  for (const auto& ms : matches) {
    for (const auto& p : ms.pairs) {
      const Key a = key(ms.frame_i, p.in_i), b = key(ms.frame_j, p.in_j);
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
  }
  std::set<Key> visited;
  std::set<std::set<Key>> out;
  for (const auto& [start, unused] : adj) {
    if (visited.count(start)) continue;
    std::set<Key> comp;
    std::vector<Key> stack = {start};
    visited.insert(start);
    while (!stack.empty()) {
      const Key k = stack.back();
      stack.pop_back();
      comp.insert(k);
      for (const Key& nb : adj[k]) {
        if (visited.insert(nb).second) stack.push_back(nb);
      }
    }
    std::set<int> frames;
    for (const Key& k : comp) frames.insert(k.first);
    if (frames.size() != comp.size()) continue;
    if (int(comp.size()) < min_len) continue;
    out.insert(comp);
  }
  return out;
}

TEST(MergeTracks, MatchesBruteForceComponents) {
  std::mt19937_64 rng(11);
  const int n_frames = 12;
  std::vector<Eigen::Vector3d> centers;
  for (int f = 0; f < n_frames; ++f) centers.push_back({0.1 * f, 0, -5});
  const MergedScene s = FlatScene(centers, std::vector<float>(n_frames, 1.f));
  for (int trial = 0; trial < 50; ++trial) {
    // Up to ~10k distinct keypoints on a coarse grid so collisions happen.
    const int grid = 4 + trial % 5;
    std::uniform_int_distribution<int> uf(0, n_frames - 1);
    std::uniform_int_distribution<int> ux(0, 63 / grid), uy(0, 47 / grid);
    std::vector<MatchSet> matches;
    const int n_pairs = 200 + 100 * trial;
    for (int e = 0; e < n_pairs / 50; ++e) {
      int fi = uf(rng), fj = uf(rng);
      if (fi == fj) fj = (fi + 1) % n_frames;
      MatchSet ms;
      ms.frame_i = fi;
      ms.frame_j = fj;
      for (int p = 0; p < 50; ++p) {
        ms.pairs.push_back({{double(ux(rng) * grid), double(uy(rng) * grid)},
                            {double(ux(rng) * grid), double(uy(rng) * grid)}});
      }
      matches.push_back(ms);
    }
    const int min_len = 2 + trial % 2;
    const auto expected = BruteForceTracks(matches, min_len);
    std::set<std::set<std::pair<int, std::pair<int, int>>>> got;
    for (const Track& t : MergeTracks(matches, s, min_len)) {
      std::set<std::pair<int, std::pair<int, int>>> comp;
      for (const auto& o : t.observations) {
        comp.insert({o.frame_id, {int(o.pixel.x()), int(o.pixel.y())}});
      }
      got.insert(comp);
    }
    ASSERT_EQ(got, expected) << trial;
  }
}

TEST(MergeTracks, InvariantToMatchOrder) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> ux(0, 15), uy(0, 11);
  std::vector<Eigen::Vector3d> centers;
  for (int f = 0; f < 5; ++f) centers.push_back({0.1 * f, 0, -5});
  const MergedScene s = FlatScene(centers, {1, 2, 3, 4, 5});
  std::vector<MatchSet> matches;
  for (int fi = 0; fi < 5; ++fi) {
    for (int fj = fi + 1; fj < 5; ++fj) {
      MatchSet ms;
      ms.frame_i = fi;
      ms.frame_j = fj;
      for (int p = 0; p < 40; ++p) {
        ms.pairs.push_back({{4.0 * ux(rng), 4.0 * uy(rng)}, {4.0 * ux(rng), 4.0 * uy(rng)}});
      }
      matches.push_back(ms);
    }
  }
  auto summarize = [](const std::vector<Track>& tracks) {
    std::map<std::set<std::pair<int, int>>, std::pair<double, double>> out;
    for (const Track& t : tracks) {
      std::set<std::pair<int, int>> key;
      for (const auto& o : t.observations) key.insert({o.frame_id, int(o.pixel.x() * 100 + o.pixel.y())});
      out[key] = {t.confidence, t.point.x()};
    }
    return out;
  };
  const auto base = summarize(MergeTracks(matches, s, 2));
  std::vector<MatchSet> shuffled = matches;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  for (auto& ms : shuffled) std::shuffle(ms.pairs.begin(), ms.pairs.end(), rng);
  const auto other = summarize(MergeTracks(shuffled, s, 2));
  ASSERT_EQ(base.size(), other.size());
  for (const auto& [key, value] : base) {
    ASSERT_TRUE(other.count(key));
    EXPECT_NEAR(other.at(key).first, value.first, 1e-12);
    EXPECT_NEAR(other.at(key).second, value.second, 1e-9);
  }
}

class CountingMatcher : public Matcher {
 public:
  explicit CountingMatcher(int fail_every = 0) : fail_every_(fail_every) {}
  MatchSet Match(int i, int j, int) override {
    const int n = ++calls_;
    if (fail_every_ > 0 && n % fail_every_ == 0) throw std::runtime_error("boom");
    MatchSet ms;
    ms.frame_i = i;
    ms.frame_j = j;
    return ms;
  }
  int calls() const { return calls_; }

 private:
  int fail_every_;
  std::atomic<int> calls_{0};
};

TEST(RunTracking, InvocationsBoundedByKN) {
  std::mt19937_64 rng(13);
  for (int n : {50, 100, 500}) {
    std::vector<Eigen::Vector3d> centers(n, Eigen::Vector3d(0, 0, -5));
    const MergedScene s = FlatScene(centers, std::vector<float>(n, 1.f), 5.f, 4, 3);
    CountingMatcher matcher;
    TrackingOptions opt;
    const TrackingResult r = RunTracking(RandomSimilarity(rng, n), s, matcher, opt);
    EXPECT_LE(matcher.calls(), opt.k * n);
    EXPECT_EQ(r.matcher_invocations, matcher.calls());
    EXPECT_EQ(r.failed_edges, 0);
    EXPECT_EQ(opt.max_keypoints, 4096);
  }
}

TEST(RunTracking, MatcherFailureSkipsEdge) {
  std::mt19937_64 rng(14);
  const int n = 20;
  std::vector<Eigen::Vector3d> centers(n, Eigen::Vector3d(0, 0, -5));
  const MergedScene s = FlatScene(centers, std::vector<float>(n, 1.f), 5.f, 4, 3);
  CountingMatcher matcher(7);
  TrackingOptions opt;
  opt.k = 3;
  const TrackingResult r = RunTracking(RandomSimilarity(rng, n), s, matcher, opt);
  EXPECT_EQ(r.failed_edges, matcher.calls() / 7);
  EXPECT_GT(r.failed_edges, 0);
}

TEST(RunTracking, SyntheticFusedPointsNearLandmarks) {
  SceneSpec spec;
  spec.seed = 5;
  spec.n_cameras = 50;
  spec.n_landmarks = 3000;
  const SyntheticScene scene = GenerateScene(spec);
  // Pixel noise and outliers only, so fused error comes from the keypoints.
  PerturbationSpec perturb = PerturbationSpec::NoiseFree();
  perturb.match_pixel_noise_sigma = 0.5;
  perturb.outlier_match_fraction = 0.1;
  std::vector<int> frames(spec.n_cameras);
  std::iota(frames.begin(), frames.end(), 0);
  const RenderedCluster rc = RenderCluster(scene, 0, frames, perturb);
  const MergedScene merged = MergeClusters({rc.cluster}, {rc.warp.Inverse()}, false);

  SyntheticMatcher matcher(scene, perturb);
  TrackingOptions opt;
  const TrackingResult r =
      RunTracking(SyntheticSimilarity(scene), merged, matcher, opt);
  EXPECT_LE(r.matcher_invocations, 5 * spec.n_cameras);
  ASSERT_GT(r.tracks.size(), 100u);

  // Landmark behind every keypoint, from the matcher's own bookkeeping.
  std::map<std::pair<int, std::pair<long, long>>, int> owner;
  for (const auto& [i, j] : r.graph.edges) {
    std::vector<int> ids;
    const MatchSet ms = matcher.MatchWithLandmarks(i, j, opt.max_keypoints, &ids);
    for (size_t p = 0; p < ms.pairs.size(); ++p) {
      if (ids[p] < 0) continue;
      owner[{i, {std::lround(ms.pairs[p].in_i.x()), std::lround(ms.pairs[p].in_i.y())}}] = ids[p];
    }
  }
  const double sigma = perturb.match_pixel_noise_sigma;
  int good = 0, evaluated = 0;
  for (const Track& t : r.tracks) {
    std::map<int, int> votes;
    double bound = 0;
    for (const auto& o : t.observations) {
      auto it = owner.find({o.frame_id, {std::lround(o.pixel.x()), std::lround(o.pixel.y())}});
      if (it != owner.end()) ++votes[it->second];
      const CameraParams& cam = merged.Find(o.frame_id)->camera;
      const double z = *merged.Find(o.frame_id)->DepthAt(o.pixel);
      // RMS lateral displacement of a keypoint with isotropic pixel noise.
      bound = std::max(bound, std::sqrt(2.0) * sigma * z / cam.intrinsics.fx);
    }
    if (votes.empty()) continue;
    const int landmark = std::max_element(votes.begin(), votes.end(),
                                          [](auto& a, auto& b) { return a.second < b.second; })
                             ->first;
    ++evaluated;
    good += (t.point - scene.landmarks[landmark]).norm() <= 3 * bound;
  }
  ASSERT_GT(evaluated, 100);
  EXPECT_GE(double(good) / evaluated, 0.95) << good << " / " << evaluated;
}

}  // namespace
}  // namespace merg3r
