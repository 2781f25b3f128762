#pragma once

#include <vector>

#include <Eigen/Core>

namespace merg3r {

struct TrackObservation {
  int frame_id = 0;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

// A multi-view point track: at most one observation per frame, fused 3D
// point in the global frame and its aggregated confidence.
struct Track {
  std::vector<TrackObservation> observations;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  double confidence = 0.0;
};

}  // namespace merg3r

namespace merg3r {

struct MatchPair {
  Eigen::Vector2d in_i = Eigen::Vector2d::Zero();
  Eigen::Vector2d in_j = Eigen::Vector2d::Zero();
};

// Pixel correspondences between two frames as emitted by a feature matcher.
struct MatchSet {
  int frame_i = 0;
  int frame_j = 0;
  std::vector<MatchPair> pairs;
  std::vector<double> scores;  // Optional, parallel to pairs when present.
};

}  // namespace merg3r
