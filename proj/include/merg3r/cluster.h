#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "merg3r/geometry.h"
#include "merg3r/io.h"
#include "merg3r/ordering.h"

namespace merg3r {

// Row-major single-channel image.
struct FloatGrid {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  FloatGrid() = default;
  FloatGrid(int w, int h, float fill = 0.f)
      : width(w), height(h), values(size_t(w) * h, fill) {}

  float& at(int x, int y) { return values[size_t(y) * width + x]; }
  float at(int x, int y) const { return values[size_t(y) * width + x]; }
  bool Contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  // Value at the pixel whose center is nearest to `pixel`.
  std::optional<float> SampleNearest(const Eigen::Vector2d& pixel) const;
};

// Values <= 0 mark pixels without depth.
struct DepthMap : FloatGrid {
  using FloatGrid::FloatGrid;
};

// Raw, uncalibrated nonnegative scores.
struct ConfidenceMap : FloatGrid {
  using FloatGrid::FloatGrid;
};

// One subset's reconstruction as produced by a geometric foundation model.
struct ClusterReconstruction {
  int cluster_id = 0;
  std::vector<int> frame_ids;
  std::vector<CameraParams> cameras;
  std::vector<DepthMap> depths;
  std::vector<ConfidenceMap> confidences;

  size_t size() const { return frame_ids.size(); }
  // Index into the parallel arrays, or -1.
  int IndexOf(int frame_id) const;
  // Throws kSchemaViolation / kDataCorruption on the first violated invariant.
  void Validate() const;
  double MeanConfidence(int index) const;
};

// Checks that the cluster's frames are exactly subset `cluster_id` of `plan`.
void ValidateAgainstPlan(const ClusterReconstruction& cluster,
                         const SceneGraphPlan& plan);

ClusterReconstruction LoadCluster(const std::filesystem::path& manifest_path,
                                  int cluster_id);
ClusterReconstruction LoadCluster(const SceneManifest& manifest,
                                  const std::filesystem::path& base_dir,
                                  int cluster_id);

// Writes the cluster's cameras and tensors under `scene_dir` and returns the
// manifest entry describing them.
ClusterEntry WriteCluster(const std::filesystem::path& scene_dir,
                          const ClusterReconstruction& cluster);

Tensor GridToTensor(const FloatGrid& grid);

// Unprojects every pixel with valid depth and confidence >= conf_floor.
PointCloud ClusterPointCloud(const ClusterReconstruction& cluster,
                             double conf_floor);

}  // namespace merg3r
