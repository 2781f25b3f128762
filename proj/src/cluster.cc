#include "merg3r/cluster.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "merg3r/error.h"

namespace merg3r {
namespace fs = std::filesystem;

std::optional<float> FloatGrid::SampleNearest(const Eigen::Vector2d& pixel) const {
  if (!pixel.allFinite()) return std::nullopt;
  const int x = static_cast<int>(std::lround(pixel.x()));
  const int y = static_cast<int>(std::lround(pixel.y()));
  if (!Contains(x, y)) return std::nullopt;
  return at(x, y);
}

int ClusterReconstruction::IndexOf(int frame_id) const {
  for (size_t i = 0; i < frame_ids.size(); ++i) {
    if (frame_ids[i] == frame_id) return static_cast<int>(i);
  }
  return -1;
}

double ClusterReconstruction::MeanConfidence(int index) const {
  const auto& c = confidences.at(index);
  const auto& d = depths.at(index);
  double sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < c.values.size(); ++i) {
    if (d.values[i] > 0) {
      sum += c.values[i];
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / count;
}

void ClusterReconstruction::Validate() const {
  const std::string where = "cluster " + std::to_string(cluster_id);
  if (cameras.size() != frame_ids.size() || depths.size() != frame_ids.size() ||
      confidences.size() != frame_ids.size()) {
    throw Error(ErrorCode::kSchemaViolation, where + ": parallel arrays differ");
  }
  for (size_t i = 0; i < frame_ids.size(); ++i) {
    const std::string fw = where + " frame " + std::to_string(frame_ids[i]);
    for (size_t j = 0; j < i; ++j) {
      if (frame_ids[j] == frame_ids[i]) {
        throw Error(ErrorCode::kSchemaViolation, fw + ": duplicated frame id");
      }
    }
    const CameraParams& cam = cameras[i];
    if (cam.frame_id != frame_ids[i]) {
      throw Error(ErrorCode::kSchemaViolation, fw + ": camera frame id mismatch");
    }
    if (!cam.intrinsics.IsValid() || !cam.pose.IsValid(1e-6)) {
      throw Error(ErrorCode::kSchemaViolation, fw + ": invalid camera");
    }
    const DepthMap& d = depths[i];
    const ConfidenceMap& c = confidences[i];
    if (d.width != cam.intrinsics.width || d.height != cam.intrinsics.height ||
        d.values.size() != size_t(d.width) * d.height) {
      throw Error(ErrorCode::kSchemaViolation,
                  fw + ": depth dimensions do not match intrinsics");
    }
    if (c.width != d.width || c.height != d.height ||
        c.values.size() != d.values.size()) {
      throw Error(ErrorCode::kSchemaViolation,
                  fw + ": confidence dimensions do not match depth");
    }
    for (size_t p = 0; p < d.values.size(); ++p) {
      if (std::isnan(d.values[p]) || std::isnan(c.values[p]) ||
          std::isinf(d.values[p]) || std::isinf(c.values[p])) {
        throw Error(ErrorCode::kDataCorruption,
                    fw + ": non-finite value at pixel " + std::to_string(p));
      }
      if (c.values[p] < 0) {
        throw Error(ErrorCode::kSchemaViolation,
                    fw + ": negative confidence at pixel " + std::to_string(p));
      }
    }
  }
}

void ValidateAgainstPlan(const ClusterReconstruction& cluster,
                         const SceneGraphPlan& plan) {
  if (cluster.cluster_id < 0 ||
      cluster.cluster_id >= static_cast<int>(plan.subsets.size())) {
    throw Error(ErrorCode::kSchemaViolation,
                "cluster " + std::to_string(cluster.cluster_id) +
                    " has no subset in the plan");
  }
  std::vector<int> a = cluster.frame_ids;
  std::vector<int> b = plan.subsets[cluster.cluster_id];
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b) {
    throw Error(ErrorCode::kSchemaViolation,
                "cluster " + std::to_string(cluster.cluster_id) +
                    " frames differ from plan subset");
  }
}

namespace {

template <typename Grid>
Grid LoadGrid(const fs::path& path, int width, int height, int frame_id) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kNotFound, "frame " + std::to_string(frame_id) +
                                          ": missing " + path.string());
  }
  Tensor t = ReadTensor(path);
  if (t.dims.size() != 2 || t.dims[0] != static_cast<uint32_t>(height) ||
      t.dims[1] != static_cast<uint32_t>(width)) {
    throw Error(ErrorCode::kSchemaViolation,
                path.string() + ": dims do not match image size of frame " +
                    std::to_string(frame_id));
  }
  Grid g;
  g.width = width;
  g.height = height;
  g.values = std::move(t.values);
  return g;
}

}  // namespace

ClusterReconstruction LoadCluster(const SceneManifest& manifest,
                                  const fs::path& base_dir, int cluster_id) {
  const ClusterEntry* entry = manifest.FindCluster(cluster_id);
  if (!entry) {
    throw Error(ErrorCode::kNotFound,
                "cluster " + std::to_string(cluster_id) + " not in manifest");
  }
  ClusterReconstruction c;
  c.cluster_id = cluster_id;
  c.frame_ids = entry->frame_ids;
  const fs::path cameras_path = base_dir / entry->cameras_path;
  if (!fs::exists(cameras_path)) {
    throw Error(ErrorCode::kNotFound, "missing " + cameras_path.string());
  }
  const std::vector<CameraParams> cams = ReadPoses(cameras_path);
  for (const FrameTensors& f : entry->frames) {
    const ImageEntry* image = manifest.FindImage(f.frame_id);
    const CameraParams* cam = nullptr;
    for (const auto& k : cams) {
      if (k.frame_id == f.frame_id) cam = &k;
    }
    if (!cam) {
      throw Error(ErrorCode::kSchemaViolation,
                  cameras_path.string() + ": no camera for frame " +
                      std::to_string(f.frame_id));
    }
    if (cam->intrinsics.width != image->width ||
        cam->intrinsics.height != image->height) {
      throw Error(ErrorCode::kSchemaViolation,
                  "frame " + std::to_string(f.frame_id) +
                      ": camera size differs from manifest image size");
    }
    c.cameras.push_back(*cam);
    c.depths.push_back(LoadGrid<DepthMap>(base_dir / f.depth_path, image->width,
                                          image->height, f.frame_id));
    c.confidences.push_back(LoadGrid<ConfidenceMap>(
        base_dir / f.confidence_path, image->width, image->height, f.frame_id));
  }
  c.Validate();
  return c;
}

ClusterReconstruction LoadCluster(const fs::path& manifest_path, int cluster_id) {
  if (!fs::exists(manifest_path)) {
    throw Error(ErrorCode::kNotFound, "missing manifest " + manifest_path.string());
  }
  return LoadCluster(ReadManifest(manifest_path), manifest_path.parent_path(),
                     cluster_id);
}

Tensor GridToTensor(const FloatGrid& grid) {
  Tensor t;
  t.dims = {static_cast<uint32_t>(grid.height), static_cast<uint32_t>(grid.width)};
  t.values = grid.values;
  return t;
}

ClusterEntry WriteCluster(const fs::path& scene_dir,
                          const ClusterReconstruction& cluster) {
  char dir_name[32];
  std::snprintf(dir_name, sizeof(dir_name), "clusters/c%03d", cluster.cluster_id);
  const fs::path rel_dir(dir_name);
  ClusterEntry entry;
  entry.cluster_id = cluster.cluster_id;
  entry.frame_ids = cluster.frame_ids;
  entry.cameras_path = (rel_dir / "cameras.json").generic_string();
  WritePoses(scene_dir / entry.cameras_path, cluster.cameras);
  for (size_t i = 0; i < cluster.size(); ++i) {
    char name[64];
    FrameTensors f;
    f.frame_id = cluster.frame_ids[i];
    std::snprintf(name, sizeof(name), "depth_%06d.mrgt", f.frame_id);
    f.depth_path = (rel_dir / name).generic_string();
    std::snprintf(name, sizeof(name), "conf_%06d.mrgt", f.frame_id);
    f.confidence_path = (rel_dir / name).generic_string();
    WriteTensor(scene_dir / f.depth_path, GridToTensor(cluster.depths[i]));
    WriteTensor(scene_dir / f.confidence_path, GridToTensor(cluster.confidences[i]));
    entry.frames.push_back(f);
  }
  return entry;
}

PointCloud ClusterPointCloud(const ClusterReconstruction& cluster,
                             double conf_floor) {
  PointCloud cloud;
  for (size_t i = 0; i < cluster.size(); ++i) {
    const DepthMap& d = cluster.depths[i];
    const ConfidenceMap& c = cluster.confidences[i];
    for (int y = 0; y < d.height; ++y) {
      for (int x = 0; x < d.width; ++x) {
        const float depth = d.at(x, y);
        const float conf = c.at(x, y);
        if (depth <= 0 || conf < conf_floor) continue;
        cloud.points.push_back(
            Unproject(Eigen::Vector2d(x, y), depth, cluster.cameras[i]));
        cloud.confidences.push_back(conf);
      }
    }
  }
  return cloud;
}

}  // namespace merg3r
