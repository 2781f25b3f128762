#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "merg3r/geometry.h"
#include "merg3r/ordering.h"
#include "merg3r/track.h"

namespace merg3r {

inline constexpr int kFormatVersion = 1;
inline constexpr char kPoseConvention[] = "camera_from_world";

std::vector<uint8_t> ReadFileBytes(const std::filesystem::path& path);
void WriteFileBytes(const std::filesystem::path& path,
                    std::span<const uint8_t> bytes);
std::string ReadText(const std::filesystem::path& path);
void WriteText(const std::filesystem::path& path, const std::string& text);

// --- Binary tensors -------------------------------------------------------
//
// Layout (little-endian): "MRGT" | u16 version | u8 dtype (1 = f32) |
// u8 rank | u32 dims[rank] | row-major payload.

inline constexpr uint16_t kTensorVersion = 1;
inline constexpr uint8_t kDtypeFloat32 = 1;

struct Tensor {
  std::vector<uint32_t> dims;
  std::vector<float> values;

  size_t NumElements() const;
};

std::vector<uint8_t> EncodeTensor(const Tensor& tensor);
Tensor DecodeTensor(std::span<const uint8_t> bytes,
                    const std::string& source = "tensor");
void WriteTensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor ReadTensor(const std::filesystem::path& path);

void WriteSimilarity(const std::filesystem::path& path,
                     const SimilarityMatrix& m);
SimilarityMatrix ReadSimilarity(const std::filesystem::path& path);

// --- Poses ----------------------------------------------------------------

struct PoseRecord {
  int frame_id = 0;
  Eigen::Vector4d quaternion{1, 0, 0, 0};  // wxyz, camera-from-world
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;

  static PoseRecord FromCamera(const CameraParams& camera);
  CameraParams ToCamera() const;
};

std::string EncodePoses(const std::vector<PoseRecord>& poses);
std::vector<PoseRecord> DecodePoses(const std::string& text,
                                    const std::string& source = "poses");
void WritePoses(const std::filesystem::path& path,
                const std::vector<CameraParams>& cameras);
std::vector<CameraParams> ReadPoses(const std::filesystem::path& path);

// --- Transforms -----------------------------------------------------------

struct TransformRecord {
  int cluster_id = 0;
  double scale = 1;
  Eigen::Vector4d quaternion{1, 0, 0, 0};
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static TransformRecord FromSim3(int cluster_id, const Sim3Transform& t);
  Sim3Transform ToSim3() const;
};

std::string EncodeTransforms(const std::vector<TransformRecord>& transforms);
std::vector<TransformRecord> DecodeTransforms(
    const std::string& text, const std::string& source = "transforms");
void WriteTransforms(const std::filesystem::path& path,
                     const std::vector<Sim3Transform>& transforms);
std::vector<Sim3Transform> ReadTransforms(const std::filesystem::path& path);

// --- Tracks ---------------------------------------------------------------
//
// Layout (little-endian): "MRTK" | u16 version | u64 count | per track:
// f64 point[3] | f64 confidence | u32 n_obs | n_obs x (u32 frame, f64 u, f64 v)

inline constexpr uint16_t kTracksVersion = 1;

std::vector<uint8_t> EncodeTracks(const std::vector<Track>& tracks);
std::vector<Track> DecodeTracks(std::span<const uint8_t> bytes,
                                const std::string& source = "tracks");
void WriteTracks(const std::filesystem::path& path,
                 const std::vector<Track>& tracks);
std::vector<Track> ReadTracks(const std::filesystem::path& path);

// --- Plan -----------------------------------------------------------------

std::string EncodePlan(const SceneGraphPlan& plan);
SceneGraphPlan DecodePlan(const std::string& text,
                          const std::string& source = "plan");
void WritePlan(const std::filesystem::path& path, const SceneGraphPlan& plan);
SceneGraphPlan ReadPlan(const std::filesystem::path& path);

// --- Scene manifest -------------------------------------------------------

struct ImageEntry {
  int frame_id = 0;
  int width = 0;
  int height = 0;
  std::optional<std::string> image_path;
};

struct FrameTensors {
  int frame_id = 0;
  std::string depth_path;
  std::string confidence_path;
};

struct ClusterEntry {
  int cluster_id = 0;
  std::vector<int> frame_ids;
  std::string cameras_path;
  std::vector<FrameTensors> frames;
};

struct SceneManifest {
  int format_version = kFormatVersion;
  std::string pose_convention = kPoseConvention;
  std::string units = "scene units; each cluster has its own Sim(3) gauge";
  std::vector<ImageEntry> images;
  std::string similarity_path;
  std::vector<ClusterEntry> clusters;

  const ImageEntry* FindImage(int frame_id) const;
  const ClusterEntry* FindCluster(int cluster_id) const;
};

std::string EncodeManifest(const SceneManifest& manifest);
SceneManifest DecodeManifest(const std::string& text,
                             const std::string& source = "manifest");
void WriteManifest(const std::filesystem::path& path,
                   const SceneManifest& manifest);
SceneManifest ReadManifest(const std::filesystem::path& path);

// --- Match sets (precomputed matcher output) ------------------------------


std::string EncodeMatchSet(const MatchSet& matches);
MatchSet DecodeMatchSet(const std::string& text,
                        const std::string& source = "matches");

// --- PLY ------------------------------------------------------------------
//
// binary_little_endian 1.0, vertex properties float x y z, optional
// uchar red green blue, optional float quality (confidence).

std::vector<uint8_t> EncodePly(const PointCloud& cloud);
PointCloud DecodePly(std::span<const uint8_t> bytes,
                     const std::string& source = "ply");
void WritePly(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud ReadPly(const std::filesystem::path& path);

}  // namespace merg3r
