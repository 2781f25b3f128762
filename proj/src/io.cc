#include "merg3r/io.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "merg3r/error.h"

namespace merg3r {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

static_assert(std::numeric_limits<float>::is_iec559);
static_assert(std::numeric_limits<double>::is_iec559);

// Little-endian byte writer/reader; independent of host endianness.
class ByteWriter {
 public:
  void Bytes(const char* s, size_t n) { buf_.insert(buf_.end(), s, s + n); }
  void U8(uint8_t v) { buf_.push_back(v); }
  void U16(uint16_t v) { Uint(v, 2); }
  void U32(uint32_t v) { Uint(v, 4); }
  void U64(uint64_t v) { Uint(v, 8); }
  void F32(float v) { U32(std::bit_cast<uint32_t>(v)); }
  void F64(double v) { U64(std::bit_cast<uint64_t>(v)); }
  std::vector<uint8_t> Take() { return std::move(buf_); }

 private:
  void Uint(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const uint8_t> bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  size_t offset() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

  void Need(size_t n, const char* field) const {
    if (remaining() < n) {
      throw Error(ErrorCode::kDataCorruption,
                  source_ + ": truncated while reading " + field +
                      " at offset " + std::to_string(pos_));
    }
  }
  uint64_t Uint(int n, const char* field) {
    Need(n, field);
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  uint8_t U8(const char* f) { return static_cast<uint8_t>(Uint(1, f)); }
  uint16_t U16(const char* f) { return static_cast<uint16_t>(Uint(2, f)); }
  uint32_t U32(const char* f) { return static_cast<uint32_t>(Uint(4, f)); }
  uint64_t U64(const char* f) { return Uint(8, f); }
  float F32(const char* f) { return std::bit_cast<float>(U32(f)); }
  double F64(const char* f) { return std::bit_cast<double>(U64(f)); }
  void Skip(size_t n, const char* f) {
    Need(n, f);
    pos_ += n;
  }
  std::string Str(size_t n, const char* f) {
    Need(n, f);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const uint8_t> bytes_;
  std::string source_;
  size_t pos_ = 0;
};

json ParseJson(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchemaViolation,
                source + ": invalid JSON (" + e.what() + ")");
  }
}

[[noreturn]] void SchemaError(const std::string& source,
                              const std::string& field,
                              const std::string& what) {
  throw Error(ErrorCode::kSchemaViolation,
              source + ": field '" + field + "' " + what);
}

const json& Field(const json& obj, const char* name, const std::string& source) {
  if (!obj.is_object() || !obj.contains(name)) {
    SchemaError(source, name, "is missing");
  }
  return obj.at(name);
}

double GetDouble(const json& obj, const char* name, const std::string& source) {
  const json& v = Field(obj, name, source);
  if (!v.is_number()) SchemaError(source, name, "must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) SchemaError(source, name, "must be finite");
  return d;
}

int GetInt(const json& obj, const char* name, const std::string& source) {
  const json& v = Field(obj, name, source);
  if (!v.is_number_integer()) SchemaError(source, name, "must be an integer");
  return v.get<int>();
}

std::string GetString(const json& obj, const char* name,
                      const std::string& source) {
  const json& v = Field(obj, name, source);
  if (!v.is_string()) SchemaError(source, name, "must be a string");
  return v.get<std::string>();
}

template <int N>
Eigen::Matrix<double, N, 1> GetVector(const json& obj, const char* name,
                                      const std::string& source) {
  const json& v = Field(obj, name, source);
  if (!v.is_array() || v.size() != N) {
    SchemaError(source, name, "must be an array of " + std::to_string(N));
  }
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i) {
    if (!v[i].is_number()) SchemaError(source, name, "must hold numbers");
    out[i] = v[i].get<double>();
  }
  if (!out.allFinite()) SchemaError(source, name, "must be finite");
  return out;
}

std::vector<int> GetIntList(const json& obj, const char* name,
                            const std::string& source) {
  const json& v = Field(obj, name, source);
  if (!v.is_array()) SchemaError(source, name, "must be an array");
  std::vector<int> out;
  out.reserve(v.size());
  for (const json& e : v) {
    if (!e.is_number_integer()) SchemaError(source, name, "must hold integers");
    out.push_back(e.get<int>());
  }
  return out;
}

template <int N>
json VectorJson(const Eigen::Matrix<double, N, 1>& v) {
  json a = json::array();
  for (int i = 0; i < N; ++i) a.push_back(v[i]);
  return a;
}

void CheckQuaternion(const Eigen::Vector4d& q, const std::string& source) {
  if (std::abs(q.norm() - 1.0) > 1e-3) {
    SchemaError(source, "quaternion", "is not unit length (norm " +
                                          std::to_string(q.norm()) + ")");
  }
}

void CheckVersion(const json& root, const std::string& source) {
  const int version = GetInt(root, "format_version", source);
  if (version != kFormatVersion) {
    throw Error(ErrorCode::kUnsupportedVersion,
                source + ": format_version " + std::to_string(version));
  }
}

}  // namespace

std::string ReadText(const fs::path& path) {
  const auto bytes = ReadFileBytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void WriteText(const fs::path& path, const std::string& text) {
  WriteFileBytes(path, std::span<const uint8_t>(
                           reinterpret_cast<const uint8_t*>(text.data()),
                           text.size()));
}

std::vector<uint8_t> ReadFileBytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kNotFound, "cannot open " + path.string());
  }
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

void WriteFileBytes(const fs::path& path, std::span<const uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kNotFound, "cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kDataCorruption, "short write " + path.string());
}

// --- Tensor ----------------------------------------------------------------

size_t Tensor::NumElements() const {
  size_t n = 1;
  for (uint32_t d : dims) n *= d;
  return n;
}

std::vector<uint8_t> EncodeTensor(const Tensor& tensor) {
  if (tensor.dims.size() > 255) {
    throw Error(ErrorCode::kSchemaViolation, "tensor rank exceeds 255");
  }
  if (tensor.NumElements() != tensor.values.size()) {
    throw Error(ErrorCode::kSchemaViolation,
                "tensor payload does not match dims");
  }
  ByteWriter w;
  w.Bytes("MRGT", 4);
  w.U16(kTensorVersion);
  w.U8(kDtypeFloat32);
  w.U8(static_cast<uint8_t>(tensor.dims.size()));
  for (uint32_t d : tensor.dims) w.U32(d);
  for (float v : tensor.values) w.F32(v);
  return w.Take();
}

Tensor DecodeTensor(std::span<const uint8_t> bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.Str(4, "magic") != "MRGT") {
    throw Error(ErrorCode::kDataCorruption, source + ": bad magic at offset 0");
  }
  const uint16_t version = r.U16("version");
  if (version != kTensorVersion) {
    throw Error(ErrorCode::kUnsupportedVersion,
                source + ": tensor version " + std::to_string(version) +
                    " at offset 4");
  }
  const uint8_t dtype = r.U8("dtype");
  if (dtype != kDtypeFloat32) {
    throw Error(ErrorCode::kSchemaViolation,
                source + ": unsupported dtype code " + std::to_string(dtype) +
                    " at offset 6");
  }
  const uint8_t rank = r.U8("rank");
  Tensor t;
  t.dims.resize(rank);
  uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const size_t off = r.offset();
    t.dims[i] = r.U32("dims");
    count *= t.dims[i];
    if (count > (uint64_t(1) << 40)) {
      throw Error(ErrorCode::kSchemaViolation,
                  source + ": dimension overflow at offset " + std::to_string(off));
    }
  }
  if (r.remaining() != count * 4) {
    throw Error(ErrorCode::kDataCorruption,
                source + ": payload holds " + std::to_string(r.remaining()) +
                    " bytes at offset " + std::to_string(r.offset()) +
                    ", header requires " + std::to_string(count * 4));
  }
  t.values.resize(count);
  for (uint64_t i = 0; i < count; ++i) t.values[i] = r.F32("payload");
  return t;
}

void WriteTensor(const fs::path& path, const Tensor& tensor) {
  WriteFileBytes(path, EncodeTensor(tensor));
}

Tensor ReadTensor(const fs::path& path) {
  return DecodeTensor(ReadFileBytes(path), path.string());
}

void WriteSimilarity(const fs::path& path, const SimilarityMatrix& m) {
  Tensor t;
  t.dims = {static_cast<uint32_t>(m.n()), static_cast<uint32_t>(m.n())};
  t.values.resize(size_t(m.n()) * m.n());
  for (int i = 0; i < m.n(); ++i) {
    for (int j = 0; j < m.n(); ++j) {
      t.values[size_t(i) * m.n() + j] = static_cast<float>(m(i, j));
    }
  }
  WriteTensor(path, t);
}

SimilarityMatrix ReadSimilarity(const fs::path& path) {
  const Tensor t = ReadTensor(path);
  if (t.dims.size() != 2 || t.dims[0] != t.dims[1]) {
    throw Error(ErrorCode::kSchemaViolation,
                path.string() + ": similarity must be a square rank-2 tensor");
  }
  const int n = static_cast<int>(t.dims[0]);
  Eigen::MatrixXd values(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) values(i, j) = t.values[size_t(i) * n + j];
  }
  return SimilarityMatrix(std::move(values));
}

// --- Poses -----------------------------------------------------------------

PoseRecord PoseRecord::FromCamera(const CameraParams& camera) {
  PoseRecord r;
  r.frame_id = camera.frame_id;
  r.quaternion = RotationToQuaternion(camera.pose.rotation);
  r.translation = camera.pose.translation;
  r.fx = camera.intrinsics.fx;
  r.fy = camera.intrinsics.fy;
  r.cx = camera.intrinsics.cx;
  r.cy = camera.intrinsics.cy;
  r.width = camera.intrinsics.width;
  r.height = camera.intrinsics.height;
  return r;
}

CameraParams PoseRecord::ToCamera() const {
  CameraParams c;
  c.frame_id = frame_id;
  c.pose.rotation = QuaternionToRotation(quaternion);
  c.pose.translation = translation;
  c.intrinsics = {fx, fy, cx, cy, width, height};
  return c;
}

std::string EncodePoses(const std::vector<PoseRecord>& poses) {
  json root = json::array();
  for (const PoseRecord& p : poses) {
    root.push_back({{"frame_id", p.frame_id},
                    {"quaternion", VectorJson<4>(p.quaternion)},
                    {"translation", VectorJson<3>(p.translation)},
                    {"fx", p.fx},
                    {"fy", p.fy},
                    {"cx", p.cx},
                    {"cy", p.cy},
                    {"width", p.width},
                    {"height", p.height}});
  }
  return root.dump(1) + "\n";
}

std::vector<PoseRecord> DecodePoses(const std::string& text,
                                    const std::string& source) {
  const json root = ParseJson(text, source);
  if (!root.is_array()) SchemaError(source, "<root>", "must be a list of poses");
  std::vector<PoseRecord> out;
  std::set<int> ids;
  for (size_t i = 0; i < root.size(); ++i) {
    const std::string where = source + "[" + std::to_string(i) + "]";
    const json& e = root[i];
    PoseRecord p;
    p.frame_id = GetInt(e, "frame_id", where);
    p.quaternion = GetVector<4>(e, "quaternion", where);
    CheckQuaternion(p.quaternion, where);
    p.translation = GetVector<3>(e, "translation", where);
    p.fx = GetDouble(e, "fx", where);
    p.fy = GetDouble(e, "fy", where);
    p.cx = GetDouble(e, "cx", where);
    p.cy = GetDouble(e, "cy", where);
    p.width = GetInt(e, "width", where);
    p.height = GetInt(e, "height", where);
    if (!(p.fx > 0 && p.fy > 0) || p.width <= 0 || p.height <= 0) {
      SchemaError(where, "fx/fy/width/height", "must be positive");
    }
    if (!ids.insert(p.frame_id).second) {
      SchemaError(where, "frame_id", "is duplicated");
    }
    out.push_back(p);
  }
  return out;
}

void WritePoses(const fs::path& path, const std::vector<CameraParams>& cameras) {
  std::vector<PoseRecord> records;
  records.reserve(cameras.size());
  for (const auto& c : cameras) records.push_back(PoseRecord::FromCamera(c));
  WriteText(path, EncodePoses(records));
}

std::vector<CameraParams> ReadPoses(const fs::path& path) {
  std::vector<CameraParams> out;
  for (const auto& r : DecodePoses(ReadText(path), path.string())) {
    out.push_back(r.ToCamera());
  }
  return out;
}

// --- Transforms -------------------------------------------------------------

TransformRecord TransformRecord::FromSim3(int cluster_id, const Sim3Transform& t) {
  return {cluster_id, t.scale, RotationToQuaternion(t.rotation), t.translation};
}

Sim3Transform TransformRecord::ToSim3() const {
  Sim3Transform t;
  t.scale = scale;
  t.rotation = QuaternionToRotation(quaternion);
  t.translation = translation;
  return t;
}

std::string EncodeTransforms(const std::vector<TransformRecord>& transforms) {
  json root = json::array();
  for (const auto& t : transforms) {
    root.push_back({{"cluster_id", t.cluster_id},
                    {"scale", t.scale},
                    {"quaternion", VectorJson<4>(t.quaternion)},
                    {"translation", VectorJson<3>(t.translation)}});
  }
  return root.dump(1) + "\n";
}

std::vector<TransformRecord> DecodeTransforms(const std::string& text,
                                              const std::string& source) {
  const json root = ParseJson(text, source);
  if (!root.is_array()) SchemaError(source, "<root>", "must be a list");
  std::vector<TransformRecord> out;
  for (size_t i = 0; i < root.size(); ++i) {
    const std::string where = source + "[" + std::to_string(i) + "]";
    TransformRecord t;
    t.cluster_id = GetInt(root[i], "cluster_id", where);
    t.scale = GetDouble(root[i], "scale", where);
    if (!(t.scale > 0)) SchemaError(where, "scale", "must be positive");
    t.quaternion = GetVector<4>(root[i], "quaternion", where);
    CheckQuaternion(t.quaternion, where);
    t.translation = GetVector<3>(root[i], "translation", where);
    if (t.cluster_id != static_cast<int>(i)) {
      SchemaError(where, "cluster_id", "must equal the list position");
    }
    out.push_back(t);
  }
  return out;
}

void WriteTransforms(const fs::path& path,
                     const std::vector<Sim3Transform>& transforms) {
  std::vector<TransformRecord> records;
  for (size_t i = 0; i < transforms.size(); ++i) {
    records.push_back(TransformRecord::FromSim3(static_cast<int>(i), transforms[i]));
  }
  WriteText(path, EncodeTransforms(records));
}

std::vector<Sim3Transform> ReadTransforms(const fs::path& path) {
  std::vector<Sim3Transform> out;
  for (const auto& r : DecodeTransforms(ReadText(path), path.string())) {
    out.push_back(r.ToSim3());
  }
  return out;
}

// --- Tracks -----------------------------------------------------------------

std::vector<uint8_t> EncodeTracks(const std::vector<Track>& tracks) {
  ByteWriter w;
  w.Bytes("MRTK", 4);
  w.U16(kTracksVersion);
  w.U64(tracks.size());
  for (const Track& t : tracks) {
    for (int i = 0; i < 3; ++i) w.F64(t.point[i]);
    w.F64(t.confidence);
    w.U32(static_cast<uint32_t>(t.observations.size()));
    for (const auto& o : t.observations) {
      w.U32(static_cast<uint32_t>(o.frame_id));
      w.F64(o.pixel.x());
      w.F64(o.pixel.y());
    }
  }
  return w.Take();
}

std::vector<Track> DecodeTracks(std::span<const uint8_t> bytes,
                                const std::string& source) {
  ByteReader r(bytes, source);
  if (r.Str(4, "magic") != "MRTK") {
    throw Error(ErrorCode::kDataCorruption, source + ": bad magic at offset 0");
  }
  const uint16_t version = r.U16("version");
  if (version != kTracksVersion) {
    throw Error(ErrorCode::kUnsupportedVersion,
                source + ": tracks version " + std::to_string(version) +
                    " at offset 4");
  }
  const uint64_t count = r.U64("count");
  // Smallest possible track record is 36 bytes.
  if (count > r.remaining() / 36) {
    throw Error(ErrorCode::kSchemaViolation,
                source + ": track count " + std::to_string(count) +
                    " exceeds payload at offset 6");
  }
  std::vector<Track> tracks(count);
  for (auto& t : tracks) {
    for (int i = 0; i < 3; ++i) t.point[i] = r.F64("point");
    t.confidence = r.F64("confidence");
    const size_t off = r.offset();
    const uint32_t n_obs = r.U32("observation count");
    if (n_obs > r.remaining() / 20) {
      throw Error(ErrorCode::kDataCorruption,
                  source + ": observation count " + std::to_string(n_obs) +
                      " exceeds payload at offset " + std::to_string(off));
    }
    t.observations.resize(n_obs);
    for (auto& o : t.observations) {
      o.frame_id = static_cast<int>(r.U32("frame id"));
      o.pixel.x() = r.F64("pixel");
      o.pixel.y() = r.F64("pixel");
    }
  }
  if (r.remaining() != 0) {
    throw Error(ErrorCode::kDataCorruption,
                source + ": trailing bytes at offset " + std::to_string(r.offset()));
  }
  return tracks;
}

void WriteTracks(const fs::path& path, const std::vector<Track>& tracks) {
  WriteFileBytes(path, EncodeTracks(tracks));
}

std::vector<Track> ReadTracks(const fs::path& path) {
  return DecodeTracks(ReadFileBytes(path), path.string());
}

// --- Plan -------------------------------------------------------------------

std::string EncodePlan(const SceneGraphPlan& plan) {
  json root = {{"format_version", kFormatVersion},
               {"subset_size", plan.subset_size},
               {"overlap", plan.overlap},
               {"n_subsequences", plan.n_subsequences},
               {"pseudo_order", plan.pseudo_order},
               {"interleaved_order", plan.interleaved_order},
               {"subsets", plan.subsets}};
  return root.dump(1) + "\n";
}

SceneGraphPlan DecodePlan(const std::string& text, const std::string& source) {
  const json root = ParseJson(text, source);
  CheckVersion(root, source);
  SceneGraphPlan plan;
  plan.subset_size = GetInt(root, "subset_size", source);
  plan.overlap = GetInt(root, "overlap", source);
  plan.n_subsequences = GetInt(root, "n_subsequences", source);
  plan.pseudo_order = GetIntList(root, "pseudo_order", source);
  plan.interleaved_order = GetIntList(root, "interleaved_order", source);
  const json& subsets = Field(root, "subsets", source);
  if (!subsets.is_array()) SchemaError(source, "subsets", "must be an array");
  for (size_t i = 0; i < subsets.size(); ++i) {
    json wrapper = {{"s", subsets[i]}};
    plan.subsets.push_back(GetIntList(wrapper, "s", source + ".subsets"));
  }
  const size_t n = plan.interleaved_order.size();
  if (plan.pseudo_order.size() != n) {
    SchemaError(source, "pseudo_order", "length differs from interleaved_order");
  }
  for (const auto* order : {&plan.pseudo_order, &plan.interleaved_order}) {
    std::vector<char> seen(n, 0);
    for (int v : *order) {
      if (v < 0 || static_cast<size_t>(v) >= n || seen[v]) {
        SchemaError(source, "order", "is not a permutation");
      }
      seen[v] = 1;
    }
  }
  for (const auto& s : plan.subsets) {
    for (int v : s) {
      if (v < 0 || static_cast<size_t>(v) >= n) {
        SchemaError(source, "subsets", "index out of range");
      }
    }
  }
  return plan;
}

void WritePlan(const fs::path& path, const SceneGraphPlan& plan) {
  WriteText(path, EncodePlan(plan));
}

SceneGraphPlan ReadPlan(const fs::path& path) {
  return DecodePlan(ReadText(path), path.string());
}

// --- Manifest ---------------------------------------------------------------

const ImageEntry* SceneManifest::FindImage(int frame_id) const {
  for (const auto& im : images) {
    if (im.frame_id == frame_id) return &im;
  }
  return nullptr;
}

const ClusterEntry* SceneManifest::FindCluster(int cluster_id) const {
  for (const auto& c : clusters) {
    if (c.cluster_id == cluster_id) return &c;
  }
  return nullptr;
}

std::string EncodeManifest(const SceneManifest& m) {
  json images = json::array();
  for (const auto& im : m.images) {
    json e = {{"frame_id", im.frame_id}, {"width", im.width}, {"height", im.height}};
    if (im.image_path) e["image_path"] = *im.image_path;
    images.push_back(e);
  }
  json clusters = json::array();
  for (const auto& c : m.clusters) {
    json frames = json::array();
    for (const auto& f : c.frames) {
      frames.push_back({{"frame_id", f.frame_id},
                        {"depth", f.depth_path},
                        {"confidence", f.confidence_path}});
    }
    clusters.push_back({{"cluster_id", c.cluster_id},
                        {"frame_ids", c.frame_ids},
                        {"cameras", c.cameras_path},
                        {"frames", frames}});
  }
  json root = {{"format_version", m.format_version},
               {"pose_convention", m.pose_convention},
               {"units", m.units},
               {"images", images},
               {"similarity", m.similarity_path},
               {"clusters", clusters}};
  return root.dump(1) + "\n";
}

SceneManifest DecodeManifest(const std::string& text, const std::string& source) {
  const json root = ParseJson(text, source);
  CheckVersion(root, source);
  SceneManifest m;
  m.pose_convention = GetString(root, "pose_convention", source);
  if (m.pose_convention != kPoseConvention) {
    SchemaError(source, "pose_convention", "must be \"camera_from_world\"");
  }
  m.units = GetString(root, "units", source);
  m.similarity_path = GetString(root, "similarity", source);
  const json& images = Field(root, "images", source);
  if (!images.is_array()) SchemaError(source, "images", "must be an array");
  std::set<int> ids;
  for (size_t i = 0; i < images.size(); ++i) {
    const std::string where = source + ".images[" + std::to_string(i) + "]";
    ImageEntry im;
    im.frame_id = GetInt(images[i], "frame_id", where);
    im.width = GetInt(images[i], "width", where);
    im.height = GetInt(images[i], "height", where);
    if (im.width <= 0 || im.height <= 0) {
      SchemaError(where, "width/height", "must be positive");
    }
    if (images[i].contains("image_path")) {
      im.image_path = GetString(images[i], "image_path", where);
    }
    if (!ids.insert(im.frame_id).second) {
      SchemaError(where, "frame_id", "is not globally unique");
    }
    m.images.push_back(im);
  }
  const json& clusters = Field(root, "clusters", source);
  if (!clusters.is_array()) SchemaError(source, "clusters", "must be an array");
  for (size_t i = 0; i < clusters.size(); ++i) {
    const std::string where = source + ".clusters[" + std::to_string(i) + "]";
    ClusterEntry c;
    c.cluster_id = GetInt(clusters[i], "cluster_id", where);
    c.frame_ids = GetIntList(clusters[i], "frame_ids", where);
    c.cameras_path = GetString(clusters[i], "cameras", where);
    const json& frames = Field(clusters[i], "frames", where);
    if (!frames.is_array() || frames.size() != c.frame_ids.size()) {
      SchemaError(where, "frames", "must list one entry per frame id");
    }
    for (size_t f = 0; f < frames.size(); ++f) {
      const std::string fw = where + ".frames[" + std::to_string(f) + "]";
      FrameTensors ft;
      ft.frame_id = GetInt(frames[f], "frame_id", fw);
      ft.depth_path = GetString(frames[f], "depth", fw);
      ft.confidence_path = GetString(frames[f], "confidence", fw);
      if (ft.frame_id != c.frame_ids[f]) {
        SchemaError(fw, "frame_id", "does not match frame_ids order");
      }
      if (!ids.count(ft.frame_id)) {
        SchemaError(fw, "frame_id", "is not listed in images");
      }
      c.frames.push_back(ft);
    }
    if (m.FindCluster(c.cluster_id)) {
      SchemaError(where, "cluster_id", "is duplicated");
    }
    m.clusters.push_back(std::move(c));
  }
  return m;
}

void WriteManifest(const fs::path& path, const SceneManifest& manifest) {
  WriteText(path, EncodeManifest(manifest));
}

SceneManifest ReadManifest(const fs::path& path) {
  return DecodeManifest(ReadText(path), path.string());
}

// --- Match sets -------------------------------------------------------------

std::string EncodeMatchSet(const MatchSet& ms) {
  json pairs = json::array();
  for (const auto& p : ms.pairs) {
    pairs.push_back({p.in_i.x(), p.in_i.y(), p.in_j.x(), p.in_j.y()});
  }
  json root = {{"frame_i", ms.frame_i}, {"frame_j", ms.frame_j}, {"pairs", pairs}};
  if (!ms.scores.empty()) root["scores"] = ms.scores;
  return root.dump() + "\n";
}

MatchSet DecodeMatchSet(const std::string& text, const std::string& source) {
  const json root = ParseJson(text, source);
  MatchSet ms;
  ms.frame_i = GetInt(root, "frame_i", source);
  ms.frame_j = GetInt(root, "frame_j", source);
  if (ms.frame_i == ms.frame_j) SchemaError(source, "frame_j", "equals frame_i");
  const json& pairs = Field(root, "pairs", source);
  if (!pairs.is_array()) SchemaError(source, "pairs", "must be an array");
  for (const json& p : pairs) {
    if (!p.is_array() || p.size() != 4) {
      SchemaError(source, "pairs", "entries must be [ui, vi, uj, vj]");
    }
    MatchPair mp;
    mp.in_i = {p[0].get<double>(), p[1].get<double>()};
    mp.in_j = {p[2].get<double>(), p[3].get<double>()};
    ms.pairs.push_back(mp);
  }
  if (root.contains("scores")) {
    for (const json& s : root["scores"]) ms.scores.push_back(s.get<double>());
    if (ms.scores.size() != ms.pairs.size()) {
      SchemaError(source, "scores", "must be parallel to pairs");
    }
  }
  return ms;
}

// --- PLY --------------------------------------------------------------------

std::vector<uint8_t> EncodePly(const PointCloud& cloud) {
  if (!cloud.IsConsistent()) {
    throw Error(ErrorCode::kSchemaViolation, "point cloud arrays differ in length");
  }
  const bool colors = !cloud.colors.empty();
  const bool quality = !cloud.confidences.empty();
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n"
         << "element vertex " << cloud.size() << "\n"
         << "property float x\nproperty float y\nproperty float z\n";
  if (colors) {
    header << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  }
  if (quality) header << "property float quality\n";
  header << "end_header\n";
  const std::string h = header.str();
  ByteWriter w;
  w.Bytes(h.data(), h.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) w.F32(static_cast<float>(cloud.points[i][k]));
    if (colors) {
      for (int k = 0; k < 3; ++k) w.U8(cloud.colors[i][k]);
    }
    if (quality) w.F32(static_cast<float>(cloud.confidences[i]));
  }
  return w.Take();
}

namespace {

struct PlyProperty {
  std::string type;
  std::string name;
  std::string count_type;  // Non-empty for list properties.
};

int PlyTypeSize(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "int32" || type == "uint32" ||
      type == "float" || type == "float32") return 4;
  if (type == "double" || type == "float64") return 8;
  return 0;
}

double ReadPlyBinary(ByteReader& r, const std::string& type) {
  switch (PlyTypeSize(type)) {
    case 1: {
      const uint8_t v = r.U8("vertex");
      return (type == "char" || type == "int8") ? double(int8_t(v)) : double(v);
    }
    case 2: {
      const uint16_t v = r.U16("vertex");
      return (type == "short" || type == "int16") ? double(int16_t(v)) : double(v);
    }
    case 4: {
      const uint32_t v = r.U32("vertex");
      if (type == "float" || type == "float32") return std::bit_cast<float>(v);
      return (type == "int" || type == "int32") ? double(int32_t(v)) : double(v);
    }
    default:
      return r.F64("vertex");
  }
}

void SkipPlyList(ByteReader& r, std::istringstream& text, const PlyProperty& p,
                 bool ascii, const std::string& source) {
  double n = 0, item = 0;
  if (ascii) {
    if (!(text >> n)) {
      throw Error(ErrorCode::kDataCorruption, source + ": truncated ascii list");
    }
    for (long k = 0; k < static_cast<long>(n); ++k) {
      if (!(text >> item)) {
        throw Error(ErrorCode::kDataCorruption, source + ": truncated ascii list");
      }
    }
    return;
  }
  n = ReadPlyBinary(r, p.count_type);
  r.Skip(static_cast<size_t>(n) * PlyTypeSize(p.type), "list");
}

}  // namespace

PointCloud DecodePly(std::span<const uint8_t> bytes, const std::string& source) {
  const std::string marker = "end_header\n";
  const std::string_view all(reinterpret_cast<const char*>(bytes.data()),
                             bytes.size());
  const size_t end = all.find(marker);
  if (all.substr(0, 4) != "ply\n" || end == std::string_view::npos) {
    throw Error(ErrorCode::kDataCorruption, source + ": not a PLY file");
  }
  std::istringstream header(std::string(all.substr(0, end)));
  std::string line;
  std::string format;
  struct Element {
    std::string name;
    size_t count = 0;
    std::vector<PlyProperty> props;
  };
  std::vector<Element> elements;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string version;
      ls >> format >> version;
      if (version != "1.0") {
        throw Error(ErrorCode::kUnsupportedVersion,
                    source + ": unsupported PLY version '" + version + "'");
      }
    } else if (word == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (word == "property") {
      PlyProperty p;
      ls >> p.type;
      if (p.type == "list") ls >> p.count_type >> p.type;
      ls >> p.name;
      if (elements.empty() || PlyTypeSize(p.type) == 0 ||
          (!p.count_type.empty() && PlyTypeSize(p.count_type) == 0)) {
        throw Error(ErrorCode::kSchemaViolation,
                    source + ": bad property line '" + line + "'");
      }
      elements.back().props.push_back(p);
    }
  }
  if (format != "binary_little_endian" && format != "ascii") {
    throw Error(ErrorCode::kUnsupportedVersion,
                source + ": unsupported PLY format '" + format + "'");
  }
  PointCloud cloud;
  ByteReader r(bytes.subspan(end + marker.size()), source);
  std::istringstream text(std::string(all.substr(end + marker.size())));
  for (const Element& e : elements) {
    const bool is_vertex = e.name == "vertex";
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1, iq = -1;
    for (int p = 0; p < static_cast<int>(e.props.size()); ++p) {
      const std::string& n = e.props[p].name;
      if (n == "x") ix = p;
      if (n == "y") iy = p;
      if (n == "z") iz = p;
      if (n == "red") ir = p;
      if (n == "green") ig = p;
      if (n == "blue") ib = p;
      if (n == "quality" || n == "confidence") iq = p;
    }
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) {
      throw Error(ErrorCode::kSchemaViolation, source + ": vertex lacks x/y/z");
    }
    const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;
    std::vector<double> row(e.props.size());
    for (size_t i = 0; i < e.count; ++i) {
      for (size_t p = 0; p < e.props.size(); ++p) {
        if (!e.props[p].count_type.empty()) {
          SkipPlyList(r, text, e.props[p], format == "ascii", source);
          continue;
        }
        if (format == "ascii") {
          if (!(text >> row[p])) {
            throw Error(ErrorCode::kDataCorruption,
                        source + ": truncated ascii payload at element " +
                            std::to_string(i));
          }
        } else {
          row[p] = ReadPlyBinary(r, e.props[p].type);
        }
      }
      if (!is_vertex) continue;
      cloud.points.emplace_back(row[ix], row[iy], row[iz]);
      if (has_color) {
        cloud.colors.push_back({static_cast<unsigned char>(row[ir]),
                                static_cast<unsigned char>(row[ig]),
                                static_cast<unsigned char>(row[ib])});
      }
      if (iq >= 0) cloud.confidences.push_back(row[iq]);
    }
    if (is_vertex) break;
  }
  return cloud;
}

void WritePly(const fs::path& path, const PointCloud& cloud) {
  WriteFileBytes(path, EncodePly(cloud));
}

PointCloud ReadPly(const fs::path& path) {
  return DecodePly(ReadFileBytes(path), path.string());
}

}  // namespace merg3r
