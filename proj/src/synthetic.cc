#include "merg3r/synthetic.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "merg3r/error.h"

namespace merg3r {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;
constexpr int kMinLandmarksPerCamera = 50;
constexpr int kMaxAttempts = 100;

CameraParams LookAlong(const Eigen::Vector3d& center, Eigen::Vector3d forward,
                       const CameraIntrinsics& intr, int frame_id) {
  forward.normalize();
  const Eigen::Vector3d world_down(0, -1, 0);
  Eigen::Vector3d right = world_down.cross(forward).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  CameraParams cam;
  cam.intrinsics = intr;
  cam.pose.rotation.row(0) = right.transpose();
  cam.pose.rotation.row(1) = down.transpose();
  cam.pose.rotation.row(2) = forward.transpose();
  cam.pose.translation = -cam.pose.rotation * center;
  cam.frame_id = frame_id;
  return cam;
}

std::vector<Eigen::Vector3d> SampleLandmarks(SceneLayout layout, int n,
                                             SplitMixRng& rng) {
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(n);
  if (layout == SceneLayout::kRoom) {
    const Eigen::Vector3d half(4.0, 1.5, 3.0);
    // Faces weighted by area.
    const double area[3] = {half.y() * half.z(), half.x() * half.z(),
                            half.x() * half.y()};
    const double total = area[0] + area[1] + area[2];
    for (int i = 0; i < n; ++i) {
      const double u = rng.Uniform() * total;
      const int axis = u < area[0] ? 0 : (u < area[0] + area[1] ? 1 : 2);
      Eigen::Vector3d p;
      for (int a = 0; a < 3; ++a) p[a] = rng.Uniform(-half[a], half[a]);
      p[axis] = rng.Uniform() < 0.5 ? -half[axis] : half[axis];
      pts.push_back(p);
    }
  } else {
    const double a = rng.Uniform(0, 2 * kPi);
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d d = rng.UnitVector();
      const double theta = std::atan2(d.z(), d.x());
      const double r = 1.0 + 0.2 * std::sin(3 * theta + a) * d.y() +
                       0.1 * std::cos(2 * theta);
      pts.push_back(r * d);
    }
  }
  return pts;
}

std::vector<CameraParams> SampleTrajectory(const SceneSpec& spec,
                                           SplitMixRng& rng) {
  const double f = 0.5 * spec.width / std::tan(0.5 * spec.fov_deg * kDegToRad);
  CameraIntrinsics intr{f, f, 0.5 * (spec.width - 1), 0.5 * (spec.height - 1),
                        spec.width, spec.height};
  const double sweep = kPi * std::min(1.0, spec.n_cameras / 50.0);
  const double start = rng.Uniform(0, 2 * kPi);
  const double wobble_phase = rng.Uniform(0, 2 * kPi);
  std::vector<CameraParams> cams;
  for (int i = 0; i < spec.n_cameras; ++i) {
    const double s = spec.n_cameras > 1 ? double(i) / (spec.n_cameras - 1) : 0;
    const double phi = start + sweep * s;
    const Eigen::Vector3d radial(std::cos(phi), 0, std::sin(phi));
    const double wobble = std::sin(4 * kPi * s + wobble_phase);
    if (spec.layout == SceneLayout::kRoom) {
      const Eigen::Vector3d c = 1.2 * radial + Eigen::Vector3d(0, 0.2 * wobble, 0);
      const Eigen::Vector3d fwd = radial + Eigen::Vector3d(0, 0.1 * wobble, 0);
      cams.push_back(LookAlong(c, fwd, intr, i));
    } else {
      const Eigen::Vector3d c =
          3.5 * radial + Eigen::Vector3d(0, 0.8 + 0.3 * wobble, 0);
      cams.push_back(LookAlong(c, -c, intr, i));
    }
  }
  return cams;
}

bool Faces(SceneLayout layout, const Eigen::Vector3d& p,
           const Eigen::Vector3d& center) {
  return layout == SceneLayout::kRoom || (center - p).dot(p) > 0;
}

// Z-buffer of landmark splats: depth and owning landmark per pixel.
struct SplatBuffer {
  DepthMap depth;
  std::vector<int> owner;
};

SplatBuffer Splat(const SceneSpec& spec,
                  const std::vector<Eigen::Vector3d>& landmarks,
                  const CameraParams& cam) {
  SplatBuffer buf{DepthMap(spec.width, spec.height, 0.f),
                  std::vector<int>(size_t(spec.width) * spec.height, -1)};
  std::vector<double> zbuf(buf.owner.size(),
                           std::numeric_limits<double>::infinity());
  const Eigen::Vector3d center = cam.pose.Center();
  const int r = spec.splat_radius;
  for (int l = 0; l < static_cast<int>(landmarks.size()); ++l) {
    if (!Faces(spec.layout, landmarks[l], center)) continue;
    const Eigen::Vector3d xc = cam.pose.ToCamera(landmarks[l]);
    if (xc.z() <= 1e-6) continue;
    const auto px = Project(landmarks[l], cam);
    if (!px) continue;
    const long u = std::lround(px->x());
    const long v = std::lround(px->y());
    if (u < 0 || v < 0 || u >= spec.width || v >= spec.height) continue;
    for (long y = v - r; y <= v + r; ++y) {
      for (long x = u - r; x <= u + r; ++x) {
        if (!buf.depth.Contains(int(x), int(y))) continue;
        const size_t k = size_t(y) * spec.width + x;
        if (xc.z() < zbuf[k]) {
          zbuf[k] = xc.z();
          buf.owner[k] = l;
          buf.depth.values[k] = static_cast<float>(xc.z());
        }
      }
    }
  }
  return buf;
}

std::vector<int> VisibleLandmarks(const SceneSpec& spec,
                                  const std::vector<Eigen::Vector3d>& landmarks,
                                  const CameraParams& cam) {
  const SplatBuffer buf = Splat(spec, landmarks, cam);
  std::vector<int> vis;
  for (int l = 0; l < static_cast<int>(landmarks.size()); ++l) {
    const auto px = Project(landmarks[l], cam);
    if (!px) continue;
    const long u = std::lround(px->x());
    const long v = std::lround(px->y());
    if (u < 0 || v < 0 || u >= spec.width || v >= spec.height) continue;
    if (buf.owner[size_t(v) * spec.width + u] == l) vis.push_back(l);
  }
  return vis;
}

double BoxDiagonal(const std::vector<Eigen::Vector3d>& pts) {
  if (pts.empty()) return 0.0;
  Eigen::Vector3d lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

}  // namespace

uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t MixSeed(uint64_t a, uint64_t b, uint64_t c) {
  return SplitMix64(SplitMix64(SplitMix64(a) ^ b) ^ c);
}

uint64_t SplitMixRng::Next() {
  state_ += 0x9e3779b97f4a7c15ull;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double SplitMixRng::Uniform() {
  return static_cast<double>(Next() >> 11) * 0x1.0p-53;
}

double SplitMixRng::Normal() {
  const double u1 = 1.0 - Uniform();
  const double u2 = Uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * kPi * u2);
}

Eigen::Vector3d SplitMixRng::UnitVector() {
  const double z = Uniform(-1, 1);
  const double phi = Uniform(0, 2 * kPi);
  const double r = std::sqrt(std::max(0.0, 1 - z * z));
  return Eigen::Vector3d(r * std::cos(phi), r * std::sin(phi), z);
}

SceneLayout ParseLayout(const std::string& name) {
  if (name == "room") return SceneLayout::kRoom;
  if (name == "object") return SceneLayout::kObject;
  throw Error(ErrorCode::kInvalidParameter, "unknown layout '" + name + "'");
}

std::string LayoutName(SceneLayout layout) {
  return layout == SceneLayout::kRoom ? "room" : "object";
}

SyntheticScene GenerateScene(const SceneSpec& spec) {
  if (spec.n_cameras < 2) {
    throw Error(ErrorCode::kInvalidParameter, "n_cameras must be >= 2");
  }
  if (spec.n_landmarks < 1 || spec.width < 2 || spec.height < 2 ||
      !(spec.fov_deg > 0 && spec.fov_deg < 180) || spec.splat_radius < 0) {
    throw Error(ErrorCode::kInvalidParameter, "invalid scene specification");
  }
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    SplitMixRng rng(MixSeed(spec.seed, 0x5ce7e, attempt));
    SyntheticScene scene;
    scene.spec = spec;
    scene.gt_cameras = SampleTrajectory(spec, rng);
    scene.landmarks = SampleLandmarks(spec.layout, spec.n_landmarks, rng);
    // Drop landmarks seen by fewer than two cameras until stable.
    for (int round = 0; round < 10; ++round) {
      scene.visibility.clear();
      std::vector<int> count(scene.landmarks.size(), 0);
      for (const auto& cam : scene.gt_cameras) {
        scene.visibility.push_back(VisibleLandmarks(spec, scene.landmarks, cam));
        for (int l : scene.visibility.back()) ++count[l];
      }
      std::vector<Eigen::Vector3d> kept;
      for (size_t l = 0; l < count.size(); ++l) {
        if (count[l] >= 2) kept.push_back(scene.landmarks[l]);
      }
      if (kept.size() == scene.landmarks.size()) break;
      scene.landmarks = std::move(kept);
    }
    bool ok = !scene.landmarks.empty();
    std::vector<int> count(scene.landmarks.size(), 0);
    for (const auto& v : scene.visibility) {
      if (static_cast<int>(v.size()) < kMinLandmarksPerCamera) ok = false;
      for (int l : v) {
        if (l < static_cast<int>(count.size())) ++count[l];
      }
    }
    for (int c : count) ok = ok && c >= 2;
    if (!ok) continue;
    scene.diameter = BoxDiagonal(scene.landmarks);
    return scene;
  }
  throw Error(ErrorCode::kGenerationFailure,
              "could not generate a scene with sufficient visibility after " +
                  std::to_string(kMaxAttempts) + " attempts");
}

PerturbationSpec PerturbationSpec::NoiseFree() {
  PerturbationSpec p;
  p.pose_rotation_noise_deg = 0;
  p.pose_translation_noise = 0;
  p.depth_noise_sigma = 0;
  p.match_pixel_noise_sigma = 0;
  p.outlier_match_fraction = 0;
  return p;
}

void PerturbationSpec::Validate() const {
  const double fields[] = {scale_jitter,          rotation_jitter_deg,
                           translation_jitter,    pose_rotation_noise_deg,
                           pose_translation_noise, depth_noise_sigma,
                           confidence_gain,       match_pixel_noise_sigma,
                           outlier_match_fraction};
  for (double f : fields) {
    if (!(f >= 0) || !std::isfinite(f)) {
      throw Error(ErrorCode::kInvalidParameter,
                  "perturbation parameters must be finite and nonnegative");
    }
  }
  if (scale_jitter >= 1) {
    throw Error(ErrorCode::kInvalidParameter, "scale_jitter must be < 1");
  }
  if (outlier_match_fraction >= 1) {
    throw Error(ErrorCode::kInvalidParameter,
                "outlier_match_fraction must be < 1");
  }
}

DepthMap RenderDepth(const SyntheticScene& scene, int camera) {
  return Splat(scene.spec, scene.landmarks, scene.gt_cameras.at(camera)).depth;
}

RenderedCluster RenderCluster(const SyntheticScene& scene, int cluster_id,
                              const std::vector<int>& frames,
                              const PerturbationSpec& perturb) {
  perturb.Validate();
  const uint64_t seed = scene.spec.seed;
  SplitMixRng rng(MixSeed(seed, 0xc1a5, cluster_id));
  RenderedCluster out;
  Sim3Transform& w = out.warp;
  w.scale = rng.Uniform(1 - perturb.scale_jitter, 1 + perturb.scale_jitter);
  const Eigen::Vector3d axis = rng.UnitVector();
  const double angle = rng.Uniform(0, perturb.rotation_jitter_deg * kDegToRad);
  w.rotation = ExpSO3(angle * axis);
  for (int a = 0; a < 3; ++a) {
    w.translation[a] =
        rng.Uniform(-perturb.translation_jitter, perturb.translation_jitter);
  }

  ClusterReconstruction& c = out.cluster;
  c.cluster_id = cluster_id;
  for (int f : frames) {
    if (f < 0 || f >= static_cast<int>(scene.gt_cameras.size())) {
      throw Error(ErrorCode::kInvalidInput,
                  "frame " + std::to_string(f) + " is not in the scene");
    }
    SplitMixRng frng(MixSeed(seed, 0xf7a3e + cluster_id, f));
    CameraParams cam = scene.gt_cameras[f];
    const Eigen::Vector3d dw = frng.UnitVector() *
                               (perturb.pose_rotation_noise_deg * kDegToRad);
    const Eigen::Vector3d dc = frng.UnitVector() *
                               (perturb.pose_translation_noise * scene.diameter);
    const Eigen::Vector3d center = cam.pose.Center() + dc;
    cam.pose.rotation = ExpSO3(dw) * cam.pose.rotation;
    cam.pose.translation = -cam.pose.rotation * center;
    c.frame_ids.push_back(f);
    c.cameras.push_back(TransformCamera(w, cam));

    DepthMap depth = RenderDepth(scene, f);
    ConfidenceMap conf(depth.width, depth.height, 0.f);
    for (size_t k = 0; k < depth.values.size(); ++k) {
      if (depth.values[k] <= 0) continue;
      const double factor = std::exp(perturb.depth_noise_sigma * frng.Normal());
      depth.values[k] = static_cast<float>(depth.values[k] * factor * w.scale);
      conf.values[k] = static_cast<float>(
          1.0 / (1.0 + std::abs(factor - 1.0) * perturb.confidence_gain));
    }
    c.depths.push_back(std::move(depth));
    c.confidences.push_back(std::move(conf));
  }
  return out;
}

SimilarityMatrix SyntheticSimilarity(const SyntheticScene& scene) {
  const int n = static_cast<int>(scene.visibility.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  std::vector<int> common;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const auto& a = scene.visibility[i];
      const auto& b = scene.visibility[j];
      common.clear();
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                            std::back_inserter(common));
      const double denom = std::sqrt(double(a.size()) * double(b.size()));
      const double s = denom > 0 ? std::min(1.0, common.size() / denom) : 0.0;
      m(i, j) = m(j, i) = s;
    }
  }
  return SimilarityMatrix(std::move(m));
}

SyntheticMatcher::SyntheticMatcher(const SyntheticScene& scene,
                                   const PerturbationSpec& perturb)
    : scene_(scene), perturb_(perturb) {
  perturb_.Validate();
}

Eigen::Vector2d SyntheticMatcher::Keypoint(int frame, int landmark) const {
  const CameraParams& cam = scene_.gt_cameras[frame];
  Eigen::Vector2d px = *Project(scene_.landmarks[landmark], cam);
  if (perturb_.match_pixel_noise_sigma > 0) {
    SplitMixRng rng(MixSeed(scene_.spec.seed, 0x4b9 + uint64_t(frame) * 7919,
                            landmark));
    px.x() += perturb_.match_pixel_noise_sigma * rng.Normal();
    px.y() += perturb_.match_pixel_noise_sigma * rng.Normal();
  }
  px.x() = std::clamp(px.x(), 0.0, cam.intrinsics.width - 1.0);
  px.y() = std::clamp(px.y(), 0.0, cam.intrinsics.height - 1.0);
  return px;
}

std::vector<int> SyntheticMatcher::Keypoints(int frame,
                                             int max_keypoints) const {
  std::vector<int> ids = scene_.visibility[frame];
  if (max_keypoints > 0 && ids.size() > size_t(max_keypoints)) {
    auto priority = [&](int l) {
      return MixSeed(scene_.spec.seed, 0x9e7 + uint64_t(frame), l);
    };
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
      return priority(a) < priority(b);
    });
    ids.resize(max_keypoints);
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

MatchSet SyntheticMatcher::MatchWithLandmarks(int frame_i, int frame_j,
                                              int max_keypoints,
                                              std::vector<int>* landmarks) const {
  const int n = static_cast<int>(scene_.gt_cameras.size());
  if (frame_i < 0 || frame_j < 0 || frame_i >= n || frame_j >= n ||
      frame_i == frame_j) {
    throw Error(ErrorCode::kInvalidInput, "invalid frame pair");
  }
  const std::vector<int> ki = Keypoints(frame_i, max_keypoints);
  const std::vector<int> kj = Keypoints(frame_j, max_keypoints);
  std::vector<int> common;
  std::set_intersection(ki.begin(), ki.end(), kj.begin(), kj.end(),
                        std::back_inserter(common));
  MatchSet ms;
  ms.frame_i = frame_i;
  ms.frame_j = frame_j;
  if (landmarks != nullptr) landmarks->clear();
  const uint64_t pair_seed = MixSeed(scene_.spec.seed, 0x0a7c,
                                     (uint64_t(frame_i) << 32) | uint32_t(frame_j));
  const CameraIntrinsics& intr = scene_.gt_cameras[frame_j].intrinsics;
  for (int l : common) {
    MatchPair p{Keypoint(frame_i, l), Keypoint(frame_j, l)};
    int id = l;
    SplitMixRng rng(MixSeed(pair_seed, l));
    if (rng.Uniform() < perturb_.outlier_match_fraction) {
      p.in_j = Eigen::Vector2d(rng.Uniform(0, intr.width - 1),
                               rng.Uniform(0, intr.height - 1));
      id = -1;
    }
    ms.pairs.push_back(p);
    if (landmarks != nullptr) landmarks->push_back(id);
  }
  if (max_keypoints > 0 && ms.pairs.size() > size_t(max_keypoints)) {
    ms.pairs.resize(max_keypoints);
    if (landmarks != nullptr) landmarks->resize(max_keypoints);
  }
  return ms;
}

MatchSet SyntheticMatcher::Match(int frame_i, int frame_j, int max_keypoints) {
  return MatchWithLandmarks(frame_i, frame_j, max_keypoints, nullptr);
}

}  // namespace merg3r
