#include "merg3r/bundle_adjustment.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <spdlog/spdlog.h>

#include "merg3r/error.h"
#include "merg3r/parallel.h"

namespace merg3r {
namespace {

constexpr size_t kChunk = 2048;
constexpr double kPi = 3.14159265358979323846;

// Gradient of one observation with respect to its camera and point.
struct ObsGrad {
  double loss = 0.0;
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Vector4d intrinsics = Eigen::Vector4d::Zero();
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  bool behind = false;
};

ObsGrad ObservationGradient(const CameraParams& cam, const Eigen::Vector3d& x,
                            const BAObservation& obs, const BAConfig& cfg,
                            bool want_grad) {
  ObsGrad g;
  const Eigen::Vector3d rx = cam.pose.rotation * x;
  const Eigen::Vector3d xc = rx + cam.pose.translation;
  const double c = obs.confidence;
  Eigen::Vector3d d_xc;
  if (!(xc.z() > 0)) {
    g.behind = true;
    g.loss = c * (cfg.behind_penalty + xc.z() * xc.z());
    if (!want_grad) return g;
    d_xc = Eigen::Vector3d(0, 0, 2 * c * xc.z());
  } else {
    const CameraIntrinsics& k = cam.intrinsics;
    const double iz = 1.0 / xc.z();
    const double a = xc.x() * iz;
    const double b = xc.y() * iz;
    const Eigen::Vector2d r(k.fx * a + k.cx - obs.pixel.x(),
                            k.fy * b + k.cy - obs.pixel.y());
    const double s = r.squaredNorm() + cfg.epsilon;
    g.loss = c * std::pow(s, 0.5 * cfg.lambda);
    if (!want_grad) return g;
    const Eigen::Vector2d d_r = c * cfg.lambda * std::pow(s, 0.5 * cfg.lambda - 1) * r;
    d_xc = Eigen::Vector3d(d_r.x() * k.fx * iz, d_r.y() * k.fy * iz,
                           -(d_r.x() * k.fx * a + d_r.y() * k.fy * b) * iz);
    g.intrinsics = Eigen::Vector4d(d_r.x() * a, d_r.y() * b, d_r.x(), d_r.y());
  }
  g.translation = d_xc;
  g.rotation = rx.cross(d_xc);
  g.point = cam.pose.rotation.transpose() * d_xc;
  return g;
}

std::vector<ObsGrad> PerObservation(const BAProblem& p, const BAConfig& cfg,
                                    bool want_grad) {
  std::vector<ObsGrad> out(p.observations.size());
  const size_t n_chunks = (out.size() + kChunk - 1) / kChunk;
  ParallelFor(n_chunks, cfg.threads, [&](size_t ch) {
    const size_t end = std::min(out.size(), (ch + 1) * kChunk);
    for (size_t i = ch * kChunk; i < end; ++i) {
      const BAObservation& o = p.observations[i];
      out[i] = ObservationGradient(p.cameras[o.camera], p.points[o.point], o,
                                   cfg, want_grad);
    }
  });
  return out;
}

BALoss SumLoss(const std::vector<ObsGrad>& per_obs) {
  std::vector<BALoss> parts((per_obs.size() + kChunk - 1) / kChunk);
  for (size_t ch = 0; ch < parts.size(); ++ch) {
    const size_t end = std::min(per_obs.size(), (ch + 1) * kChunk);
    for (size_t i = ch * kChunk; i < end; ++i) {
      parts[ch].loss += per_obs[i].loss;
      parts[ch].behind_camera += per_obs[i].behind;
    }
  }
  return PairwiseReduce(std::move(parts), [](BALoss a, BALoss b) {
    return BALoss{a.loss + b.loss, a.behind_camera + b.behind_camera};
  });
}

bool AllFinite(const BAGradients& g) {
  auto finite = [](const auto& blocks) {
    for (const auto& v : blocks) {
      if (!v.allFinite()) return false;
    }
    return true;
  };
  return std::isfinite(g.loss.loss) && finite(g.rotation) &&
         finite(g.translation) && finite(g.intrinsics) && finite(g.points);
}

double Median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  return v[mid];
}

// Length unit used to normalise translations and points.
double SceneScale(const BAProblem& p) {
  auto spread = [](const std::vector<Eigen::Vector3d>& pts) {
    if (pts.size() < 2) return 0.0;
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& x : pts) mean += x;
    mean /= static_cast<double>(pts.size());
    std::vector<double> d;
    d.reserve(pts.size());
    for (const auto& x : pts) d.push_back((x - mean).norm());
    return Median(std::move(d));
  };
  std::vector<Eigen::Vector3d> centers;
  for (const auto& c : p.cameras) centers.push_back(c.pose.Center());
  double s = spread(centers);
  if (!(s > 0)) s = spread(p.points);
  return s > 0 ? s : 1.0;
}

class Stepper {
 public:
  Stepper(BAStepRule rule, size_t n) : rule_(rule), m_(n, 0.0), v_(n, 0.0) {}

  // Step in normalised coordinates for coordinate idx with gradient g.
  double Step(size_t idx, double g, double lr) {
    if (rule_ == BAStepRule::kScaledGradient) return -lr * g;
    double& m = m_[idx];
    double& v = v_[idx];
    m = kBeta1 * m + (1 - kBeta1) * g;
    v = kBeta2 * v + (1 - kBeta2) * g * g;
    const double m_hat = m / (1 - beta1_t_);
    const double v_hat = v / (1 - beta2_t_);
    return -lr * m_hat / (std::sqrt(v_hat) + kEps);
  }

  void NextIteration() {
    beta1_t_ *= kBeta1;
    beta2_t_ *= kBeta2;
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-12;
  BAStepRule rule_;
  std::vector<double> m_;
  std::vector<double> v_;
  double beta1_t_ = kBeta1;
  double beta2_t_ = kBeta2;
};

}  // namespace

void BAProblem::Validate(int min_track_len) const {
  std::vector<int> count(points.size(), 0);
  for (size_t i = 0; i < observations.size(); ++i) {
    const BAObservation& o = observations[i];
    if (o.camera < 0 || o.camera >= static_cast<int>(cameras.size()) ||
        o.point < 0 || o.point >= static_cast<int>(points.size())) {
      throw Error(ErrorCode::kInvalidInput,
                  "observation " + std::to_string(i) + " index out of range");
    }
    if (!(o.confidence >= 0)) {
      throw Error(ErrorCode::kInvalidInput,
                  "observation " + std::to_string(i) +
                      " has a negative confidence");
    }
    ++count[o.point];
  }
  for (size_t l = 0; l < count.size(); ++l) {
    if (count[l] < min_track_len) {
      throw Error(ErrorCode::kInvalidInput,
                  "point " + std::to_string(l) + " has " +
                      std::to_string(count[l]) + " observations");
    }
  }
}

void BAConfig::Validate() const {
  if (iterations < 1) {
    throw Error(ErrorCode::kInvalidParameter, "iterations must be >= 1");
  }
  if (!(lambda > 0 && lambda <= 2)) {
    throw Error(ErrorCode::kInvalidParameter, "lambda must lie in (0, 2]");
  }
  if (!(epsilon > 0)) {
    throw Error(ErrorCode::kInvalidParameter, "epsilon must be positive");
  }
  if (!(initial_lr > 0)) {
    throw Error(ErrorCode::kInvalidParameter, "learning rate must be positive");
  }
  if (!(final_lr_fraction >= 0 && final_lr_fraction <= 1)) {
    throw Error(ErrorCode::kInvalidParameter,
                "final_lr_fraction must lie in [0, 1]");
  }
}

BALoss EvaluateBALoss(const BAProblem& problem, const BAConfig& config) {
  return SumLoss(PerObservation(problem, config, false));
}

BAGradients EvaluateBAGradients(const BAProblem& problem,
                                const BAConfig& config) {
  const std::vector<ObsGrad> per_obs =
      PerObservation(problem, config, true);
  BAGradients g;
  g.rotation.assign(problem.cameras.size(), Eigen::Vector3d::Zero());
  g.translation.assign(problem.cameras.size(), Eigen::Vector3d::Zero());
  g.intrinsics.assign(problem.cameras.size(), Eigen::Vector4d::Zero());
  g.points.assign(problem.points.size(), Eigen::Vector3d::Zero());
  for (size_t i = 0; i < per_obs.size(); ++i) {
    const BAObservation& o = problem.observations[i];
    g.rotation[o.camera] += per_obs[i].rotation;
    g.translation[o.camera] += per_obs[i].translation;
    g.intrinsics[o.camera] += per_obs[i].intrinsics;
    g.points[o.point] += per_obs[i].point;
  }
  g.loss = SumLoss(per_obs);
  return g;
}

double CosineLearningRate(const BAConfig& config, int it) {
  const double lo = config.initial_lr * config.final_lr_fraction;
  const double phase = static_cast<double>(it) / config.iterations;
  return lo + 0.5 * (config.initial_lr - lo) * (1 + std::cos(kPi * phase));
}

BAResult RunBundleAdjustment(const BAProblem& problem,
                             const BAConfig& config) {
  config.Validate();
  problem.Validate(1);
  const size_t n_cam = problem.cameras.size();
  const size_t n_pt = problem.points.size();
  const double unit = SceneScale(problem);
  std::vector<double> focal(n_cam);
  for (size_t c = 0; c < n_cam; ++c) {
    focal[c] = std::max(problem.cameras[c].intrinsics.fx, 1e-12);
  }

  BAProblem cur = problem;
  if (config.shared_intrinsics && n_cam > 0) {
    for (auto& c : cur.cameras) c.intrinsics = problem.cameras[0].intrinsics;
    std::fill(focal.begin(), focal.end(), focal[0]);
  }
  // Coordinate layout: per camera rotation(3) translation(3) intrinsics(4),
  // then points(3).
  const size_t cam_stride = 10;
  Stepper stepper(config.step_rule, n_cam * cam_stride + 3 * n_pt);

  BAResult result;
  double best = std::numeric_limits<double>::infinity();
  for (int it = 0; it <= config.iterations; ++it) {
    BAGradients g = EvaluateBAGradients(cur, config);
    if (!AllFinite(g)) {
      throw Error(ErrorCode::kDivergence,
                  "bundle adjustment diverged at iteration " +
                      std::to_string(it));
    }
    result.loss_history.push_back(g.loss.loss);
    if (g.loss.loss < best) {
      best = g.loss.loss;
      result.problem = cur;
      result.best_iteration = it;
      result.behind_camera = g.loss.behind_camera;
    }
    if (it == config.iterations) break;

    const double lr = CosineLearningRate(config, it);
    result.lr_history.push_back(lr);
    if (config.shared_intrinsics) {
      Eigen::Vector4d sum = Eigen::Vector4d::Zero();
      for (const auto& v : g.intrinsics) sum += v;
      std::fill(g.intrinsics.begin(), g.intrinsics.end(), sum);
    }
    for (size_t c = 0; c < n_cam; ++c) {
      CameraParams& cam = cur.cameras[c];
      const size_t base = c * cam_stride;
      Eigen::Vector3d w;
      for (int a = 0; a < 3; ++a) {
        w[a] = stepper.Step(base + a, g.rotation[c][a], lr);
      }
      cam.pose.rotation = NearestRotation(ExpSO3(w) * cam.pose.rotation);
      for (int a = 0; a < 3; ++a) {
        cam.pose.translation[a] +=
            unit * stepper.Step(base + 3 + a, g.translation[c][a] * unit, lr);
      }
      if (!config.optimize_intrinsics) continue;
      if (config.shared_intrinsics && c > 0) {
        cam.intrinsics = cur.cameras[0].intrinsics;
        continue;
      }
      Eigen::Vector4d d;
      for (int a = 0; a < 4; ++a) {
        d[a] = focal[c] *
               stepper.Step(base + 6 + a, g.intrinsics[c][a] * focal[c], lr);
      }
      cam.intrinsics.fx += d[0];
      cam.intrinsics.fy += d[1];
      cam.intrinsics.cx += d[2];
      cam.intrinsics.cy += d[3];
    }
    const size_t pbase = n_cam * cam_stride;
    for (size_t l = 0; l < n_pt; ++l) {
      for (int a = 0; a < 3; ++a) {
        cur.points[l][a] +=
            unit * stepper.Step(pbase + 3 * l + a, g.points[l][a] * unit, lr);
      }
    }
    stepper.NextIteration();
  }
  spdlog::debug("bundle adjustment: loss {:.6g} -> {:.6g} (best at {})",
                result.loss_history.front(), best, result.best_iteration);
  return result;
}

double MeanReprojectionError(const BAProblem& problem) {
  double sum = 0.0;
  size_t n = 0;
  for (const BAObservation& o : problem.observations) {
    const auto p = Project(problem.points[o.point], problem.cameras[o.camera]);
    if (!p) continue;
    sum += (*p - o.pixel).norm();
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

BAProblem BuildBAProblem(const MergedScene& scene,
                         const std::vector<Track>& tracks) {
  BAProblem p;
  p.cameras = scene.Cameras();
  p.points.reserve(tracks.size());
  for (size_t l = 0; l < tracks.size(); ++l) {
    p.points.push_back(tracks[l].point);
    for (const TrackObservation& obs : tracks[l].observations) {
      const MergedFrame* f = scene.Find(obs.frame_id);
      if (f == nullptr) {
        throw Error(ErrorCode::kInvalidInput,
                    "track " + std::to_string(l) + " observes unknown frame " +
                        std::to_string(obs.frame_id));
      }
      p.observations.push_back({static_cast<int>(f - scene.frames.data()),
                                static_cast<int>(l), obs.pixel,
                                tracks[l].confidence});
    }
  }
  return p;
}

void ApplyBAResult(const BAProblem& refined, MergedScene& scene,
                   std::vector<Track>& tracks, double conf_floor) {
  if (refined.cameras.size() != scene.frames.size() ||
      refined.points.size() != tracks.size()) {
    throw Error(ErrorCode::kInvalidInput,
                "refined problem does not match the scene");
  }
  for (size_t i = 0; i < scene.frames.size(); ++i) {
    scene.frames[i].camera = refined.cameras[i];
  }
  for (size_t l = 0; l < tracks.size(); ++l) tracks[l].point = refined.points[l];
  scene.cloud = SceneCloud(scene, conf_floor);
}

}  // namespace merg3r
