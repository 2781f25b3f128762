#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include <Eigen/Core>

#include "merg3r/error.h"
#include "merg3r/geometry.h"

namespace merg3r::testing {

inline Eigen::Matrix3d RandomRotation(std::mt19937_64& rng, double max_angle = M_PI) {
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> u(0, max_angle);
  Eigen::Vector3d axis(n(rng), n(rng), n(rng));
  axis.normalize();
  return ExpSO3(u(rng) * axis);
}

inline Eigen::Vector3d RandomVector(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Eigen::Vector3d(u(rng), u(rng), u(rng));
}

inline Sim3Transform RandomSim3(std::mt19937_64& rng, double s_lo = 0.5,
                                double s_hi = 2.0, double max_angle = M_PI,
                                double t_scale = 5.0) {
  std::uniform_real_distribution<double> ls(std::log(s_lo), std::log(s_hi));
  Sim3Transform t;
  t.scale = std::exp(ls(rng));
  t.rotation = RandomRotation(rng, max_angle);
  t.translation = RandomVector(rng, t_scale);
  return t;
}

inline CameraIntrinsics TestIntrinsics(int w = 64, int h = 48) {
  CameraIntrinsics k;
  k.fx = k.fy = 0.8 * w;
  k.cx = 0.5 * (w - 1);
  k.cy = 0.5 * (h - 1);
  k.width = w;
  k.height = h;
  return k;
}

// Camera at `center` looking at the origin.
inline CameraParams LookAtOrigin(const Eigen::Vector3d& center,
                                 const CameraIntrinsics& k, int frame_id = 0) {
  const Eigen::Vector3d fwd = (-center).normalized();
  Eigen::Vector3d up(0, 1, 0);
  if (std::abs(fwd.dot(up)) > 0.9) up = Eigen::Vector3d(1, 0, 0);
  const Eigen::Vector3d right = up.cross(fwd).normalized();
  const Eigen::Vector3d down = fwd.cross(right);
  CameraParams c;
  c.intrinsics = k;
  c.pose.rotation.row(0) = right;
  c.pose.rotation.row(1) = down;
  c.pose.rotation.row(2) = fwd;
  c.pose.translation = -c.pose.rotation * center;
  c.frame_id = frame_id;
  return c;
}

// Largest of |scale difference|, relative rotation angle and translation
// component difference.
inline double Sim3ParamError(const Sim3Transform& a, const Sim3Transform& b) {
  return std::max({std::abs(a.scale - b.scale),
                   RotationAngle(a.rotation.transpose() * b.rotation),
                   (a.translation - b.translation).cwiseAbs().maxCoeff()});
}

// Error code raised by `f`, or nullopt when it returns normally.
template <typename F>
std::optional<ErrorCode> CodeOf(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

template <typename F>
std::string MessageOf(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

inline std::filesystem::path TempDir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("merg3r_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace merg3r::testing
