#pragma once

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace merg3r {

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Eigen::Matrix3d K() const;
  bool IsValid() const;
};

// Camera-from-world: x_cam = rotation * x_world + translation.
struct CameraPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d Center() const { return -rotation.transpose() * translation; }
  Eigen::Vector3d ToCamera(const Eigen::Vector3d& world) const {
    return rotation * world + translation;
  }
  bool IsValid(double tol = 1e-9) const;
};

struct CameraParams {
  CameraIntrinsics intrinsics;
  CameraPose pose;
  int frame_id = 0;
};

// x -> scale * rotation * x + translation.
struct Sim3Transform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Sim3Transform Identity() { return {}; }

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }
  Sim3Transform Inverse() const;
  bool IsValid(double tol = 1e-9) const;

  // (scale, angle-axis rotation, translation) used for parameter-wise
  // comparisons in tests and convergence checks.
  Eigen::Matrix<double, 7, 1> Params() const;
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<std::array<unsigned char, 3>> colors;
  std::vector<double> confidences;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool IsConsistent() const;
};

std::optional<Eigen::Vector2d> Project(const Eigen::Vector3d& world,
                                       const CameraParams& camera);

// Throws kInvalidDepth for depth <= 0.
Eigen::Vector3d Unproject(const Eigen::Vector2d& pixel, double depth,
                          const CameraParams& camera);

inline Eigen::Vector3d ApplySim3(const Sim3Transform& t,
                                 const Eigen::Vector3d& p) {
  return t * p;
}

// ComposeSim3(a, b) applies b first, then a.
Sim3Transform ComposeSim3(const Sim3Transform& a, const Sim3Transform& b);

// Re-expresses a camera in the frame produced by `t`. Points mapped with
// `t` project to the same pixels through the returned camera.
CameraParams TransformCamera(const Sim3Transform& t, const CameraParams& cam);

Eigen::Matrix3d NearestRotation(const Eigen::Matrix3d& m);
Eigen::Matrix3d ExpSO3(const Eigen::Vector3d& omega);
Eigen::Vector3d LogSO3(const Eigen::Matrix3d& r);
double RotationAngle(const Eigen::Matrix3d& r);
double OrthonormalityError(const Eigen::Matrix3d& r);

// Unit quaternion in (w, x, y, z) with w >= 0.
Eigen::Vector4d RotationToQuaternion(const Eigen::Matrix3d& r);
Eigen::Matrix3d QuaternionToRotation(const Eigen::Vector4d& wxyz);

}  // namespace merg3r
