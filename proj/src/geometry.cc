#include "merg3r/geometry.h"

#include <cmath>

#include <Eigen/SVD>

#include "merg3r/error.h"

namespace merg3r {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidParameter: return "invalid-parameter";
    case ErrorCode::kInvalidDepth: return "invalid-depth";
    case ErrorCode::kInvalidSimilarity: return "invalid-similarity";
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kSchemaViolation: return "schema-violation";
    case ErrorCode::kDataCorruption: return "data-corruption";
    case ErrorCode::kUnsupportedVersion: return "unsupported-version";
    case ErrorCode::kNoOverlap: return "no-overlap";
    case ErrorCode::kInsufficientCorrespondences:
      return "insufficient-correspondences";
    case ErrorCode::kDegenerateGeometry: return "degenerate-geometry";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kGenerationFailure: return "generation-failure";
  }
  return "unknown";
}

Eigen::Matrix3d CameraIntrinsics::K() const {
  Eigen::Matrix3d k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

bool CameraIntrinsics::IsValid() const {
  return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 &&
         cx <= width && cy >= 0 && cy <= height;
}

double OrthonormalityError(const Eigen::Matrix3d& r) {
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
}

bool CameraPose::IsValid(double tol) const {
  return OrthonormalityError(rotation) < tol &&
         std::abs(rotation.determinant() - 1.0) < tol &&
         translation.allFinite();
}

Sim3Transform Sim3Transform::Inverse() const {
  Sim3Transform inv;
  inv.scale = 1.0 / scale;
  inv.rotation = rotation.transpose();
  inv.translation = -inv.scale * (inv.rotation * translation);
  return inv;
}

bool Sim3Transform::IsValid(double tol) const {
  return scale > 0 && std::isfinite(scale) &&
         OrthonormalityError(rotation) < tol &&
         std::abs(rotation.determinant() - 1.0) < tol &&
         translation.allFinite();
}

Eigen::Matrix<double, 7, 1> Sim3Transform::Params() const {
  Eigen::Matrix<double, 7, 1> p;
  p[0] = scale;
  p.segment<3>(1) = LogSO3(rotation);
  p.segment<3>(4) = translation;
  return p;
}

bool PointCloud::IsConsistent() const {
  return (colors.empty() || colors.size() == points.size()) &&
         (confidences.empty() || confidences.size() == points.size());
}

std::optional<Eigen::Vector2d> Project(const Eigen::Vector3d& world,
                                       const CameraParams& camera) {
  const Eigen::Vector3d x = camera.pose.ToCamera(world);
  if (x.z() <= 0) return std::nullopt;
  const CameraIntrinsics& k = camera.intrinsics;
  return Eigen::Vector2d(k.fx * x.x() / x.z() + k.cx,
                         k.fy * x.y() / x.z() + k.cy);
}

Eigen::Vector3d Unproject(const Eigen::Vector2d& pixel, double depth,
                          const CameraParams& camera) {
  if (!(depth > 0)) {
    throw Error(ErrorCode::kInvalidDepth,
                "depth must be positive, got " + std::to_string(depth));
  }
  const CameraIntrinsics& k = camera.intrinsics;
  const Eigen::Vector3d x((pixel.x() - k.cx) / k.fx * depth,
                          (pixel.y() - k.cy) / k.fy * depth, depth);
  return camera.pose.rotation.transpose() * (x - camera.pose.translation);
}

Sim3Transform ComposeSim3(const Sim3Transform& a, const Sim3Transform& b) {
  Sim3Transform c;
  c.scale = a.scale * b.scale;
  c.rotation = a.rotation * b.rotation;
  c.translation = a.scale * (a.rotation * b.translation) + a.translation;
  return c;
}

CameraParams TransformCamera(const Sim3Transform& t, const CameraParams& cam) {
  CameraParams out = cam;
  const Eigen::Matrix3d r = cam.pose.rotation * t.rotation.transpose();
  out.pose.rotation = r;
  out.pose.translation = t.scale * cam.pose.translation - r * t.translation;
  return out;
}

Eigen::Matrix3d NearestRotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU |
                                               Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) {
    d(2, 2) = -1;
  }
  return svd.matrixU() * d * svd.matrixV().transpose();
}

Eigen::Matrix3d ExpSO3(const Eigen::Vector3d& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    Eigen::Matrix3d w;
    w << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(),
        omega.x(), 0;
    return Eigen::Matrix3d::Identity() + w;
  }
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

Eigen::Vector3d LogSO3(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

double RotationAngle(const Eigen::Matrix3d& r) {
  const Eigen::Vector3d v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0),
                          r(1, 0) - r(0, 1));
  const double c = 0.5 * (r.trace() - 1.0);
  return std::atan2(0.5 * v.norm(), c);
}

Eigen::Vector4d RotationToQuaternion(const Eigen::Matrix3d& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  Eigen::Vector4d wxyz(q.w(), q.x(), q.y(), q.z());
  if (wxyz[0] < 0) wxyz = -wxyz;
  return wxyz;
}

Eigen::Matrix3d QuaternionToRotation(const Eigen::Vector4d& wxyz) {
  Eigen::Quaterniond q(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
  q.normalize();
  return q.toRotationMatrix();
}

}  // namespace merg3r
