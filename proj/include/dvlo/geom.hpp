#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace dvlo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Hamilton quaternion stored as (w, x, y, z).
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion identity() { return {}; }
  static Quaternion from_axis_angle(const Vec3& axis, double angle);

  double norm() const;
  Quaternion conjugate() const { return {w, -x, -y, -z}; }
  Quaternion inverse() const;
  /// Unit quaternion; the identity when the input has zero norm.
  Quaternion normalized() const;
  Vec3 vec() const { return {x, y, z}; }
  Mat3 to_matrix() const;

  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

/// Distance between rotations that ignores the q / -q double cover.
double rotation_distance(const Quaternion& a, const Quaternion& b);

/// Rotation angle in radians, computed as 2 atan2(|vec|, |w|).
double rotation_angle(const Quaternion& q);

Quaternion quat_mul(const Quaternion& a, const Quaternion& b);

/// Vector part of q (0, v) q^-1. Expects a unit quaternion.
Vec3 quat_rotate(const Quaternion& q, const Vec3& v);

/// Rotation followed by translation: p' = R p + t.
struct RigidMotion {
  Quaternion rotation;
  Vec3 translation = Vec3::Zero();

  static RigidMotion identity() { return {}; }
  static RigidMotion from_matrix(const Mat4& m);

  Mat4 to_matrix() const;
  RigidMotion inverse() const;
  Vec3 apply(const Vec3& p) const;
  /// this ∘ other, i.e. the matrix product T(this) T(other).
  RigidMotion compose(const RigidMotion& other) const;
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layer update of the refinement cascade:
///   q = dq ⊗ q_prior,  t = dq t_prior dq^-1 + dt.
/// The rotation of the result is renormalized.
RigidMotion compose_residual(const RigidMotion& delta, const RigidMotion& prior);

/// Rotation-matrix to quaternion conversion with Shepperd's branch selection.
/// Throws GeometryError when R deviates from orthonormality by more than
/// `tolerance` (max-abs entry of R^T R - I) or has negative determinant.
Quaternion quat_from_rotation(const Mat3& r, double tolerance = 1e-3);

struct CylindricalParams {
  double delta_theta = 0.0;  // rad per column
  double delta_phi = 0.0;    // rad per row
  int height = 0;
  int width = 0;

  void validate() const;
};

struct CylindricalCoord {
  double u = 0.0;
  double v = 0.0;
};

/// u = atan2(y, x) / dtheta, v = asin(z / |p|) / dphi. Throws on |p| == 0.
CylindricalCoord cylindrical_project(const Vec3& p, const CylindricalParams& params);

struct CameraModel {
  Mat3 intrinsics = Mat3::Identity();
  RigidMotion extrinsic;  // LiDAR frame -> camera frame
  int width = 0;
  int height = 0;

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }

  void validate() const;
};

struct Projection {
  double px = 0.0;
  double py = 0.0;
  double depth = 0.0;
  bool in_view = false;
};

/// Projects a LiDAR-frame point into the camera. in_view requires positive
/// depth and (px, py) inside [0, width) x [0, height).
Projection camera_project(const Vec3& p, const CameraModel& cam);

}  // namespace dvlo
