#pragma once

// Helpers shared by the unit tests: seeded random geometry and scratch
// directories.

#include "dvlo/geom.hpp"
#include "dvlo/params.hpp"

#include <filesystem>
#include <string>

namespace dvlo::testkit {

inline Quaternion random_quat(Rng& rng) {
  return Quaternion{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();
}

inline Vec3 random_vec(Rng& rng, double scale = 1.0) {
  return Vec3(rng.normal(), rng.normal(), rng.normal()) * scale;
}

inline RigidMotion random_motion(Rng& rng, double scale = 1.0) {
  return {random_quat(rng), random_vec(rng, scale)};
}

// Rodrigues' formula, independent of the quaternion code.
inline Mat3 axis_angle_matrix(Vec3 axis, double angle) {
  axis.normalize();
  Mat3 k;
  k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  return Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
}

// Rotation matrix of a unit quaternion written out element by element.
inline Mat3 quat_matrix_oracle(const Quaternion& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

inline Mat4 homogeneous(const Mat3& r, const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dvlo_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace dvlo::testkit
