#include "dvlo/geom.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

namespace dvlo {

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double s = std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), a.x() * s, a.y() * s, a.z() * s};
}

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::inverse() const {
  const double n2 = w * w + x * x + y * y + z * z;
  return {w / n2, -x / n2, -y / n2, -z / n2};
}

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (n == 0.0) return identity();
  if (n == 1.0) return *this;
  return {w / n, x / n, y / n, z / n};
}

Mat3 Quaternion::to_matrix() const {
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

double rotation_distance(const Quaternion& a, const Quaternion& b) {
  const Eigen::Vector4d va(a.w, a.x, a.y, a.z);
  const Eigen::Vector4d vb(b.w, b.x, b.y, b.z);
  return std::min((va - vb).norm(), (va + vb).norm());
}

double rotation_angle(const Quaternion& q) {
  const Quaternion u = q.normalized();
  return 2.0 * std::atan2(u.vec().norm(), std::abs(u.w));
}

Quaternion quat_mul(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Vec3 quat_rotate(const Quaternion& q, const Vec3& v) {
  // v + 2w (u x v) + 2 u x (u x v); exact for the identity quaternion.
  const Vec3 u = q.vec();
  const Vec3 c = u.cross(v);
  return v + 2.0 * q.w * c + 2.0 * u.cross(c);
}

Quaternion quat_from_rotation(const Mat3& r, double tolerance) {
  const double ortho_err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho_err <= tolerance) || r.determinant() < 0.0) {
    throw GeometryError("rotation block is not orthonormal (max deviation " +
                        std::to_string(ortho_err) + ")");
  }
  // Shepperd: pick the largest of (trace, r00, r11, r22) as pivot.
  const double tr = r.trace();
  Quaternion q;
  if (tr >= r(0, 0) && tr >= r(1, 1) && tr >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
  } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
  } else if (r(1, 1) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
  }
  q = q.normalized();
  if (q.w < 0.0) q = {-q.w, -q.x, -q.y, -q.z};
  return q;
}

RigidMotion RigidMotion::from_matrix(const Mat4& m) {
  RigidMotion out;
  out.rotation = quat_from_rotation(m.topLeftCorner<3, 3>());
  out.translation = m.topRightCorner<3, 1>();
  return out;
}

Mat4 RigidMotion::to_matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation.to_matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidMotion RigidMotion::inverse() const {
  RigidMotion inv;
  inv.rotation = rotation.conjugate();
  inv.translation = -quat_rotate(inv.rotation, translation);
  return inv;
}

Vec3 RigidMotion::apply(const Vec3& p) const { return quat_rotate(rotation, p) + translation; }

RigidMotion RigidMotion::compose(const RigidMotion& other) const {
  RigidMotion out;
  out.rotation = quat_mul(rotation, other.rotation).normalized();
  out.translation = quat_rotate(rotation, other.translation) + translation;
  return out;
}

RigidMotion compose_residual(const RigidMotion& delta, const RigidMotion& prior) {
  RigidMotion out;
  out.rotation = quat_mul(delta.rotation, prior.rotation).normalized();
  out.translation = quat_rotate(delta.rotation, prior.translation) + delta.translation;
  return out;
}

void CylindricalParams::validate() const {
  if (!(delta_theta > 0.0) || !(delta_phi > 0.0) || height < 1 || width < 1) {
    throw GeometryError("invalid cylindrical parameters");
  }
}

CylindricalCoord cylindrical_project(const Vec3& p, const CylindricalParams& params) {
  const double r = p.norm();
  if (r == 0.0) throw GeometryError("cannot project a zero-length point");
  const double s = std::clamp(p.z() / r, -1.0, 1.0);
  return {std::atan2(p.y(), p.x()) / params.delta_theta, std::asin(s) / params.delta_phi};
}

void CameraModel::validate() const {
  if (!(fx() > 0.0) || !(fy() > 0.0) || intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0) {
    throw GeometryError("invalid camera intrinsics");
  }
}

Projection camera_project(const Vec3& p, const CameraModel& cam) {
  const Vec3 pc = cam.extrinsic.apply(p);
  Projection out;
  out.depth = pc.z();
  if (pc.z() <= 0.0) return out;
  const Vec3 h = cam.intrinsics * pc;
  out.px = h.x() / h.z();
  out.py = h.y() / h.z();
  out.in_view = out.px >= 0.0 && out.px < cam.width && out.py >= 0.0 && out.py < cam.height;
  return out;
}

}  // namespace dvlo
