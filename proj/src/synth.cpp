#include "dvlo/synth.hpp"

#include "dvlo/params.hpp"

#include <cmath>
#include <limits>

namespace dvlo {

RigidMotion path_pose(const SynthOptions& opt, double s) {
  double x = s, y = 0.0, yaw = 0.0;
  if (opt.path == "circle") {
    yaw = s / opt.radius;
    x = opt.radius * std::sin(yaw);
    y = opt.radius * (1.0 - std::cos(yaw));
  } else if (opt.path == "wave") {
    const double k = 2.0 * M_PI / opt.wave_length;
    y = opt.wave_amplitude * std::sin(k * s);
    yaw = std::atan(opt.wave_amplitude * k * std::cos(k * s));
  } else if (opt.path != "straight") {
    throw std::invalid_argument("unknown path '" + opt.path + "' (expected straight, circle or wave)");
  }
  RigidMotion m;
  m.rotation = Quaternion::from_axis_angle(Vec3::UnitZ(), yaw);
  m.translation = {x, y, 0.0};
  return m;
}

SynthScene make_scene(const SynthOptions& opt) {
  Rng rng(opt.seed);
  SynthScene scene;
  const double s_max = opt.frames * opt.speed;
  for (int b = 0; b < opt.boxes; ++b) {
    const double s = rng.uniform(-15.0, s_max + 40.0);
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double offset = rng.uniform(4.0, 14.0);
    const double sx = rng.uniform(1.0, 4.0), sy = rng.uniform(1.0, 4.0), sz = rng.uniform(1.0, 4.0);
    const double refl = rng.uniform(0.2, 0.9);
    const RigidMotion p = path_pose(opt, s);
    const Vec3 lateral = p.rotation.to_matrix().col(1);
    const Vec3 c = p.translation + side * offset * lateral;
    Box box;
    box.lo = {c.x() - sx / 2, c.y() - sy / 2, scene.ground_z};
    box.hi = {c.x() + sx / 2, c.y() + sy / 2, scene.ground_z + sz};
    box.reflectance = refl;
    scene.boxes.push_back(box);
  }
  return scene;
}

CameraModel synth_camera(const SynthOptions& opt) {
  CameraModel cam;
  cam.width = opt.image_width;
  cam.height = opt.image_height;
  const double f = opt.image_width / 2.0;
  cam.intrinsics << f, 0.0, opt.image_width / 2.0, 0.0, f, opt.image_height / 2.0, 0.0, 0.0, 1.0;
  // LiDAR (x forward, y left, z up) to camera (x right, y down, z forward).
  Mat3 r;
  r << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  cam.extrinsic.rotation = quat_from_rotation(r);
  cam.extrinsic.translation = {0.0, -0.08, -0.27};
  return cam;
}

bool ray_cast(const SynthScene& scene, const Vec3& origin, const Vec3& dir, double max_range, double& range,
              Vec3& normal, double& reflectance) {
  double best = max_range;
  bool hit = false;
  if (dir.z() < -1e-12) {
    const double t = (scene.ground_z - origin.z()) / dir.z();
    if (t > 0.0 && t < best) {
      best = t;
      hit = true;
      normal = Vec3::UnitZ();
      const Vec3 p = origin + t * dir;
      const int checker = static_cast<int>(std::floor(p.x() / 2.0) + std::floor(p.y() / 2.0));
      reflectance = (checker & 1) ? 0.35 : 0.2;
    }
  }
  for (const Box& b : scene.boxes) {
    double t0 = 0.0, t1 = best;
    int axis = -1;
    double sign = 0.0;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (std::abs(dir[a]) < 1e-12) {
        if (origin[a] < b.lo[a] || origin[a] > b.hi[a]) miss = true;
        continue;
      }
      double ta = (b.lo[a] - origin[a]) / dir[a];
      double tb = (b.hi[a] - origin[a]) / dir[a];
      double s = -1.0;
      if (ta > tb) {
        std::swap(ta, tb);
        s = 1.0;
      }
      if (ta > t0) {
        t0 = ta;
        axis = a;
        sign = s;
      }
      t1 = std::min(t1, tb);
      if (t0 > t1) miss = true;
    }
    if (!miss && axis >= 0 && t0 > 0.0 && t0 < best) {
      best = t0;
      hit = true;
      normal = Vec3::Zero();
      normal[axis] = sign;
      reflectance = b.reflectance;
    }
  }
  range = best;
  return hit;
}

SequenceBundle generate_sequence(const SynthOptions& opt) {
  opt.lidar.validate();
  if (opt.frames < 1) throw std::invalid_argument("frames must be positive");
  const SynthScene scene = make_scene(opt);
  const CameraModel cam = synth_camera(opt);
  const Mat3 cam_to_lidar = cam.extrinsic.rotation.to_matrix().transpose();
  const Vec3 cam_origin_lidar = cam.extrinsic.inverse().translation;
  const Vec3 light = Vec3(0.3, 0.5, 0.8).normalized();

  SequenceBundle seq;
  seq.cameras = {cam};
  std::vector<RigidMotion> gt;
  for (int i = 0; i < opt.frames; ++i) {
    const RigidMotion pose = path_pose(opt, i * opt.speed);
    const Mat3 rot = pose.rotation.to_matrix();
    Frame f;
    f.timestamp = 0.1 * i;

    const auto& lp = opt.lidar;
    for (int r = 0; r < lp.height; ++r) {
      const double phi = (r + 0.5 - lp.height / 2.0) * lp.delta_phi;
      for (int c = 0; c < lp.width; ++c) {
        const double theta = (c + 0.5 - lp.width / 2.0) * lp.delta_theta;
        const Vec3 d(std::cos(phi) * std::cos(theta), std::cos(phi) * std::sin(theta), std::sin(phi));
        double range = 0.0, refl = 0.0;
        Vec3 n;
        if (ray_cast(scene, pose.translation, rot * d, opt.max_range, range, n, refl)) {
          f.cloud.points.push_back(range * d);
          f.cloud.intensity.push_back(refl);
        }
      }
    }

    ImageRaster img;
    img.height = opt.image_height;
    img.width = opt.image_width;
    img.channels = 1;
    img.data.resize(static_cast<std::size_t>(img.height) * img.width);
    const Vec3 origin = pose.apply(cam_origin_lidar);
    for (int v = 0; v < img.height; ++v) {
      for (int u = 0; u < img.width; ++u) {
        const Vec3 dc((u + 0.5 - cam.cx()) / cam.fx(), (v + 0.5 - cam.cy()) / cam.fy(), 1.0);
        const Vec3 dir = (rot * (cam_to_lidar * dc)).normalized();
        double range = 0.0, refl = 0.0;
        Vec3 n;
        double value = 0.9;  // sky
        if (ray_cast(scene, origin, dir, opt.max_range, range, n, refl)) {
          value = refl * (0.6 + 0.4 * std::abs(n.dot(light))) * (1.0 - 0.5 * range / opt.max_range);
        }
        // Stored as 8-bit on disk; quantize here so memory and files agree.
        img.at(v, u) = std::round(value * 255.0) / 255.0;
      }
    }
    f.image = std::move(img);
    seq.frames.push_back(std::move(f));
    gt.push_back(pose);
  }
  seq.gt_poses = std::move(gt);
  return seq;
}

}  // namespace dvlo
