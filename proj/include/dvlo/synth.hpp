#pragma once

// Synthetic sequences: a parametric ego path through a ground plane with
// random boxes, ray-cast LiDAR scans and shaded grayscale images. Ground
// truth is exact by construction.

#include "dvlo/dataio.hpp"
#include "dvlo/geom.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dvlo {

struct SynthOptions {
  std::string path = "straight";  // straight | circle | wave
  int frames = 10;
  double speed = 1.0;    // meters per frame along the path
  double radius = 20.0;  // circle radius
  double wave_amplitude = 2.0;
  double wave_length = 40.0;
  int boxes = 24;
  std::uint64_t seed = 0;
  CylindricalParams lidar{0.02454369260617026, 0.02617993877991494, 16, 256};
  int image_width = 128;
  int image_height = 64;
  double max_range = 80.0;
};

struct Box {
  Vec3 lo;
  Vec3 hi;
  double reflectance = 0.5;
};

struct SynthScene {
  double ground_z = -1.7;
  std::vector<Box> boxes;
};

/// Ego pose (world <- sensor) at arc length s.
RigidMotion path_pose(const SynthOptions& opt, double s);

SynthScene make_scene(const SynthOptions& opt);

/// Pinhole camera with f = width / 2 and the principal point at the image
/// center, looking along the LiDAR x axis.
CameraModel synth_camera(const SynthOptions& opt);

/// Nearest hit along origin + r dir within max_range; false on a miss.
bool ray_cast(const SynthScene& scene, const Vec3& origin, const Vec3& dir, double max_range, double& range,
              Vec3& normal, double& reflectance);

SequenceBundle generate_sequence(const SynthOptions& opt);

}  // namespace dvlo
