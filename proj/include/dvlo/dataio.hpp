#pragma once

#include "dvlo/geom.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvlo {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// LiDAR scan in the sensor frame (x forward, y left, z up), meters.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<double> intensity;  // empty or one value per point
  std::size_t dropped = 0;        // non-finite points removed at load time

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Row-major H x W x channels raster with values in [0, 1].
struct ImageRaster {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> data;

  double at(int row, int col, int ch = 0) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  double& at(int row, int col, int ch = 0) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
};

struct Frame {
  PointCloud cloud;
  ImageRaster image;
  double timestamp = 0.0;
};

struct SequenceBundle {
  std::vector<Frame> frames;
  std::vector<CameraModel> cameras;
  std::optional<std::vector<RigidMotion>> gt_poses;  // world <- frame

  /// Throws FormatError if timestamps are not strictly increasing or the
  /// ground-truth length differs from the frame count.
  void validate() const;
};

PointCloud read_point_bin(const std::filesystem::path& path);
void write_point_bin(const PointCloud& cloud, const std::filesystem::path& path);

std::vector<RigidMotion> read_poses(const std::filesystem::path& path);
void write_trajectory(const std::vector<RigidMotion>& poses, const std::filesystem::path& path);

/// Formats one pose as the 12-value KITTI line (no newline).
std::string format_pose_line(const RigidMotion& pose);

/// Builds the camera for `camera_key` (P0..P3) from a KITTI odometry calib
/// file. The projection matrix is split into intrinsics K and a camera-frame
/// offset K^-1 P[:, 3], which is chained after the LiDAR->cam0 transform Tr.
/// Image size is unknown at this point and left as zero.
std::vector<CameraModel> read_calib(const std::filesystem::path& path,
                                    const std::string& camera_key = "P2");
void write_calib(const CameraModel& cam, const std::filesystem::path& path);

/// Binary PGM (P5) or PPM (P6) with maxval 255.
ImageRaster read_image_raster(const std::filesystem::path& path);
void write_image_raster(const ImageRaster& img, const std::filesystem::path& path);

std::vector<double> read_times(const std::filesystem::path& path);

struct SequenceLayout {
  std::filesystem::path root;
  std::string sequence;

  std::filesystem::path sequence_dir() const { return root / "sequences" / sequence; }
  std::filesystem::path velodyne_dir() const { return sequence_dir() / "velodyne"; }
  std::filesystem::path image_dir(const std::string& camera_key) const;
  std::filesystem::path calib_file() const { return sequence_dir() / "calib.txt"; }
  std::filesystem::path times_file() const { return sequence_dir() / "times.txt"; }
  std::filesystem::path poses_file() const { return root / "poses" / (sequence + ".txt"); }
};

/// Loads <root>/sequences/<seq>/{velodyne,image_N,calib.txt,times.txt} and
/// <root>/poses/<seq>.txt when present. Timestamps default to 10 Hz.
SequenceBundle load_sequence(const SequenceLayout& layout, const std::string& camera_key = "P2");

/// Writes a bundle in the same layout load_sequence reads.
void save_sequence(const SequenceBundle& bundle, const SequenceLayout& layout,
                   const std::string& camera_key = "P2");

}  // namespace dvlo
