#include "dvlo/dataio.hpp"

#include <Eigen/LU>
#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace dvlo {
namespace fs = std::filesystem;

namespace {

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

std::ofstream open_out(const fs::path& path, bool binary) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

float load_f32_le(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

void store_f32_le(float v, char* p) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  std::memcpy(p, &bits, 4);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_double(std::string_view tok, const std::string& where) {
  double v = 0.0;
  const char* first = tok.data();
  if (!tok.empty() && tok.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw FormatError(where + ": cannot parse number '" + std::string(tok) + "'");
  }
  return v;
}

Mat4 rows_to_matrix(const std::vector<double>& v) {
  Mat4 m = Mat4::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v[r * 4 + c];
  return m;
}

// Skips whitespace and '#' comments between PNM header tokens.
std::string next_pnm_token(const std::vector<char>& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    tok.push_back(bytes[pos++]);
  }
  return tok;
}

int parse_pnm_int(const std::string& tok, const fs::path& path) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || v <= 0) {
    throw FormatError(path.string() + ": bad PNM header field '" + tok + "'");
  }
  return v;
}

}  // namespace

void SequenceBundle::validate() const {
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (!(frames[i].timestamp > frames[i - 1].timestamp)) {
      throw FormatError("timestamps not strictly increasing at frame " + std::to_string(i));
    }
  }
  if (gt_poses && gt_poses->size() != frames.size()) {
    throw FormatError("ground truth has " + std::to_string(gt_poses->size()) + " poses for " +
                      std::to_string(frames.size()) + " frames");
  }
}

PointCloud read_point_bin(const fs::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() % 16 != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of 16 bytes");
  }
  PointCloud cloud;
  const std::size_t n = bytes.size() / 16;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const char* rec = bytes.data() + i * 16;
    const double x = load_f32_le(rec);
    const double y = load_f32_le(rec + 4);
    const double z = load_f32_le(rec + 8);
    const double r = load_f32_le(rec + 12);
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
      ++cloud.dropped;
      continue;
    }
    cloud.points.emplace_back(x, y, z);
    cloud.intensity.push_back(r);
  }
  return cloud;
}

void write_point_bin(const PointCloud& cloud, const fs::path& path) {
  std::vector<char> bytes(cloud.size() * 16);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    char* rec = bytes.data() + i * 16;
    store_f32_le(static_cast<float>(cloud.points[i].x()), rec);
    store_f32_le(static_cast<float>(cloud.points[i].y()), rec + 4);
    store_f32_le(static_cast<float>(cloud.points[i].z()), rec + 8);
    store_f32_le(static_cast<float>(cloud.intensity.empty() ? 0.0 : cloud.intensity[i]), rec + 12);
  }
  auto out = open_out(path, true);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<RigidMotion> read_poses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<RigidMotion> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (toks.size() != 12) {
      throw FormatError(where + ": expected 12 values, got " + std::to_string(toks.size()));
    }
    std::vector<double> v;
    for (auto t : toks) v.push_back(parse_double(t, where));
    try {
      poses.push_back(RigidMotion::from_matrix(rows_to_matrix(v)));
    } catch (const GeometryError& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return poses;
}

std::string format_pose_line(const RigidMotion& pose) {
  const Mat4 m = pose.to_matrix();
  std::string line;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (!line.empty()) line += ' ';
      line += fmt::format("{:.12e}", m(r, c));
    }
  }
  return line;
}

void write_trajectory(const std::vector<RigidMotion>& poses, const fs::path& path) {
  auto out = open_out(path, false);
  for (const auto& p : poses) out << format_pose_line(p) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<CameraModel> read_calib(const fs::path& path, const std::string& camera_key) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, std::vector<double>> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const auto key_toks = split_ws(std::string_view(line).substr(0, colon));
    if (key_toks.size() != 1) continue;
    const std::string key(key_toks.front());
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::vector<double> v;
    for (auto t : split_ws(std::string_view(line).substr(colon + 1))) v.push_back(parse_double(t, where));
    entries[key] = std::move(v);
  }
  for (const std::string& key : {camera_key, std::string("Tr")}) {
    auto it = entries.find(key);
    if (it == entries.end()) throw FormatError(path.string() + ": missing key " + key);
    if (it->second.size() != 12) {
      throw FormatError(path.string() + ": key " + key + " needs 12 values");
    }
  }
  const Mat4 p = rows_to_matrix(entries.at(camera_key));
  const Mat4 tr = rows_to_matrix(entries.at("Tr"));

  CameraModel cam;
  cam.intrinsics = p.topLeftCorner<3, 3>();
  cam.intrinsics(2, 0) = 0.0;
  cam.intrinsics(2, 1) = 0.0;
  cam.validate();
  RigidMotion offset;
  offset.translation = cam.intrinsics.inverse() * p.topRightCorner<3, 1>();
  RigidMotion lidar_to_cam0;
  try {
    lidar_to_cam0 = RigidMotion::from_matrix(tr);
  } catch (const GeometryError& e) {
    throw FormatError(path.string() + ": Tr: " + e.what());
  }
  cam.extrinsic = offset.compose(lidar_to_cam0);
  return {cam};
}

void write_calib(const CameraModel& cam, const fs::path& path) {
  auto out = open_out(path, false);
  Mat4 p = Mat4::Zero();
  p.topLeftCorner<3, 3>() = cam.intrinsics;
  auto row12 = [](const Mat4& m) {
    std::string s;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) s += fmt::format(" {:.12e}", m(r, c));
    return s;
  };
  for (int k = 0; k < 4; ++k) out << "P" << k << ":" << row12(p) << '\n';
  out << "Tr:" << row12(cam.extrinsic.to_matrix()) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

ImageRaster read_image_raster(const fs::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError(path.string() +
                      ": unsupported image format; convert to binary PGM/PPM (P5/P6) offline");
  }
  ImageRaster img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  img.width = parse_pnm_int(next_pnm_token(bytes, pos), path);
  img.height = parse_pnm_int(next_pnm_token(bytes, pos), path);
  const int maxval = parse_pnm_int(next_pnm_token(bytes, pos), path);
  if (maxval != 255) throw FormatError(path.string() + ": only 8-bit rasters (maxval 255) supported");
  ++pos;  // single whitespace byte before the pixel data
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (bytes.size() < pos + count) throw FormatError(path.string() + ": truncated pixel data");
  img.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    img.data[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  }
  return img;
}

void write_image_raster(const ImageRaster& img, const fs::path& path) {
  if (img.channels != 1 && img.channels != 3) throw FormatError("raster must have 1 or 3 channels");
  auto out = open_out(path, true);
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> px(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::clamp(img.data[i], 0.0, 1.0);
    px[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(px.data(), static_cast<std::streamsize>(px.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<double> read_times(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> times;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    times.push_back(parse_double(toks.front(), path.string() + ":" + std::to_string(line_no)));
  }
  return times;
}

fs::path SequenceLayout::image_dir(const std::string& camera_key) const {
  // P0 -> image_0, P2 -> image_2, ...
  return sequence_dir() / ("image_" + camera_key.substr(1));
}

namespace {

std::vector<fs::path> sorted_files(const fs::path& dir, const std::vector<std::string>& exts) {
  if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (std::find(exts.begin(), exts.end(), ext) != exts.end()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

SequenceBundle load_sequence(const SequenceLayout& layout, const std::string& camera_key) {
  SequenceBundle bundle;
  const auto scans = sorted_files(layout.velodyne_dir(), {".bin"});
  const auto images = sorted_files(layout.image_dir(camera_key), {".pgm", ".ppm"});
  if (scans.size() != images.size()) {
    throw FormatError("frame count mismatch: " + std::to_string(scans.size()) + " scans vs " +
                      std::to_string(images.size()) + " images");
  }
  std::vector<double> times;
  if (fs::exists(layout.times_file())) {
    times = read_times(layout.times_file());
    if (times.size() != scans.size()) {
      throw FormatError("times.txt has " + std::to_string(times.size()) + " entries for " +
                        std::to_string(scans.size()) + " frames");
    }
  }
  bundle.frames.resize(scans.size());
  for (std::size_t i = 0; i < scans.size(); ++i) {
    bundle.frames[i].cloud = read_point_bin(scans[i]);
    bundle.frames[i].image = read_image_raster(images[i]);
    bundle.frames[i].timestamp = times.empty() ? 0.1 * static_cast<double>(i) : times[i];
  }
  bundle.cameras = read_calib(layout.calib_file(), camera_key);
  if (!bundle.frames.empty()) {
    for (auto& cam : bundle.cameras) {
      cam.width = bundle.frames.front().image.width;
      cam.height = bundle.frames.front().image.height;
    }
  }
  if (fs::exists(layout.poses_file())) bundle.gt_poses = read_poses(layout.poses_file());
  bundle.validate();
  return bundle;
}

void save_sequence(const SequenceBundle& bundle, const SequenceLayout& layout,
                   const std::string& camera_key) {
  for (std::size_t i = 0; i < bundle.frames.size(); ++i) {
    const std::string stem = fmt::format("{:06d}", i);
    write_point_bin(bundle.frames[i].cloud, layout.velodyne_dir() / (stem + ".bin"));
    const auto& img = bundle.frames[i].image;
    write_image_raster(img, layout.image_dir(camera_key) / (stem + (img.channels == 1 ? ".pgm" : ".ppm")));
  }
  if (!bundle.cameras.empty()) write_calib(bundle.cameras.front(), layout.calib_file());
  {
    auto out = open_out(layout.times_file(), false);
    for (const auto& f : bundle.frames) out << fmt::format("{:.6e}", f.timestamp) << '\n';
  }
  if (bundle.gt_poses) write_trajectory(*bundle.gt_poses, layout.poses_file());
}

}  // namespace dvlo
