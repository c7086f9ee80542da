#include "dvlo/dataio.hpp"
#include "dvlo/synth.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

using namespace dvlo;
namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  f << bytes;
}

void write_file(const fs::path& p, const std::string& text) { write_bytes(p, text); }

std::string floats(std::initializer_list<float> v) {
  std::string s(v.size() * 4, '\0');
  std::size_t k = 0;
  for (float x : v) {
    std::memcpy(&s[k], &x, 4);  // little-endian host
    k += 4;
  }
  return s;
}

std::string expect_format_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no FormatError";
  return {};
}

}  // namespace

TEST(PointBin, HandBuiltFixture) {
  const auto dir = testkit::scratch_dir("pointbin");
  const std::string bytes = floats({1, 2, 3, 0.5f, -1, 0, 2, 0});
  ASSERT_EQ(bytes.size(), 32u);
  write_bytes(dir / "a.bin", bytes);
  const PointCloud c = read_point_bin(dir / "a.bin");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.points[0], Vec3(1, 2, 3));
  EXPECT_EQ(c.points[1], Vec3(-1, 0, 2));
  EXPECT_EQ(c.intensity, (std::vector<double>{0.5, 0.0}));
}

TEST(PointBin, EmptyFileIsEmptyCloud) {
  const auto dir = testkit::scratch_dir("pointbin_empty");
  write_bytes(dir / "e.bin", "");
  EXPECT_TRUE(read_point_bin(dir / "e.bin").empty());
}

TEST(PointBin, BadLengthAndMissingFile) {
  const auto dir = testkit::scratch_dir("pointbin_bad");
  write_bytes(dir / "b.bin", std::string(17, 'x'));
  EXPECT_THROW(read_point_bin(dir / "b.bin"), FormatError);
  EXPECT_THROW(read_point_bin(dir / "missing.bin"), IoError);
}

TEST(PointBin, NonFinitePointsAreDroppedAndCounted) {
  const auto dir = testkit::scratch_dir("pointbin_nan");
  const float nan = std::numeric_limits<float>::quiet_NaN();
  write_bytes(dir / "n.bin", floats({1, 1, 1, 0, nan, 0, 0, 0}));
  const PointCloud c = read_point_bin(dir / "n.bin");
  EXPECT_EQ(c.size(), 1u);
  EXPECT_EQ(c.dropped, 1u);
}

TEST(PointBin, RoundTrip) {
  const auto dir = testkit::scratch_dir("pointbin_rt");
  PointCloud c;
  c.points = {{1.5, -2.25, 0.125}, {3, 4, 5}};
  c.intensity = {0.25, 1.0};
  write_point_bin(c, dir / "r.bin");
  const PointCloud back = read_point_bin(dir / "r.bin");
  EXPECT_EQ(back.points, c.points);
  EXPECT_EQ(back.intensity, c.intensity);
}

TEST(Poses, IdentityAndTranslationLines) {
  const auto dir = testkit::scratch_dir("poses");
  write_file(dir / "p.txt", "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 4 0 1 0 5 0 0 1 6\n");
  const auto poses = read_poses(dir / "p.txt");
  ASSERT_EQ(poses.size(), 2u);
  EXPECT_EQ(poses[0].rotation, Quaternion::identity());
  EXPECT_EQ(poses[0].translation, Vec3::Zero());
  EXPECT_EQ(poses[1].translation, Vec3(4, 5, 6));
}

TEST(Poses, WrongTokenCountNamesLine) {
  const auto dir = testkit::scratch_dir("poses_bad");
  write_file(dir / "p.txt", "1 0 0 0 0 1 0 0 0 0 1\n");
  const std::string msg = expect_format_error([&] { read_poses(dir / "p.txt"); });
  EXPECT_NE(msg.find(":1"), std::string::npos) << msg;
}

TEST(Poses, NonOrthonormalRotationRejected) {
  const auto dir = testkit::scratch_dir("poses_rot");
  write_file(dir / "p.txt", "1 0.1 0 0 0 1 0 0 0 0 1 0\n");
  EXPECT_THROW(read_poses(dir / "p.txt"), FormatError);
}

TEST(Trajectory, WriteIdentityAndEmpty) {
  const auto dir = testkit::scratch_dir("traj");
  write_trajectory(std::vector<RigidMotion>(3), dir / "i.txt");
  std::ifstream in(dir / "i.txt");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    EXPECT_EQ(line, format_pose_line(RigidMotion::identity()));
  }
  EXPECT_EQ(n, 3);
  write_trajectory({}, dir / "e.txt");
  EXPECT_EQ(fs::file_size(dir / "e.txt"), 0u);
}

TEST(Trajectory, RandomRoundTrip) {
  const auto dir = testkit::scratch_dir("traj_rt");
  Rng rng(5);
  std::vector<RigidMotion> poses;
  for (int i = 0; i < 50; ++i) poses.push_back(testkit::random_motion(rng, 100.0));
  write_trajectory(poses, dir / "r.txt");
  const auto back = read_poses(dir / "r.txt");
  ASSERT_EQ(back.size(), poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    EXPECT_LT((back[i].to_matrix() - poses[i].to_matrix()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

namespace {

const char* kRow = "1 0 0 0 0 1 0 0 0 0 1 0";

}  // namespace

TEST(Calib, PlainProjectionGivesIntrinsics) {
  const auto dir = testkit::scratch_dir("calib");
  write_file(dir / "calib.txt", std::string("P0: ") + kRow + "\nP2: 700 0 600 0 0 710 180 0 0 0 1 0\nTr: " + kRow +
                                    "\n");
  const auto cams = read_calib(dir / "calib.txt");
  ASSERT_EQ(cams.size(), 1u);
  EXPECT_DOUBLE_EQ(cams[0].fx(), 700.0);
  EXPECT_DOUBLE_EQ(cams[0].fy(), 710.0);
  EXPECT_DOUBLE_EQ(cams[0].cx(), 600.0);
  EXPECT_DOUBLE_EQ(cams[0].cy(), 180.0);
  EXPECT_EQ(cams[0].extrinsic.translation, Vec3::Zero());
  EXPECT_EQ(cams[0].extrinsic.rotation, Quaternion::identity());
}

TEST(Calib, FourthColumnBecomesCameraOffset) {
  const auto dir = testkit::scratch_dir("calib_offset");
  // KITTI-like P2 and a rotated Tr.
  Eigen::Matrix<double, 3, 4> p;
  p << 721.5, 0, 609.6, 44.86, 0, 721.5, 172.9, 0.2164, 0, 0, 1, 0.002746;
  Mat3 base;
  base << 0, -1, 0, 0, 0, -1, 1, 0, 0;  // LiDAR x forward -> camera z forward
  const Mat3 r = testkit::axis_angle_matrix(Vec3(0.2, -1.0, 0.3), 0.05) * base;
  const Vec3 t(-0.004, -0.076, -0.27);
  auto row = [](const Eigen::Matrix<double, 3, 4>& m) {
    std::string s;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) s += " " + std::to_string(m(i, j));
    return s;
  };
  Eigen::Matrix<double, 3, 4> tr;
  tr << r, t;
  // std::to_string keeps 6 decimals; reuse the printed values as ground truth.
  write_file(dir / "calib.txt", "P2:" + row(p) + "\nTr:" + row(tr) + "\n");
  const auto cams = read_calib(dir / "calib.txt");
  // Re-project a test point straight through P2 * Tr and compare.
  Eigen::Matrix<double, 3, 4> tr_read;
  {
    std::istringstream ss(row(tr));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) ss >> tr_read(i, j);
  }
  Mat4 tr4 = Mat4::Identity();
  tr4.topRows<3>() = tr_read;
  Eigen::Matrix<double, 3, 4> p_read;
  {
    std::istringstream ss(row(p));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) ss >> p_read(i, j);
  }
  CameraModel cam = cams[0];
  cam.width = 1242;
  cam.height = 375;
  for (const Vec3& x : {Vec3(10, 1, -0.5), Vec3(25, -4, 1.0), Vec3(6, 0.3, 0.2)}) {
    const Vec3 h = p_read * tr4 * Eigen::Vector4d(x.x(), x.y(), x.z(), 1.0);
    const Projection pr = camera_project(x, cam);
    // Tr carries 6-decimal rotations, so compare at the same resolution.
    EXPECT_NEAR(pr.px, h.x() / h.z(), 1e-3);
    EXPECT_NEAR(pr.py, h.y() / h.z(), 1e-3);
  }
  // Pure camera-frame offset: with Tr = I the x translation is P2[0,3] / fx.
  write_file(dir / "calib2.txt", "P2:" + row(p) + "\nTr: " + kRow + "\n");
  const auto c2 = read_calib(dir / "calib2.txt");
  EXPECT_NEAR(c2[0].extrinsic.translation.z(), 0.002746, 1e-12);
  EXPECT_NEAR(c2[0].extrinsic.translation.x(), (44.86 - 609.6 * 0.002746) / 721.5, 1e-12);
}

TEST(Calib, MissingTrIsNamed) {
  const auto dir = testkit::scratch_dir("calib_missing");
  write_file(dir / "calib.txt", std::string("P2: ") + kRow + "\n");
  const std::string msg = expect_format_error([&] { read_calib(dir / "calib.txt"); });
  EXPECT_NE(msg.find("Tr"), std::string::npos);
}

TEST(Raster, GrayPgm) {
  const auto dir = testkit::scratch_dir("pgm");
  write_bytes(dir / "a.pgm", std::string("P5\n2 2\n255\n") + std::string("\x00\xff\x80\x40", 4));
  const ImageRaster img = read_image_raster(dir / "a.pgm");
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.channels, 1);
  EXPECT_EQ(img.data[0], 0.0);
  EXPECT_EQ(img.data[1], 1.0);
  EXPECT_NEAR(img.data[2], 0.50196, 1e-5);
  EXPECT_NEAR(img.data[3], 0.25098, 1e-5);
}

TEST(Raster, WhitePpmPixel) {
  const auto dir = testkit::scratch_dir("ppm");
  write_bytes(dir / "w.ppm", std::string("P6\n1 1\n255\n\xff\xff\xff"));
  const ImageRaster img = read_image_raster(dir / "w.ppm");
  EXPECT_EQ(img.channels, 3);
  EXPECT_EQ(img.data, (std::vector<double>{1, 1, 1}));
}

TEST(Raster, PngIsRejectedWithConversionHint) {
  const auto dir = testkit::scratch_dir("png");
  write_bytes(dir / "x.png", std::string("\x89PNG\r\n\x1a\n", 8));
  const std::string msg = expect_format_error([&] { read_image_raster(dir / "x.png"); });
  EXPECT_NE(msg.find("convert"), std::string::npos) << msg;
}

TEST(Sequence, SaveLoadRoundTrip) {
  const auto dir = testkit::scratch_dir("seq");
  SynthOptions opt;
  opt.frames = 3;
  const SequenceBundle seq = generate_sequence(opt);
  save_sequence(seq, {dir, "04"});
  const SequenceBundle back = load_sequence({dir, "04"});
  ASSERT_EQ(back.frames.size(), 3u);
  ASSERT_TRUE(back.gt_poses.has_value());
  EXPECT_EQ(back.frames[1].cloud.size(), seq.frames[1].cloud.size());
  EXPECT_EQ(back.frames[2].image.data, seq.frames[2].image.data);
  EXPECT_NEAR(back.frames[2].timestamp, 0.2, 1e-9);
  EXPECT_LT((back.cameras[0].intrinsics - seq.cameras[0].intrinsics).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(back.cameras[0].width, seq.cameras[0].width);
}

TEST(Sequence, ModalityCountMismatch) {
  const auto dir = testkit::scratch_dir("seq_mismatch");
  SynthOptions opt;
  opt.frames = 2;
  save_sequence(generate_sequence(opt), {dir, "00"});
  fs::remove(SequenceLayout{dir, "00"}.image_dir("P2") / "000001.pgm");
  EXPECT_THROW(load_sequence({dir, "00"}), FormatError);
}

TEST(Sequence, ValidateRejectsNonIncreasingTimes) {
  SynthOptions opt;
  opt.frames = 3;
  SequenceBundle seq = generate_sequence(opt);
  seq.frames[2].timestamp = seq.frames[1].timestamp;
  EXPECT_THROW(seq.validate(), FormatError);
}
