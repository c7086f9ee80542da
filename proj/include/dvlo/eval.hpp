#pragma once

#include "dvlo/dataio.hpp"
#include "dvlo/geom.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace dvlo {

/// Absolute poses (world <- frame) with cumulative path length.
struct Trajectory {
  std::vector<RigidMotion> poses;
  std::vector<double> path_length;  // meters travelled up to each pose

  static Trajectory from_poses(std::vector<RigidMotion> poses);
  std::size_t size() const { return poses.size(); }
};

/// pose_0 = identity, pose_{i+1} = pose_i ∘ rel_i.
Trajectory accumulate(const std::vector<RigidMotion>& relative);

/// Odometry output to trajectory: each estimate maps frame i into frame
/// i+1, so the frame-to-frame motion is its inverse.
Trajectory trajectory_from_estimates(const std::vector<RigidMotion>& estimates);

struct SegmentStats {
  double length = 0.0;
  int count = 0;
  double t_rel = 0.0;  // percent
  double r_rel = 0.0;  // degrees per 100 m
};

struct MetricReport {
  double t_rel = 0.0;
  double r_rel = 0.0;
  double ate = 0.0;
  double rpe = 0.0;
  int segments = 0;
  std::vector<SegmentStats> per_length;

  std::string to_text() const;
  nlohmann::json to_json() const;
};

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RelErrors {
  double t_rel = 0.0;
  double r_rel = 0.0;
  int segments = 0;
  std::vector<SegmentStats> per_length;
};

/// Segment errors over lengths 100..800 m from every start frame. The end
/// frame is the first whose ground-truth path length exceeds start + length;
/// errors are normalized by the ground-truth distance actually covered.
/// Throws MetricError when no segment fits.
RelErrors kitti_rel_errors(const Trajectory& est, const Trajectory& gt,
                           const std::vector<double>& lengths = {100, 200, 300, 400, 500, 600, 700, 800});

/// Least-squares rigid alignment (rotation + translation) of est positions
/// onto gt positions: returns the motion A minimizing sum |gt_i - A est_i|^2.
RigidMotion align_rigid(const std::vector<Vec3>& est, const std::vector<Vec3>& gt);

double ate(const Trajectory& est, const Trajectory& gt);
double rpe(const Trajectory& est, const Trajectory& gt);

/// All metrics; t_rel/r_rel are zero with segments = 0 when the trajectory
/// is shorter than the shortest segment length.
MetricReport evaluate(const Trajectory& est, const Trajectory& gt);

struct PerturbMode {
  enum class Kind { kNone, kHalfRate, kGaussian } kind = Kind::kNone;
  double sigma = 0.0;

  /// "half-rate" or "gauss:<sigma>".
  static PerturbMode parse(const std::string& text);
};

SequenceBundle perturb(const SequenceBundle& bundle, const PerturbMode& mode, std::uint64_t seed);

}  // namespace dvlo
