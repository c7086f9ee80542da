#include "dvlo/eval.hpp"

#include "dvlo/params.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <fmt/format.h>

#include <charconv>
#include <cmath>

namespace dvlo {

Trajectory Trajectory::from_poses(std::vector<RigidMotion> poses) {
  Trajectory t;
  t.poses = std::move(poses);
  t.path_length.resize(t.poses.size(), 0.0);
  for (std::size_t i = 1; i < t.poses.size(); ++i) {
    t.path_length[i] = t.path_length[i - 1] + (t.poses[i].translation - t.poses[i - 1].translation).norm();
  }
  return t;
}

Trajectory accumulate(const std::vector<RigidMotion>& relative) {
  std::vector<RigidMotion> poses{RigidMotion::identity()};
  for (const auto& r : relative) poses.push_back(poses.back().compose(r));
  return Trajectory::from_poses(std::move(poses));
}

Trajectory trajectory_from_estimates(const std::vector<RigidMotion>& estimates) {
  std::vector<RigidMotion> rel;
  rel.reserve(estimates.size());
  for (const auto& e : estimates) rel.push_back(e.inverse());
  return accumulate(rel);
}

namespace {

void require_same_length(const Trajectory& est, const Trajectory& gt, std::size_t min) {
  if (est.size() != gt.size()) {
    throw MetricError(fmt::format("trajectory lengths differ: estimate {} poses, ground truth {}", est.size(),
                                  gt.size()));
  }
  if (est.size() < min) throw MetricError(fmt::format("need at least {} poses, got {}", min, est.size()));
}

constexpr double kRadToDeg = 180.0 / M_PI;

}  // namespace

RelErrors kitti_rel_errors(const Trajectory& est, const Trajectory& gt, const std::vector<double>& lengths) {
  require_same_length(est, gt, 2);
  RelErrors out;
  double t_sum = 0.0, r_sum = 0.0;
  for (double len : lengths) {
    SegmentStats st;
    st.length = len;
    for (std::size_t s = 0; s < gt.size(); ++s) {
      std::size_t e = s + 1;
      while (e < gt.size() && !(gt.path_length[e] > gt.path_length[s] + len)) ++e;
      if (e >= gt.size()) break;  // later starts cannot fit either
      const double covered = gt.path_length[e] - gt.path_length[s];
      const RigidMotion gt_rel = gt.poses[s].inverse().compose(gt.poses[e]);
      const RigidMotion est_rel = est.poses[s].inverse().compose(est.poses[e]);
      const RigidMotion err = gt_rel.inverse().compose(est_rel);
      const double t_err = err.translation.norm() / covered;
      const double r_err = rotation_angle(err.rotation) / covered;
      st.t_rel += t_err;
      st.r_rel += r_err;
      ++st.count;
      t_sum += t_err;
      r_sum += r_err;
    }
    if (st.count > 0) {
      st.t_rel = 100.0 * st.t_rel / st.count;
      st.r_rel = 100.0 * kRadToDeg * st.r_rel / st.count;
      out.segments += st.count;
      out.per_length.push_back(st);
    }
  }
  if (out.segments == 0) throw MetricError("trajectory too short for any evaluation segment");
  out.t_rel = 100.0 * t_sum / out.segments;
  out.r_rel = 100.0 * kRadToDeg * r_sum / out.segments;
  return out;
}

RigidMotion align_rigid(const std::vector<Vec3>& est, const std::vector<Vec3>& gt) {
  const std::size_t n = est.size();
  Vec3 mu_e = Vec3::Zero(), mu_g = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_e += est[i];
    mu_g += gt[i];
  }
  mu_e /= static_cast<double>(n);
  mu_g /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) cov += (gt[i] - mu_g) * (est[i] - mu_e).transpose();

  Mat3 r = Mat3::Identity();
  if (cov.norm() > 1e-12) {
    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 s = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s(2, 2) = -1.0;
    r = svd.matrixU() * s * svd.matrixV().transpose();
  }
  RigidMotion a;
  a.rotation = quat_from_rotation(r);
  a.translation = mu_g - r * mu_e;
  return a;
}

double ate(const Trajectory& est, const Trajectory& gt) {
  require_same_length(est, gt, 1);
  std::vector<Vec3> pe, pg;
  for (std::size_t i = 0; i < est.size(); ++i) {
    pe.push_back(est.poses[i].translation);
    pg.push_back(gt.poses[i].translation);
  }
  const RigidMotion a = align_rigid(pe, pg);
  const Mat3 r = a.rotation.to_matrix();
  double sq = 0.0;
  for (std::size_t i = 0; i < pe.size(); ++i) sq += (pg[i] - (r * pe[i] + a.translation)).squaredNorm();
  return std::sqrt(sq / static_cast<double>(pe.size()));
}

double rpe(const Trajectory& est, const Trajectory& gt) {
  require_same_length(est, gt, 2);
  double sq = 0.0;
  for (std::size_t i = 0; i + 1 < est.size(); ++i) {
    const RigidMotion g = gt.poses[i].inverse().compose(gt.poses[i + 1]);
    const RigidMotion e = est.poses[i].inverse().compose(est.poses[i + 1]);
    sq += g.inverse().compose(e).translation.squaredNorm();
  }
  return std::sqrt(sq / static_cast<double>(est.size() - 1));
}

MetricReport evaluate(const Trajectory& est, const Trajectory& gt) {
  require_same_length(est, gt, 2);
  MetricReport rep;
  try {
    const RelErrors rel = kitti_rel_errors(est, gt);
    rep.t_rel = rel.t_rel;
    rep.r_rel = rel.r_rel;
    rep.segments = rel.segments;
    rep.per_length = rel.per_length;
  } catch (const MetricError&) {
    // Shorter than the shortest segment: relative errors stay at zero.
  }
  rep.ate = ate(est, gt);
  rep.rpe = rpe(est, gt);
  return rep;
}

std::string MetricReport::to_text() const {
  std::string s = fmt::format("t_rel = {:.6f}\nr_rel = {:.6f}\nate = {:.6f}\nrpe = {:.6f}\nsegments = {}\n", t_rel,
                              r_rel, ate, rpe, segments);
  for (const auto& p : per_length) {
    s += fmt::format("t_rel_{:.0f} = {:.6f}\nr_rel_{:.0f} = {:.6f}\n", p.length, p.t_rel, p.length, p.r_rel);
  }
  return s;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j{{"t_rel", t_rel}, {"r_rel", r_rel}, {"ate", ate}, {"rpe", rpe}, {"segments", segments}};
  j["per_length"] = nlohmann::json::array();
  for (const auto& p : per_length) {
    j["per_length"].push_back({{"length", p.length}, {"count", p.count}, {"t_rel", p.t_rel}, {"r_rel", p.r_rel}});
  }
  return j;
}

PerturbMode PerturbMode::parse(const std::string& text) {
  PerturbMode m;
  if (text.empty() || text == "none") return m;
  if (text == "half-rate") {
    m.kind = Kind::kHalfRate;
    return m;
  }
  if (text.rfind("gauss:", 0) == 0) {
    const std::string num = text.substr(6);
    double sigma = 0.0;
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), sigma);
    if (ec != std::errc() || ptr != num.data() + num.size() || !(sigma >= 0.0) || !std::isfinite(sigma)) {
      throw ConfigError("invalid gaussian sigma '" + num + "'");
    }
    m.kind = Kind::kGaussian;
    m.sigma = sigma;
    return m;
  }
  throw ConfigError("unknown perturbation '" + text + "' (expected half-rate or gauss:<sigma>)");
}

SequenceBundle perturb(const SequenceBundle& bundle, const PerturbMode& mode, std::uint64_t seed) {
  switch (mode.kind) {
    case PerturbMode::Kind::kNone:
      return bundle;
    case PerturbMode::Kind::kHalfRate: {
      // Every other scan, each kept with its own image; ground truth follows.
      SequenceBundle out;
      out.cameras = bundle.cameras;
      for (std::size_t i = 0; i < bundle.frames.size(); i += 2) out.frames.push_back(bundle.frames[i]);
      if (bundle.gt_poses) {
        std::vector<RigidMotion> gt;
        for (std::size_t i = 0; i < bundle.gt_poses->size(); i += 2) gt.push_back((*bundle.gt_poses)[i]);
        out.gt_poses = std::move(gt);
      }
      return out;
    }
    case PerturbMode::Kind::kGaussian: {
      SequenceBundle out = bundle;
      if (mode.sigma == 0.0) return out;
      Rng rng(seed);
      for (auto& f : out.frames) {
        for (auto& p : f.cloud.points) {
          for (int a = 0; a < 3; ++a) p[a] += mode.sigma * rng.normal();
        }
      }
      return out;
    }
  }
  throw ConfigError("unknown perturbation");
}

}  // namespace dvlo
