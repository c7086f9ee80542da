#include "dvlo/verify.hpp"

#include "dvlo/eval.hpp"
#include "dvlo/fusion.hpp"
#include "dvlo/layers.hpp"
#include "dvlo/model.hpp"
#include "dvlo/synth.hpp"
#include "dvlo/training.hpp"

#include <fmt/format.h>

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

namespace dvlo {

bool SuiteResult::passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

Config toy_config() {
  Config cfg;
  cfg.encoder.channels = 4;
  cfg.encoder.levels = 2;
  cfg.encoder.query_counts = {3, 6};
  cfg.pose.levels = 2;
  cfg.pose.knn = 3;
  cfg.pseudo_image.h = 4;
  cfg.pseudo_image.w = 32;
  cfg.pseudo_image.delta_theta = 2.0 * M_PI / 32.0;
  cfg.pseudo_image.delta_phi = 6.0 * M_PI / 180.0;
  cfg.fusion.samples_per_query = 2;
  cfg.fusion.heads = 2;
  cfg.temporal.ego_dim = 8;
  cfg.temporal.heads = 2;
  cfg.temporal.t_h = 4;
  cfg.train.alpha = {1.6, 0.8};
  cfg.train.t_c = 6;
  cfg.train.t_s = 2;
  cfg.validate();
  return cfg;
}

SequenceBundle toy_sequence(int frames, std::uint64_t seed) {
  const Config cfg = toy_config();
  SynthOptions opt;
  opt.frames = frames;
  opt.seed = seed;
  opt.path = "wave";
  opt.lidar = cfg.pseudo_image.params();
  opt.image_width = 32;
  opt.image_height = 16;
  opt.boxes = 16;
  return generate_sequence(opt);
}

void randomize_params(ModelParams& params, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& e : params.entries())
    for (double& v : e.var.mutable_value()) v = scale * rng.normal();
}

std::vector<std::string> verify_suite_names() { return {"geometry", "fusion", "gradcheck", "metrics"}; }

namespace {

Quaternion random_unit_quat(Rng& rng) {
  Quaternion q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  return q.normalized();
}

RigidMotion random_motion(Rng& rng, double scale) {
  return {random_unit_quat(rng), Vec3(rng.normal(), rng.normal(), rng.normal()) * scale};
}

SuiteResult geometry_suite(std::uint64_t seed) {
  SuiteResult r{"geometry", {}};
  Rng rng(seed);
  double compose_err = 0.0, round_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const RigidMotion delta = random_motion(rng, 1.0);
    const RigidMotion prior = random_motion(rng, 5.0);
    const Mat4 expect = delta.to_matrix() * prior.to_matrix();
    compose_err = std::max(compose_err, (compose_residual(delta, prior).to_matrix() - expect).cwiseAbs().maxCoeff());
    const Quaternion q = random_unit_quat(rng);
    round_err = std::max(round_err, rotation_distance(quat_from_rotation(q.to_matrix()), q));
  }
  r.checks.push_back({"compose_residual vs 4x4 product (1000 draws)", compose_err < 1e-9,
                      fmt::format("max abs error {:.3g}", compose_err)});
  r.checks.push_back({"quaternion -> matrix -> quaternion (1000 draws)", round_err < 1e-9,
                      fmt::format("max distance {:.3g}", round_err)});
  return r;
}

// Direct loop evaluation of the weighted sampling sum.
double loop_bilinear(const FeatureMap& m, double x, double y, int c) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const int xi = x0 + dx, yi = y0 + dy;
      if (xi < 0 || yi < 0 || xi >= m.width || yi >= m.height) continue;
      const double w = (dx ? x - x0 : 1.0 - (x - x0)) * (dy ? y - y0 : 1.0 - (y - y0));
      acc += w * m.data(yi * m.width + xi, c);
    }
  return acc;
}

SuiteResult fusion_suite(std::uint64_t seed) {
  SuiteResult r{"fusion", {}};
  Rng rng(seed);
  double worst = 0.0;
  int instances = 0;
  for (int n = 1; n <= 8; ++n) {
    for (int m = 1; m <= 4; ++m) {
      for (int nc = 1; nc <= 2; ++nc) {
        Config cfg = toy_config();
        cfg.fusion.samples_per_query = m;
        cfg.fusion.cameras = nc;
        ModelParams params = init_params(cfg, rng.engine()());
        randomize_params(params, rng.engine()(), 0.5);
        QuerySet q;
        q.level = 0;
        std::vector<double> feats;
        for (int i = 0; i < n; ++i) {
          q.positions.emplace_back(rng.uniform(2.0, 20.0), rng.uniform(-5.0, 5.0), rng.uniform(-1.5, 1.5));
          q.valid.push_back(true);
          q.pixel_anchors.push_back({0.0, 0.0});
          for (int c = 0; c < cfg.encoder.channels; ++c) feats.push_back(rng.normal());
        }
        q.features = ad::Var::constant(n, cfg.encoder.channels, feats);
        std::vector<CameraModel> cams;
        std::vector<FeatureMap> maps;
        for (int k = 0; k < nc; ++k) {
          SynthOptions so;
          so.image_width = 32;
          so.image_height = 16;
          CameraModel cam = synth_camera(so);
          cam.extrinsic = RigidMotion{Quaternion::from_axis_angle(Vec3::UnitZ(), 0.3 * k), Vec3::Zero()}
                              .compose(cam.extrinsic);
          cams.push_back(cam);
          FeatureMap fm{0, 8, 16, cfg.encoder.channels, 2, {}};
          std::vector<double> v(static_cast<std::size_t>(8 * 16 * cfg.encoder.channels));
          for (double& x : v) x = rng.normal();
          fm.data = ad::Var::constant(8 * 16, cfg.encoder.channels, v);
          maps.push_back(fm);
        }
        const SamplePlan plan = plan_samples(q, params, cfg);
        const SampledFeatures got = sample_fuse(q, maps, cams, plan);
        for (int i = 0; i < n; ++i) {
          for (int c = 0; c < cfg.encoder.channels; ++c) {
            double expect = 0.0;
            for (int k = 0; k < nc; ++k) {
              const Projection pr = camera_project(q.positions[static_cast<std::size_t>(i)], cams[k]);
              if (pr.depth <= 0.0) continue;
              for (int j = 0; j < m; ++j) {
                const double x = pr.px / maps[k].stride + plan.offset(i, k, j, 0);
                const double y = pr.py / maps[k].stride + plan.offset(i, k, j, 1);
                expect += plan.weight(i, k, j) * loop_bilinear(maps[k], x, y, c);
              }
            }
            worst = std::max(worst, std::abs(expect - got.weighted(i, c)));
          }
        }
        ++instances;
      }
    }
  }
  r.checks.push_back({fmt::format("sample_fuse vs loop sum ({} instances)", instances), worst < 1e-6,
                      fmt::format("max abs error {:.3g}", worst)});
  return r;
}

struct GradCase {
  std::string name;
  double tol;
  std::function<GradCheckReport()> run;
};

std::vector<std::pair<std::string, ad::Var>> params_with_prefix(const ModelParams& p,
                                                                const std::vector<std::string>& prefixes) {
  std::vector<std::pair<std::string, ad::Var>> out;
  for (const auto& e : p.entries())
    for (const auto& pre : prefixes)
      if (e.name.rfind(pre, 0) == 0) {
        out.emplace_back(e.name, e.var);
        break;
      }
  return out;
}

ad::Var param_from(Rng& rng, int rows, int cols, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = scale * rng.normal();
  return ad::Var::parameter(rows, cols, std::move(v));
}

ad::Var pose_row(const PoseVar& p) { return ad::concat_cols({p.q, p.t}); }

SuiteResult gradcheck_suite(std::uint64_t seed) {
  constexpr double h = 1e-6;
  SuiteResult r{"gradcheck", {}};
  const Config cfg = toy_config();
  ModelParams params = init_params(cfg, seed);
  randomize_params(params, seed + 1, 0.4);
  Rng rng(seed + 2);
  const SequenceBundle seq = toy_sequence(3, seed);
  const PreparedFrame f0 = prepare_frame(seq.frames[0], cfg);
  const PreparedFrame f1 = prepare_frame(seq.frames[1], cfg);
  EncodedFrame e0, e1;
  {
    ad::NoGradGuard ng;
    e0 = encode_frame(f0, seq.cameras, params, cfg);
    e1 = encode_frame(f1, seq.cameras, params, cfg);
  }
  const int sample = 0;  // every entry of every leaf

  std::vector<GradCase> cases;
  cases.push_back({"linear layer", 1e-7, [&] {
                     const ad::Var x = param_from(rng, 3, 4);
                     const ad::Var w = param_from(rng, 4, 5);
                     const ad::Var b = param_from(rng, 1, 5);
                     return grad_check([&] { return ad::matmul(x, w) + b; }, {{"x", x}, {"w", w}, {"b", b}}, h, 1e-7,
                                       seed);
                   }});
  cases.push_back({"encoders: point pyramid", 1e-4, [&] {
                     return grad_check(
                         [&] {
                           std::vector<ad::Var> parts;
                           for (const auto& q : point_feature_pyramid(f0.layout, params, cfg)) parts.push_back(q.features);
                           return ad::concat_rows(parts);
                         },
                         params_with_prefix(params, {"enc.pt."}), h, 1e-4, seed, sample);
                   }});
  cases.push_back({"encoders: image pyramid", 1e-4, [&] {
                     return grad_check(
                         [&] {
                           std::vector<ad::Var> parts;
                           for (const auto& m : image_feature_pyramid(*f0.image, params, cfg)) parts.push_back(m.data);
                           return ad::concat_rows(parts);
                         },
                         params_with_prefix(params, {"enc.img."}), h, 1e-4, seed, sample);
                   }});
  cases.push_back({"fusion: fuse_level (3 queries)", 1e-4, [&] {
                     SynthOptions so;
                     so.image_width = 32;
                     so.image_height = 16;
                     const std::vector<CameraModel> cams{synth_camera(so)};
                     QuerySet q;
                     q.level = 0;
                     q.positions = {{6.0, 0.5, 0.2}, {9.0, -1.0, -0.4}, {-4.0, 1.0, 0.0}};
                     q.valid = {true, true, true};
                     q.pixel_anchors.assign(3, {0.0, 0.0});
                     q.features = param_from(rng, 3, cfg.encoder.channels);
                     FeatureMap fm{0, 8, 16, cfg.encoder.channels, 2, param_from(rng, 8 * 16, cfg.encoder.channels)};
                     auto leaves = params_with_prefix(params, {"fus0."});
                     leaves.emplace_back("features", q.features);
                     leaves.emplace_back("map", fm.data);
                     return grad_check([&] { return fuse_level(q, {fm}, cams, params, cfg).features; }, leaves, h, 1e-4,
                                       seed, sample);
                   }});
  cases.push_back({"pose: cost volume + head", 1e-4, [&] {
                     return grad_check(
                         [&] {
                           return pose_row(coarse_pose_head(attentive_cost_volume(e0.levels[1], e1.levels[1], params, cfg),
                                                            params));
                         },
                         params_with_prefix(params, {"pose1."}), h, 1e-4, seed, sample);
                   }});
  cases.push_back({"pose: refine_layer", 1e-4, [&] {
                     const ad::Var q = ad::Var::parameter(1, 4, {0.99, 0.05, -0.03, 0.1});
                     const ad::Var t = param_from(rng, 1, 3, 0.5);
                     auto leaves = params_with_prefix(params, {"pose0."});
                     leaves.emplace_back("prior.q", q);
                     leaves.emplace_back("prior.t", t);
                     return grad_check(
                         [&] {
                           return pose_row(refine_layer(0, e0.levels[0], e1.levels[0],
                                                        PoseVar{ad::quat_normalize(q), t, 1}, params, cfg));
                         },
                         leaves, h, 1e-4, seed, sample);
                   }});
  TemporalState state = TemporalState::fresh(cfg);
  for (int i = 0; i < 3; ++i) {
    std::vector<double> ego(static_cast<std::size_t>(cfg.temporal.ego_dim));
    for (double& v : ego) v = rng.normal();
    step_sequence_state(state, ego, random_motion(rng, 1.0), i);
  }
  cases.push_back({"temporal: encode", 1e-4, [&] {
                     return grad_check(
                         [&] {
                           const TemporalEncoding enc = temporal_encode(state.mpb, params, cfg);
                           return ad::concat_cols({enc.q_enc, enc.t_enc});
                         },
                         params_with_prefix(params, {"tmp.enc."}), h, 1e-4, seed, sample);
                   }});
  cases.push_back({"temporal: ego init + refine", 1e-4, [&] {
                     CostVolume cv;
                     cv.level = 1;
                     cv.embeddings = param_from(rng, 3, cfg.encoder.channels);
                     cv.valid = {true, false, true};
                     auto leaves = params_with_prefix(params, {"tmp.ego", "tmp.refine."});
                     leaves.emplace_back("embeddings", cv.embeddings);
                     return grad_check([&] { return ego_refine(ego_feature_init(cv, params), state.mfb, params, cfg); },
                                       leaves, h, 1e-4, seed, sample);
                   }});
  cases.push_back({"temporal: predict initial pose", 1e-4, [&] {
                     const ad::Var ego = param_from(rng, 1, cfg.temporal.ego_dim);
                     const TemporalEncoding enc{param_from(rng, 1, cfg.temporal.ego_dim),
                                                param_from(rng, 1, cfg.temporal.ego_dim)};
                     auto leaves = params_with_prefix(params, {"tmp.pred."});
                     leaves.emplace_back("ego", ego);
                     leaves.emplace_back("q_enc", enc.q_enc);
                     leaves.emplace_back("t_enc", enc.t_enc);
                     return grad_check([&] { return pose_row(predict_initial_pose(ego, enc, params, cfg)); }, leaves, h,
                                       1e-4, seed, sample);
                   }});
  cases.push_back({"temporal: update refine", 1e-4, [&] {
                     const ad::Var q = ad::Var::parameter(1, 4, {0.9, -0.2, 0.1, 0.3});
                     const ad::Var t = param_from(rng, 1, 3);
                     const TemporalEncoding enc{param_from(rng, 1, cfg.temporal.ego_dim),
                                                param_from(rng, 1, cfg.temporal.ego_dim)};
                     auto leaves = params_with_prefix(params, {"tmp.upd."});
                     leaves.emplace_back("q0", q);
                     leaves.emplace_back("t0", t);
                     return grad_check(
                         [&] { return pose_row(update_refine(PoseVar{ad::quat_normalize(q), t, 0}, enc, params)); },
                         leaves, h, 1e-4, seed, sample);
                   }});
  cases.push_back({"loss: layer_loss", 1e-7, [&] {
                     const ad::Var q = ad::Var::parameter(1, 4, {0.95, 0.1, -0.2, 0.05});
                     const ad::Var t = param_from(rng, 1, 3);
                     const ad::Var kt = ad::Var::parameter(1, 1, {0.3});
                     const ad::Var kq = ad::Var::parameter(1, 1, {-2.5});
                     const RigidMotion gt = random_motion(rng, 1.0);
                     return grad_check([&] { return layer_loss(PoseVar{q, t, 0}, gt, kt, kq); },
                                       {{"k_t", kt}, {"k_q", kq}, {"q", q}, {"t", t}}, h, 1e-7, seed);
                   }});

  for (const auto& c : cases) {
    const GradCheckReport rep = c.run();
    std::string detail = fmt::format("max rel {:.3g} over {} entries (tol {:g})", rep.max_rel_error, rep.checked, c.tol);
    if (!rep.passed) detail += "; worst " + rep.worst;
    r.checks.push_back({c.name, rep.passed, detail});
  }

  // Closed-form derivatives of the loss wrt the learnable weights.
  {
    const ad::Var kt = ad::Var::parameter(1, 1, {0.0});
    const ad::Var kq = ad::Var::parameter(1, 1, {-2.5});
    const RigidMotion gt = random_motion(rng, 1.0);
    const RigidMotion pred = random_motion(rng, 1.0);
    const PoseVar pv = PoseVar::constant(pred, 0);
    ad::backward(layer_loss(pv, gt, kt, kq));
    const double dt = (gt.translation - pred.translation).lpNorm<1>();
    const double dq = rotation_distance(gt.rotation, pred.rotation);
    const double et = std::abs(kt.grad()[0] - (1.0 - dt * std::exp(0.0)));
    const double eq = std::abs(kq.grad()[0] - (1.0 - dq * std::exp(2.5)));
    r.checks.push_back({"loss: closed-form k_t / k_q gradients", et < 1e-7 && eq < 1e-7,
                        fmt::format("errors {:.3g} / {:.3g}", et, eq)});
  }
  return r;
}

SuiteResult metrics_suite(std::uint64_t) {
  SuiteResult r{"metrics", {}};
  std::vector<RigidMotion> gt, est;
  for (int i = 0; i < 900; ++i) {
    gt.push_back({Quaternion::identity(), Vec3(i, 0, 0)});
    est.push_back({Quaternion::identity(), Vec3(1.01 * i, 0, 0)});
  }
  const auto g = Trajectory::from_poses(gt);
  const auto e = Trajectory::from_poses(est);
  const RelErrors rel = kitti_rel_errors(e, g);
  r.checks.push_back({"straight line with 1% scale drift", std::abs(rel.t_rel - 1.0) <= 1e-6 && rel.r_rel == 0.0,
                      fmt::format("t_rel {:.9f} %, r_rel {:.3g}", rel.t_rel, rel.r_rel)});
  const RelErrors same = kitti_rel_errors(g, g);
  r.checks.push_back({"identical trajectories", same.t_rel == 0.0 && same.r_rel == 0.0,
                      fmt::format("t_rel {:g}, r_rel {:g}", same.t_rel, same.r_rel)});
  return r;
}

}  // namespace

std::vector<SuiteResult> run_verify(const std::string& suite, std::uint64_t seed) {
  static const std::map<std::string, std::function<SuiteResult(std::uint64_t)>> suites{
      {"geometry", geometry_suite}, {"fusion", fusion_suite}, {"gradcheck", gradcheck_suite},
      {"metrics", metrics_suite}};
  std::vector<SuiteResult> out;
  if (suite == "all") {
    for (const auto& name : verify_suite_names()) out.push_back(suites.at(name)(seed));
    return out;
  }
  auto it = suites.find(suite);
  if (it == suites.end()) throw std::invalid_argument("unknown suite " + suite);
  out.push_back(it->second(seed));
  return out;
}

}  // namespace dvlo
