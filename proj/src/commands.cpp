#include "dvlo/commands.hpp"

#include "dvlo/config.hpp"
#include "dvlo/dataio.hpp"
#include "dvlo/eval.hpp"
#include "dvlo/model.hpp"
#include "dvlo/params.hpp"
#include "dvlo/synth.hpp"
#include "dvlo/training.hpp"
#include "dvlo/verify.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace dvlo {
namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_file, "key = value configuration file");
  cmd->add_option("--set", o.overrides, "configuration override key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "seed for initialization and perturbations");
}

Config build_config(const CommonOptions& o) {
  Config cfg;
  if (!o.config_file.empty()) cfg.load_file(o.config_file);
  for (const auto& s : o.overrides) cfg.apply_override(s);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = s.find(',', start);
    const std::string item = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!item.empty()) out.push_back(item);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

ModelParams model_for(const std::string& ckpt, const Config& cfg, std::uint64_t seed) {
  return ckpt.empty() ? init_params(cfg, seed) : load_checkpoint(ckpt, cfg);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- odom ------------------------------------------------------------------

struct OdomOptions {
  CommonOptions common;
  std::string data, seq, ckpt, out, perturb;
};

int cmd_odom(const OdomOptions& o, std::ostream& out) {
  using Clock = std::chrono::steady_clock;
  const Config cfg = build_config(o.common);
  const ModelParams params = model_for(o.ckpt, cfg, o.common.seed);
  SequenceBundle seq = load_sequence({o.data, o.seq}, cfg.data.camera);
  seq = perturb(seq, PerturbMode::parse(o.perturb), o.common.seed);
  if (static_cast<int>(seq.cameras.size()) < cfg.fusion.cameras) {
    throw ConfigError(fmt::format("sequence has {} cameras, fusion.cameras = {}", seq.cameras.size(),
                                  cfg.fusion.cameras));
  }

  // Per-frame stage timings; the trajectory itself is timing-independent.
  std::vector<double> t_prepare, t_encode, t_pose;
  auto ms = [](Clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };
  std::vector<RigidMotion> estimates;
  {
    ad::NoGradGuard no_grad;
    TemporalState state = TemporalState::fresh(cfg);
    EncodedFrame prev;
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
      auto t0 = Clock::now();
      const PreparedFrame pf = prepare_frame(seq.frames[i], cfg);
      auto t1 = Clock::now();
      EncodedFrame cur = encode_frame(pf, seq.cameras, params, cfg);
      auto t2 = Clock::now();
      t_prepare.push_back(ms(t1 - t0));
      t_encode.push_back(ms(t2 - t1));
      if (i > 0) {
        const PairOutput res = forward_pair(prev, cur, state, params, cfg);
        push_pair_state(state, res, static_cast<long>(i - 1), cfg);
        estimates.push_back(res.refined.motion());
        t_pose.push_back(ms(Clock::now() - t2));
      }
      prev = std::move(cur);
    }
  }
  const Trajectory traj = trajectory_from_estimates(estimates);
  const fs::path dir(o.out);
  write_trajectory(traj.poses, dir / (o.seq + ".txt"));
  if (seq.gt_poses) write_trajectory(*seq.gt_poses, dir / (o.seq + "_gt.txt"));
  nlohmann::json timing{{"frames", seq.frames.size()},
                        {"median_ms", {{"prepare", median(t_prepare)}, {"encode_fuse", median(t_encode)},
                                       {"temporal_pose", median(t_pose)}}}};
  write_text(dir / "timing.json", timing.dump(2) + "\n");
  out << fmt::format("{} frames, {} relative motions -> {}\n", seq.frames.size(), estimates.size(),
                     (dir / (o.seq + ".txt")).string());
  out << fmt::format("median ms/frame: prepare {:.2f}, encode+fuse {:.2f}, temporal+pose {:.2f}\n", median(t_prepare),
                     median(t_encode), median(t_pose));
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainOptions {
  CommonOptions common;
  std::string data, seq, ckpt, out;
  int epochs = -1;
};

int cmd_train(const TrainOptions& o, std::ostream& out) {
  Config cfg = build_config(o.common);
  const int epochs = o.epochs >= 0 ? o.epochs : cfg.train.epochs;
  std::vector<SequenceBundle> seqs;
  for (const auto& s : split_list(o.seq)) seqs.push_back(load_sequence({o.data, s}, cfg.data.camera));
  if (seqs.empty()) throw UsageError("--seq names no sequence");

  TrainState st;
  if (o.ckpt.empty()) {
    st = fresh_train_state(cfg, o.common.seed);
  } else if (fs::exists(o.ckpt + ".state")) {
    st = load_train_state(o.ckpt + ".state", cfg);
  } else {
    st.params = load_checkpoint(o.ckpt, cfg);
    st.adam = AdamState::fresh(st.params);
  }

  const fs::path dir(o.out);
  fs::create_directories(dir);
  std::string curve = "step,epoch,sequence,start,lr,cal\n";
  train(seqs, st, cfg, epochs, [&](const StepRecord& r) {
    curve += fmt::format("{},{},{},{},{:.9g},{:.17g}\n", r.step, r.epoch, r.sequence, r.start, r.lr, r.cal);
  });
  save_checkpoint(st.params, dir / "model.ckpt");
  save_train_state(st, dir / "model.ckpt.state");
  write_text(dir / "loss.csv", curve);
  out << fmt::format("trained {} epoch(s), {} optimizer steps total -> {}\n", epochs, st.adam.step,
                     (dir / "model.ckpt").string());
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalOptions {
  std::string est, gt, out;
};

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  const auto est = read_poses(o.est);
  const auto gt = read_poses(o.gt);
  if (est.size() != gt.size()) {
    throw FormatError(fmt::format("pose count mismatch: {} has {} poses, {} has {}", o.est, est.size(), o.gt,
                                  gt.size()));
  }
  const MetricReport rep = evaluate(Trajectory::from_poses(est), Trajectory::from_poses(gt));
  out << fmt::format("{:>10} {:>16} {:>10} {:>10}\n", "t_rel(%)", "r_rel(deg/100m)", "ATE(m)", "RPE(m)");
  out << fmt::format("{:>10.4f} {:>16.4f} {:>10.4f} {:>10.4f}\n", rep.t_rel, rep.r_rel, rep.ate, rep.rpe);
  if (!o.out.empty()) {
    const fs::path dir(o.out);
    write_text(dir / "metrics.txt", rep.to_text());
    write_text(dir / "metrics.json", rep.to_json().dump(2) + "\n");
  }
  return kExitOk;
}

// ---- synth -----------------------------------------------------------------

struct SynthCmdOptions {
  SynthOptions synth;
  std::string out, seq = "00";
};

int cmd_synth(const SynthCmdOptions& o, std::ostream& out) {
  const SequenceBundle seq = generate_sequence(o.synth);
  save_sequence(seq, {o.out, o.seq});
  out << fmt::format("wrote {} frames ({} path) to {}\n", seq.frames.size(), o.synth.path,
                     SequenceLayout{o.out, o.seq}.sequence_dir().string());
  return kExitOk;
}

// ---- verify ----------------------------------------------------------------

int cmd_verify(const std::string& suite, std::uint64_t seed, std::ostream& out) {
  const auto names = verify_suite_names();
  if (suite != "all" && std::find(names.begin(), names.end(), suite) == names.end()) {
    std::string list = "all";
    for (const auto& n : names) list += ", " + n;
    throw UsageError("unknown suite '" + suite + "' (available: " + list + ")");
  }
  bool ok = true;
  for (const auto& res : run_verify(suite, seed)) {
    for (const auto& c : res.checks) {
      out << fmt::format("[{}] {}: {} ({})\n", c.passed ? "PASS" : "FAIL", res.suite, c.name, c.detail);
    }
    ok = ok && res.passed();
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Visual-LiDAR odometry with temporal memory"};
  app.require_subcommand(1);

  OdomOptions odom;
  auto* c_odom = app.add_subcommand("odom", "estimate a trajectory for one sequence");
  add_common(c_odom, odom.common);
  c_odom->add_option("--data", odom.data, "dataset root")->required();
  c_odom->add_option("--seq", odom.seq, "sequence id")->required();
  c_odom->add_option("--ckpt", odom.ckpt, "model checkpoint (default: fresh initialization)");
  c_odom->add_option("--out", odom.out, "output directory")->required();
  c_odom->add_option("--perturb", odom.perturb, "half-rate or gauss:<sigma>");

  TrainOptions tr;
  auto* c_train = app.add_subcommand("train", "train on sequences with ground truth");
  add_common(c_train, tr.common);
  c_train->add_option("--data", tr.data, "dataset root")->required();
  c_train->add_option("--seq", tr.seq, "comma-separated sequence ids")->required();
  c_train->add_option("--ckpt", tr.ckpt, "checkpoint to start from (resumes when <ckpt>.state exists)");
  c_train->add_option("--out", tr.out, "output directory")->required();
  c_train->add_option("--epochs", tr.epochs, "epochs to run (default: train.epochs)");

  EvalOptions ev;
  auto* c_eval = app.add_subcommand("eval", "compare an estimated trajectory with ground truth");
  c_eval->add_option("--est", ev.est, "estimated poses (KITTI format)")->required();
  c_eval->add_option("--gt", ev.gt, "ground-truth poses (KITTI format)")->required();
  c_eval->add_option("--out", ev.out, "directory for metrics.txt and metrics.json");

  SynthCmdOptions sy;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic sequence");
  c_synth->add_option("--out", sy.out, "dataset root to write")->required();
  c_synth->add_option("--seq", sy.seq, "sequence id");
  c_synth->add_option("--seed", sy.synth.seed, "scene seed");
  c_synth->add_option("--path", sy.synth.path, "straight, circle or wave");
  c_synth->add_option("--frames", sy.synth.frames, "number of frames");
  c_synth->add_option("--speed", sy.synth.speed, "meters per frame");
  c_synth->add_option("--radius", sy.synth.radius, "circle radius (m)");

  std::string suite;
  std::uint64_t verify_seed = 0;
  auto* c_verify = app.add_subcommand("verify", "run self-check suites");
  c_verify->add_option("suite", suite, "all, geometry, fusion, gradcheck or metrics")->required();
  c_verify->add_option("--seed", verify_seed, "seed");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_odom->parsed()) return cmd_odom(odom, out);
    if (c_train->parsed()) return cmd_train(tr, out);
    if (c_eval->parsed()) return cmd_eval(ev, out);
    if (c_synth->parsed()) return cmd_synth(sy, out);
    if (c_verify->parsed()) return cmd_verify(suite, verify_seed, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const MetricError& e) {
    err << "metric error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace dvlo
