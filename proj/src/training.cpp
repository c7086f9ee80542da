#include "dvlo/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dvlo {

namespace {

ad::Var quat_const(const Quaternion& q) { return ad::Var::constant(1, 4, {q.w, q.x, q.y, q.z}); }
ad::Var vec_const(const Vec3& v) { return ad::Var::constant(1, 3, {v.x(), v.y(), v.z()}); }

double quat_gap(const Quaternion& a, const Quaternion& b, double sign) {
  const double d[4] = {a.w - sign * b.w, a.x - sign * b.x, a.y - sign * b.y, a.z - sign * b.z};
  return std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3]);
}

// +1 when q is closer to q_gt than -q is.
double align_sign(const Quaternion& gt, const Quaternion& q) {
  return quat_gap(gt, q, 1.0) <= quat_gap(gt, q, -1.0) ? 1.0 : -1.0;
}

}  // namespace

ad::Var layer_loss(const PoseVar& pred, const RigidMotion& gt, const ad::Var& k_t, const ad::Var& k_q) {
  const ad::Var l1 = ad::l1_norm(pred.t - vec_const(gt.translation));
  const RigidMotion value = pred.motion();
  const double s = align_sign(gt.rotation, value.rotation);
  const ad::Var l2 = ad::l2_norm(quat_const(gt.rotation) - ad::scale(pred.q, s));
  return l1 * ad::exp(ad::scale(k_t, -1.0)) + k_t + l2 * ad::exp(ad::scale(k_q, -1.0)) + k_q;
}

double layer_loss(const RigidMotion& pred, const RigidMotion& gt, double k_t, double k_q) {
  const double l1 = (gt.translation - pred.translation).lpNorm<1>();
  const double l2 = quat_gap(gt.rotation, pred.rotation, align_sign(gt.rotation, pred.rotation));
  return l1 * std::exp(-k_t) + k_t + l2 * std::exp(-k_q) + k_q;
}

ad::Var refined_loss(const PoseVar& pred, const RigidMotion& gt, const ad::Var& k_t, const ad::Var& k_q) {
  return layer_loss(pred, gt, k_t, k_q);
}

double refined_loss(const RigidMotion& pred, const RigidMotion& gt, double k_t, double k_q) {
  return layer_loss(pred, gt, k_t, k_q);
}

double weighted_total(const std::vector<double>& layers, double refined, const std::vector<double>& alpha,
                      double beta) {
  if (layers.size() != alpha.size()) throw std::invalid_argument("one alpha per layer required");
  double total = 0.0;
  for (std::size_t l = 0; l < layers.size(); ++l) total += alpha[l] * layers[l];
  return total + beta * refined;
}

FrameLoss frame_loss(const PairOutput& out, const RigidMotion& gt, const ModelParams& params, const Config& cfg) {
  const ad::Var& k_t = params.get("loss.k_t");
  const ad::Var& k_q = params.get("loss.k_q");
  const int levels = cfg.pose.levels;
  FrameLoss fl;
  fl.values.layers.resize(static_cast<std::size_t>(levels));
  fl.values.k_t = k_t.item();
  fl.values.k_q = k_q.item();
  ad::Var total;
  for (int l = 0; l < levels; ++l) {
    const ad::Var ll = layer_loss(out.level(l), gt, k_t, k_q);
    fl.values.layers[static_cast<std::size_t>(l)] = ll.item();
    const ad::Var term = ad::scale(ll, cfg.train.alpha[static_cast<std::size_t>(l)]);
    total = total.defined() ? total + term : term;
  }
  const ad::Var re = refined_loss(out.refined, gt, k_t, k_q);
  fl.values.refined = re.item();
  fl.total = total + ad::scale(re, cfg.train.beta);
  fl.values.total = fl.total.item();
  return fl;
}

ad::Var collective_average_loss(const std::vector<ad::Var>& frame_totals) {
  if (frame_totals.empty()) throw std::invalid_argument("collective average over zero frames");
  ad::Var sum = frame_totals.front();
  for (std::size_t i = 1; i < frame_totals.size(); ++i) sum = sum + frame_totals[i];
  return ad::scale(sum, 1.0 / static_cast<double>(frame_totals.size()));
}

double collective_average_loss(const std::vector<double>& frame_totals) {
  if (frame_totals.empty()) throw std::invalid_argument("collective average over zero frames");
  double sum = 0.0;
  for (double v : frame_totals) sum += v;
  return sum * (1.0 / static_cast<double>(frame_totals.size()));
}

int ClipSchedule::clip_count() const {
  int n = 0;
  for (std::size_t i = 0; i < subclips.size(); ++i) {
    if (i == 0 || subclips[i].sequence != subclips[i - 1].sequence || subclips[i].clip != subclips[i - 1].clip) ++n;
  }
  return n;
}

ClipSchedule make_clips(const std::vector<int>& sequence_lengths, int t_c, int t_s) {
  if (t_c < 1 || t_s < 1) throw ConfigError("clip lengths must be positive");
  if (t_s > t_c) throw ConfigError(fmt::format("sub-clip length {} exceeds clip length {}", t_s, t_c));
  ClipSchedule sched{t_c, t_s, {}};
  for (std::size_t s = 0; s < sequence_lengths.size(); ++s) {
    const int len = sequence_lengths[s];
    for (int c = 0, begin = 0; begin < len; ++c, begin += t_c) {
      const int clip_len = std::min(t_c, len - begin);
      for (int k = 0; k + t_s <= clip_len; k += t_s) sched.subclips.push_back({static_cast<int>(s), c, begin + k});
    }
  }
  return sched;
}

GradCheckReport grad_check(const std::function<ad::Var()>& f,
                           const std::vector<std::pair<std::string, ad::Var>>& leaves, double h, double tol,
                           std::uint64_t seed, int max_entries) {
  constexpr double kFloor = 1e-3;
  Rng rng(seed);
  const ad::Var out = f();
  std::vector<double> r(out.size());
  for (auto& x : r) x = rng.uniform(-1.0, 1.0);
  const ad::Var proj = ad::Var::constant(out.rows(), out.cols(), r);
  for (const auto& leaf : leaves) leaf.second.node()->grad.clear();
  ad::backward(ad::sum_all(out * proj));

  std::vector<std::vector<double>> analytic;
  for (const auto& [name, leaf] : leaves) {
    if (!leaf.requires_grad()) throw std::invalid_argument("grad_check leaf " + name + " does not require grad");
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
  }

  ad::NoGradGuard no_grad;
  auto objective = [&] {
    const ad::Var o = f();
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += o.value()[i] * r[i];
    return s;
  };

  GradCheckReport rep;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    ad::Var leaf = leaves[li].second;
    std::vector<std::size_t> idx(leaf.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (max_entries > 0 && idx.size() > static_cast<std::size_t>(max_entries)) {
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      idx.resize(static_cast<std::size_t>(max_entries));
      std::sort(idx.begin(), idx.end());
    }
    auto values = leaf.mutable_value();
    for (std::size_t k : idx) {
      const double old = values[k];
      values[k] = old + h;
      const double fp = objective();
      values[k] = old - h;
      const double fm = objective();
      values[k] = old;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[li].empty() ? 0.0 : analytic[li][k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kFloor});
      ++rep.checked;
      if (rel > rep.max_rel_error || !std::isfinite(rel)) {
        rep.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        rep.worst = fmt::format("{}[{}]", leaves[li].first, k);
      }
      if (!(rel <= tol)) {
        rep.passed = false;
        rep.failures.push_back(fmt::format("{}[{}]: analytic {:.9g} numeric {:.9g} rel {:.3g}", leaves[li].first,
                                           k, a, numeric, rel));
      }
    }
  }
  return rep;
}

AdamState AdamState::fresh(const ModelParams& params) {
  AdamState s;
  for (const auto& e : params.entries()) {
    s.m.emplace_back(e.var.size(), 0.0);
    s.v.emplace_back(e.var.size(), 0.0);
  }
  return s;
}

void adam_step(ModelParams& params, AdamState& state, double lr, const TrainConfig& tc) {
  ++state.step;
  const double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(state.step));
  auto& entries = params.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    ad::Var& var = entries[p].var;
    const auto grad = var.grad();
    auto value = var.mutable_value();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = tc.beta1 * m[i] + (1.0 - tc.beta1) * g;
      v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * g * g;
      value[i] -= lr * ((m[i] / c1) / (std::sqrt(v[i] / c2) + tc.eps));
    }
  }
}

double learning_rate(const TrainConfig& tc, int epoch) {
  const int decays = tc.decay_every > 0 ? epoch / tc.decay_every : 0;
  return std::max(tc.lr * std::pow(tc.lr_decay, decays), std::min(tc.lr, tc.lr_floor));
}

std::vector<RigidMotion> relative_ground_truth(const std::vector<RigidMotion>& poses) {
  std::vector<RigidMotion> out;
  for (std::size_t i = 0; i + 1 < poses.size(); ++i) out.push_back(poses[i + 1].inverse().compose(poses[i]));
  return out;
}

StepResult train_step(const SequenceBundle& seq, const std::vector<PreparedFrame>& prepared,
                      const std::vector<RigidMotion>& gt_rel, int start, int count, TemporalState& state,
                      ModelParams& params, AdamState& adam, double lr, const Config& cfg, bool update) {
  if (start < 0 || count < 1 || static_cast<std::size_t>(start + count) > gt_rel.size()) {
    throw std::out_of_range(fmt::format("sub-clip [{}, {}) outside {} samples", start, start + count, gt_rel.size()));
  }
  std::vector<EncodedFrame> enc;
  for (int i = start; i <= start + count; ++i) {
    enc.push_back(encode_frame(prepared[static_cast<std::size_t>(i)], seq.cameras, params, cfg));
  }
  StepResult res;
  std::vector<ad::Var> totals;
  for (int t = 0; t < count; ++t) {
    const PairOutput out = forward_pair(enc[static_cast<std::size_t>(t)], enc[static_cast<std::size_t>(t) + 1],
                                        state, params, cfg);
    FrameLoss fl = frame_loss(out, gt_rel[static_cast<std::size_t>(start + t)], params, cfg);
    if (!std::isfinite(fl.values.total)) {
      std::string what = "total";
      for (std::size_t l = 0; l < fl.values.layers.size(); ++l) {
        if (!std::isfinite(fl.values.layers[l])) {
          what = fmt::format("layer {} loss", l);
          break;
        }
      }
      if (what == "total" && !std::isfinite(fl.values.refined)) what = "refined loss";
      throw TrainingError(fmt::format("non-finite {} at frame {}", what, start + t));
    }
    push_pair_state(state, out, start + t, cfg);
    totals.push_back(fl.total);
    res.frames.push_back(fl.values);
    res.refined.push_back(out.refined.motion());
  }
  const ad::Var cal = collective_average_loss(totals);
  res.cal = cal.item();
  if (update) {
    for (const auto& e : params.entries()) e.var.node()->grad.clear();
    ad::backward(cal);
    for (const auto& e : params.entries()) {
      for (double g : e.var.grad()) {
        if (!std::isfinite(g)) throw TrainingError("non-finite gradient in " + e.name);
      }
    }
    adam_step(params, adam, lr, cfg.train);
  }
  return res;
}

TrainState fresh_train_state(const Config& cfg, std::uint64_t seed) {
  TrainState st{init_params(cfg, seed), {}, 0};
  st.adam = AdamState::fresh(st.params);
  return st;
}

void train(const std::vector<SequenceBundle>& seqs, TrainState& st, const Config& cfg, int epochs,
           const std::function<void(const StepRecord&)>& on_step) {
  std::vector<std::vector<PreparedFrame>> prepared;
  std::vector<std::vector<RigidMotion>> gt_rel;
  std::vector<int> lengths;
  for (const auto& s : seqs) {
    if (!s.gt_poses) throw TrainingError("training sequence has no ground-truth poses");
    std::vector<PreparedFrame> p;
    for (const auto& f : s.frames) p.push_back(prepare_frame(f, cfg));
    prepared.push_back(std::move(p));
    gt_rel.push_back(relative_ground_truth(*s.gt_poses));
    lengths.push_back(static_cast<int>(gt_rel.back().size()));
  }
  const ClipSchedule sched = make_clips(lengths, cfg.train.t_c, cfg.train.t_s);

  for (int e = 0; e < epochs; ++e) {
    const double lr = learning_rate(cfg.train, st.epoch);
    TemporalState state = TemporalState::fresh(cfg);
    for (std::size_t i = 0; i < sched.subclips.size(); ++i) {
      const SubClip& sc = sched.subclips[i];
      if (i == 0 || sc.clip != sched.subclips[i - 1].clip || sc.sequence != sched.subclips[i - 1].sequence) {
        state = TemporalState::fresh(cfg);
      }
      const auto s = static_cast<std::size_t>(sc.sequence);
      StepResult r;
      try {
        r = train_step(seqs[s], prepared[s], gt_rel[s], sc.start, sched.t_s, state, st.params, st.adam, lr, cfg);
      } catch (const TrainingError& err) {
        throw TrainingError(fmt::format("step {}: {}", st.adam.step + 1, err.what()));
      }
      if (on_step) on_step({st.adam.step, st.epoch, sc.sequence, sc.start, lr, r.cal});
    }
    ++st.epoch;
  }
}

void save_train_state(const TrainState& st, const std::filesystem::path& path) {
  std::vector<NamedTensor> tensors;
  const auto& entries = st.params.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    const auto& e = entries[p];
    tensors.push_back({"param/" + e.name, e.var.rows(), e.var.cols(), {e.var.value().begin(), e.var.value().end()}});
    tensors.push_back({"adam.m/" + e.name, e.var.rows(), e.var.cols(), st.adam.m[p]});
    tensors.push_back({"adam.v/" + e.name, e.var.rows(), e.var.cols(), st.adam.v[p]});
  }
  write_tensor_file(path, TensorDtype::kF64, tensors,
                    {{"kind", "train-state"}, {"step", st.adam.step}, {"epoch", st.epoch}});
}

TrainState load_train_state(const std::filesystem::path& path, const Config& cfg) {
  nlohmann::json meta;
  const auto tensors = read_tensor_file(path, &meta);
  if (meta.value("kind", "") != "train-state") throw FormatError(path.string() + ": not a training state file");
  TrainState st = fresh_train_state(cfg, 0);
  assign_tensors(st.params, tensors, "param/");
  // Moments share names and shapes with the parameters.
  ModelParams m = st.params.clone();
  ModelParams v = st.params.clone();
  assign_tensors(m, tensors, "adam.m/");
  assign_tensors(v, tensors, "adam.v/");
  for (std::size_t p = 0; p < st.params.entries().size(); ++p) {
    const auto mv = m.entries()[p].var.value();
    const auto vv = v.entries()[p].var.value();
    st.adam.m[p].assign(mv.begin(), mv.end());
    st.adam.v[p].assign(vv.begin(), vv.end());
  }
  st.adam.step = meta.at("step").get<long>();
  st.epoch = meta.at("epoch").get<int>();
  return st;
}

}  // namespace dvlo
