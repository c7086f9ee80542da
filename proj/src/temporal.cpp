#include "dvlo/temporal.hpp"

#include "dvlo/encoders.hpp"
#include "dvlo/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dvlo {

MemoryFeatureBank MemoryFeatureBank::fresh(int capacity, int dim) {
  MemoryFeatureBank b;
  b.capacity = capacity;
  b.dim = dim;
  b.entries.emplace_back(static_cast<std::size_t>(dim), 0.0);
  b.tags.push_back(-1);
  return b;
}

MemoryPoseBank MemoryPoseBank::fresh(int capacity) {
  MemoryPoseBank b;
  b.capacity = capacity;
  b.entries.push_back({Quaternion{0.0, 0.0, 0.0, 0.0}, Vec3::Zero()});
  b.tags.push_back(-1);
  return b;
}

void bank_push(MemoryFeatureBank& bank, std::vector<double> entry, long tag) {
  if (static_cast<int>(entry.size()) != bank.dim) {
    throw std::invalid_argument("feature bank entry has " + std::to_string(entry.size()) + " values, expected " +
                                std::to_string(bank.dim));
  }
  bank.entries.push_back(std::move(entry));
  bank.tags.push_back(tag);
  while (bank.size() > bank.capacity) {
    bank.entries.pop_front();
    bank.tags.pop_front();
  }
}

void bank_push(MemoryPoseBank& bank, const PoseEntry& entry, long tag) {
  if (!std::isfinite(entry.q.norm()) || !entry.t.allFinite()) throw std::invalid_argument("non-finite pose entry");
  bank.entries.push_back(entry);
  bank.tags.push_back(tag);
  while (bank.size() > bank.capacity) {
    bank.entries.pop_front();
    bank.tags.pop_front();
  }
}

TemporalState TemporalState::fresh(const Config& cfg) {
  return {MemoryFeatureBank::fresh(cfg.temporal.t_h, cfg.temporal.ego_dim), MemoryPoseBank::fresh(cfg.temporal.t_h)};
}

ad::Var ego_feature_init(const CostVolume& cv, const ModelParams& params) {
  std::vector<int> rows;
  for (std::size_t i = 0; i < cv.valid.size(); ++i)
    if (cv.valid[i]) rows.push_back(static_cast<int>(i));
  const ad::Var pooled =
      rows.empty() ? ad::Var::zeros(1, cv.embeddings.cols()) : ad::mean_rows(ad::gather_rows(cv.embeddings, rows));
  return nn::linear(pooled, params, "tmp.ego");
}

ad::Var sinusoidal_encoding(int rows, int dim) {
  std::vector<double> v(static_cast<std::size_t>(rows) * dim);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < dim; ++c) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (c / 2)) / dim);
      v[static_cast<std::size_t>(r) * dim + c] = (c % 2 == 0) ? std::sin(r * freq) : std::cos(r * freq);
    }
  }
  return ad::Var::constant(rows, dim, std::move(v));
}

ad::Var lstm_final_hidden(const ad::Var& inputs, const ModelParams& params, const std::string& prefix) {
  const ad::Var& wx = params.get(prefix + ".wx");
  const ad::Var& wh = params.get(prefix + ".wh");
  const ad::Var& b = params.get(prefix + ".b");
  const int hidden = wh.rows();
  ad::Var h = ad::Var::zeros(1, hidden);
  ad::Var c = ad::Var::zeros(1, hidden);
  for (int step = 0; step < inputs.rows(); ++step) {
    const ad::Var gates = ad::matmul(ad::slice_rows(inputs, step, 1), wx) + ad::matmul(h, wh) + b;
    const ad::Var i = ad::sigmoid(ad::slice_cols(gates, 0, hidden));
    const ad::Var f = ad::sigmoid(ad::slice_cols(gates, hidden, hidden));
    const ad::Var g = ad::tanh(ad::slice_cols(gates, 2 * hidden, hidden));
    const ad::Var o = ad::sigmoid(ad::slice_cols(gates, 3 * hidden, hidden));
    c = f * c + i * g;
    h = o * ad::tanh(c);
  }
  return h;
}

namespace {

ad::Var encode_stream(const ad::Var& history, const ModelParams& params, const std::string& prefix, int heads) {
  const int len = history.rows();
  ad::Var x = nn::linear(history, params, prefix + ".lift");
  x = x + sinusoidal_encoding(len, x.cols());
  const nn::AttentionWeights w = nn::AttentionWeights::from(params, prefix + ".attn");
  x = x + nn::multi_head_attention(x, nn::tile_rows(x, len), len, heads, w);
  return lstm_final_hidden(x, params, prefix + ".lstm");
}

// Two-layer head on [a || b].
ad::Var head2(const ad::Var& a, const ad::Var& b, const ModelParams& params, const std::string& prefix) {
  const ad::Var h = ad::leaky_relu(nn::linear(ad::concat_cols({a, b}), params, prefix + ".l1"), kLeakySlope);
  return nn::linear(h, params, prefix + ".l2");
}

}  // namespace

TemporalEncoding temporal_encode(const MemoryPoseBank& mpb, const ModelParams& params, const Config& cfg) {
  const int len = mpb.size();
  std::vector<double> qs(static_cast<std::size_t>(len) * 4);
  std::vector<double> ts(static_cast<std::size_t>(len) * 3);
  for (int i = 0; i < len; ++i) {
    const PoseEntry& e = mpb.entries[static_cast<std::size_t>(i)];
    const double qv[4] = {e.q.w, e.q.x, e.q.y, e.q.z};
    for (int a = 0; a < 4; ++a) qs[static_cast<std::size_t>(i) * 4 + a] = qv[a];
    for (int a = 0; a < 3; ++a) ts[static_cast<std::size_t>(i) * 3 + a] = e.t[a];
  }
  TemporalEncoding enc;
  enc.q_enc = encode_stream(ad::Var::constant(len, 4, std::move(qs)), params, "tmp.enc.q", cfg.temporal.heads);
  enc.t_enc = encode_stream(ad::Var::constant(len, 3, std::move(ts)), params, "tmp.enc.t", cfg.temporal.heads);
  return enc;
}

ad::Var ego_refine(const ad::Var& current, const MemoryFeatureBank& mfb, const ModelParams& params,
                   const Config& cfg) {
  std::vector<double> tokens;
  tokens.reserve(static_cast<std::size_t>(mfb.size()) * mfb.dim);
  for (const auto& e : mfb.entries) tokens.insert(tokens.end(), e.begin(), e.end());
  const ad::Var bank = ad::Var::constant(mfb.size(), mfb.dim, std::move(tokens));
  const nn::AttentionWeights w = nn::AttentionWeights::from(params, "tmp.refine.attn");
  return current + nn::multi_head_attention(current, bank, mfb.size(), cfg.temporal.heads, w);
}

PoseVar predict_initial_pose(const ad::Var& ego, const TemporalEncoding& enc, const ModelParams& params,
                             const Config& cfg) {
  PoseVar out;
  out.q = ad::quat_normalize(head2(ego, enc.q_enc, params, "tmp.pred.q"));
  out.t = head2(ego, enc.t_enc, params, "tmp.pred.t");
  out.level = cfg.pose.levels - 1;
  return out;
}

PoseVar update_refine(const PoseVar& last, const TemporalEncoding& enc, const ModelParams& params) {
  const ad::Var fq = ad::leaky_relu(nn::linear(last.q, params, "tmp.upd.q.lift"), kLeakySlope);
  const ad::Var ft = ad::leaky_relu(nn::linear(last.t, params, "tmp.upd.t.lift"), kLeakySlope);
  PoseVar out;
  out.q = ad::quat_mul(ad::quat_normalize(head2(fq, enc.q_enc, params, "tmp.upd.q")), last.q);
  out.t = last.t + head2(ft, enc.t_enc, params, "tmp.upd.t");
  out.level = -1;
  return out;
}

void step_sequence_state(TemporalState& state, std::vector<double> ego, const RigidMotion& refined, long tag) {
  bank_push(state.mfb, std::move(ego), tag);
  bank_push(state.mpb, PoseEntry{refined.rotation, refined.translation}, tag);
}

void declare_temporal_params(ParamBuilder& b, const Config& cfg) {
  const int d = cfg.encoder.channels;
  const int de = cfg.temporal.ego_dim;
  b.linear("tmp.ego", d, de);
  for (const char* s : {"q", "t"}) {
    const std::string p = std::string("tmp.enc.") + s;
    b.linear(p + ".lift", s[0] == 'q' ? 4 : 3, de);
    nn::declare_attention(b, p + ".attn", de, de, de);
    b.xavier(p + ".lstm.wx", de, 4 * de);
    b.xavier(p + ".lstm.wh", de, 4 * de);
    b.zeros(p + ".lstm.b", 1, 4 * de);
  }
  nn::declare_attention(b, "tmp.refine.attn", de, de, de);
  // Output layers start at the identity: zero weights, bias (1, 0, 0, 0) for
  // rotations and zero for translations.
  b.linear("tmp.pred.q.l1", 2 * de, de);
  b.zeros("tmp.pred.q.l2.w", de, 4);
  b.values("tmp.pred.q.l2.b", 1, 4, {1.0, 0.0, 0.0, 0.0});
  b.linear("tmp.pred.t.l1", 2 * de, de);
  b.zeros("tmp.pred.t.l2.w", de, 3);
  b.zeros("tmp.pred.t.l2.b", 1, 3);
  b.linear("tmp.upd.q.lift", 4, de);
  b.linear("tmp.upd.q.l1", 2 * de, de);
  b.zeros("tmp.upd.q.l2.w", de, 4);
  b.values("tmp.upd.q.l2.b", 1, 4, {1.0, 0.0, 0.0, 0.0});
  b.linear("tmp.upd.t.lift", 3, de);
  b.linear("tmp.upd.t.l1", 2 * de, de);
  b.zeros("tmp.upd.t.l2.w", de, 3);
  b.zeros("tmp.upd.t.l2.b", 1, 3);
}

}  // namespace dvlo
