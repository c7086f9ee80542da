#include "dvlo/pose.hpp"

#include "dvlo/layers.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace dvlo {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

std::string pose_layer_prefix(int level) { return "pose" + std::to_string(level); }

PoseVar PoseVar::constant(const RigidMotion& m, int level) {
  const Quaternion& q = m.rotation;
  return {ad::Var::constant(1, 4, {q.w, q.x, q.y, q.z}),
          ad::Var::constant(1, 3, {m.translation.x(), m.translation.y(), m.translation.z()}), level};
}

RigidMotion PoseVar::motion() const {
  RigidMotion m;
  m.rotation = {q(0, 0), q(0, 1), q(0, 2), q(0, 3)};
  m.translation = {t(0, 0), t(0, 1), t(0, 2)};
  return m;
}

std::vector<int> nearest_targets(const Vec3& p, const std::vector<Vec3>& targets, const std::vector<bool>& valid,
                                 int k) {
  std::vector<std::pair<double, int>> cand;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    if (valid[j]) cand.emplace_back((targets[j] - p).squaredNorm(), static_cast<int>(j));
  }
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
  std::vector<int> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = cand[i].second;
  return out;
}

ad::Var position_matrix(const QuerySet& queries) {
  std::vector<double> v(queries.positions.size() * 3);
  for (std::size_t i = 0; i < queries.positions.size(); ++i)
    for (int a = 0; a < 3; ++a) v[3 * i + a] = queries.positions[i][a];
  return ad::Var::constant(queries.size(), 3, std::move(v));
}

ad::Var warp_positions(const ad::Var& positions, const PoseVar& prior) {
  return ad::quat_rotate(prior.q, positions) + prior.t;
}

CostVolume attentive_cost_volume(const ad::Var& src_positions, const ad::Var& src_features,
                                 const std::vector<bool>& src_valid, const QuerySet& tgt, const ModelParams& params,
                                 const std::string& prefix, int knn) {
  const int n = src_positions.rows();
  const std::string p = prefix + ".cv";
  const int slots = std::max(1, std::min(knn, tgt.valid_count()));

  // Neighbor slots per source; missing slots gather zero rows and are masked.
  std::vector<int> neighbors(static_cast<std::size_t>(n) * slots, -1);
  std::vector<double> bias(neighbors.size(), kNegInf);
  std::vector<double> tgt_pos(neighbors.size() * 3, 0.0);
  for (int i = 0; i < n; ++i) {
    const Vec3 s(src_positions(i, 0), src_positions(i, 1), src_positions(i, 2));
    const auto nn_idx = nearest_targets(s, tgt.positions, tgt.valid, slots);
    for (std::size_t j = 0; j < nn_idx.size(); ++j) {
      const std::size_t r = static_cast<std::size_t>(i) * slots + j;
      neighbors[r] = nn_idx[j];
      bias[r] = 0.0;
      for (int a = 0; a < 3; ++a) tgt_pos[3 * r + a] = tgt.positions[static_cast<std::size_t>(nn_idx[j])][a];
    }
  }

  const ad::Var rel =
      ad::Var::constant(n * slots, 3, std::move(tgt_pos)) - nn::repeat_rows(src_positions, slots);
  const ad::Var pe = ad::leaky_relu(nn::linear(rel, params, p + ".pe"), kLeakySlope);
  const ad::Var tgt_feat = ad::gather_rows(tgt.features, neighbors);
  const ad::Var keys = nn::linear(ad::concat_cols({tgt_feat, pe}), params, p + ".k");
  const ad::Var query = nn::linear(src_features, params, p + ".q");
  const ad::Var logit_bias = ad::Var::constant(n, slots, std::move(bias));
  const ad::Var w = nn::attention_weights(query, keys, slots, 1, logit_bias);
  const ad::Var attended = nn::apply_attention(w, tgt_feat, slots, 1);
  const ad::Var pooled_rel = nn::apply_attention(w, rel, slots, 1);

  const ad::Var hidden =
      ad::leaky_relu(nn::linear(ad::concat_cols({src_features, attended, pooled_rel}), params, p + ".mlp1"),
                     kLeakySlope);
  CostVolume cv;
  cv.embeddings = nn::linear(hidden, params, p + ".mlp2");
  cv.valid = src_valid;
  return cv;
}

CostVolume attentive_cost_volume(const QuerySet& src, const QuerySet& tgt, const ModelParams& params,
                                 const Config& cfg) {
  if (src.level != tgt.level) throw std::invalid_argument("cost volume across different levels");
  CostVolume cv = attentive_cost_volume(position_matrix(src), src.features, src.valid, tgt, params,
                                        pose_layer_prefix(src.level), cfg.pose.knn);
  cv.level = src.level;
  return cv;
}

ad::Var pose_mask_weights(const CostVolume& cv, const ModelParams& params, const std::string& prefix) {
  const int n = cv.embeddings.rows();
  std::vector<double> bias(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    if (!cv.valid[static_cast<std::size_t>(i)]) bias[static_cast<std::size_t>(i)] = kNegInf;
  const ad::Var logits = nn::linear(cv.embeddings, params, prefix + ".mask") + ad::Var::constant(n, 1, std::move(bias));
  return ad::softmax_rows(ad::transpose(logits));
}

PoseVar coarse_pose_head(const CostVolume& cv, const ModelParams& params, const std::string& prefix) {
  const ad::Var pooled = ad::matmul(pose_mask_weights(cv, params, prefix), cv.embeddings);
  PoseVar out;
  out.q = ad::quat_normalize(nn::linear(pooled, params, prefix + ".quat"));
  out.t = nn::linear(pooled, params, prefix + ".trans");
  out.level = cv.level;
  return out;
}

PoseVar coarse_pose_head(const CostVolume& cv, const ModelParams& params) {
  return coarse_pose_head(cv, params, pose_layer_prefix(cv.level));
}

PoseVar compose_residual(const PoseVar& delta, const PoseVar& prior, int level) {
  PoseVar out;
  out.q = ad::quat_normalize(ad::quat_mul(delta.q, prior.q));
  out.t = ad::quat_rotate(delta.q, prior.t) + delta.t;
  out.level = level;
  return out;
}

PoseVar refine_layer(int level, const QuerySet& src, const QuerySet& tgt, const PoseVar& prior,
                     const ModelParams& params, const Config& cfg) {
  if (src.level != level || tgt.level != level) throw std::invalid_argument("refine_layer: level mismatch");
  const std::string prefix = pose_layer_prefix(level);
  CostVolume cv = attentive_cost_volume(warp_positions(position_matrix(src), prior), src.features, src.valid, tgt,
                                        params, prefix, cfg.pose.knn);
  cv.level = level;
  return compose_residual(coarse_pose_head(cv, params, prefix), prior, level);
}

std::vector<PoseVar> run_pyramid(const std::vector<QuerySet>& src, const std::vector<QuerySet>& tgt,
                                 const PoseVar& initial, const ModelParams& params, const Config& cfg) {
  const int levels = cfg.pose.levels;
  if (static_cast<int>(src.size()) != levels || static_cast<int>(tgt.size()) != levels) {
    throw std::invalid_argument("run_pyramid: expected " + std::to_string(levels) + " levels");
  }
  std::vector<PoseVar> out;
  PoseVar prior = initial;
  for (int l = levels - 1; l >= 0; --l) {
    prior = refine_layer(l, src[static_cast<std::size_t>(l)], tgt[static_cast<std::size_t>(l)], prior, params, cfg);
    out.push_back(prior);
  }
  return out;
}

void declare_pose_params(ParamBuilder& b, const Config& cfg) {
  const int d = cfg.encoder.channels;
  for (int l = cfg.pose.levels - 1; l >= 0; --l) {
    const std::string p = pose_layer_prefix(l);
    b.linear(p + ".cv.pe", 3, d);
    b.linear(p + ".cv.q", d, d);
    b.linear(p + ".cv.k", 2 * d, d);
    b.linear(p + ".cv.mlp1", 2 * d + 3, d);
    b.linear(p + ".cv.mlp2", d, d);
    b.linear(p + ".mask", d, 1);
    b.xavier(p + ".quat.w", d, 4, 0.01);
    b.values(p + ".quat.b", 1, 4, {1.0, 0.0, 0.0, 0.0});
    b.linear(p + ".trans", d, 3, 0.01);
  }
}

}  // namespace dvlo
