#include "dvlo/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dvlo {

namespace {

constexpr double kPositionScale = 0.1;
// Stand-in location for queries behind a camera; every bilinear neighbor is
// out of bounds there.
constexpr double kFarOutside = -1.0e6;

std::string level_prefix(int level) { return "fus" + std::to_string(level); }

}  // namespace

int FusionMask::count() const { return static_cast<int>(std::count(fusable.begin(), fusable.end(), true)); }

SamplePlan plan_samples(const QuerySet& queries, const ModelParams& params, const Config& cfg) {
  const std::string p = level_prefix(queries.level);
  SamplePlan plan;
  plan.queries = queries.size();
  plan.cameras = cfg.fusion.cameras;
  plan.samples = cfg.fusion.samples_per_query;
  plan.offsets = nn::linear(queries.features, params, p + ".offset");
  plan.weight_logits = nn::linear(queries.features, params, p + ".weight");
  plan.weights = ad::softmax_rows(plan.weight_logits);
  return plan;
}

std::vector<double> bilinear_sample(const FeatureMap& map, double col, double row) {
  const ad::Var loc = ad::Var::constant(1, 2, {col, row});
  const ad::Var out = ad::bilinear_sample(map.data, map.height, map.width, loc);
  return {out.value().begin(), out.value().end()};
}

std::vector<std::array<double, 2>> query_cell_locations(const QuerySet& queries, const CameraModel& cam,
                                                        const FeatureMap& map) {
  std::vector<std::array<double, 2>> out(queries.positions.size());
  const double inv_stride = 1.0 / map.stride;
  for (std::size_t i = 0; i < queries.positions.size(); ++i) {
    const Projection pr = camera_project(queries.positions[i], cam);
    if (pr.depth <= 0.0) {
      out[i] = {kFarOutside, kFarOutside};
    } else {
      out[i] = {pr.px * inv_stride, pr.py * inv_stride};
    }
  }
  return out;
}

SampledFeatures sample_fuse(const QuerySet& queries, const std::vector<FeatureMap>& maps,
                            const std::vector<CameraModel>& cams, const SamplePlan& plan) {
  const int n = queries.size();
  const int nc = plan.cameras;
  const int m = plan.samples;
  if (static_cast<int>(maps.size()) != nc || static_cast<int>(cams.size()) != nc) {
    throw std::invalid_argument("sample_fuse: expected " + std::to_string(nc) + " cameras");
  }
  if (plan.queries != n) throw std::invalid_argument("sample_fuse: plan does not match queries");
  const int per_query = nc * m;
  const ad::Var offsets = ad::reshape(plan.offsets, n * per_query, 2);

  // Sample each camera's map at its own locations, then interleave the rows
  // back into (query, camera, sample) order.
  std::vector<ad::Var> per_camera;
  std::vector<int> order(static_cast<std::size_t>(n) * per_query);
  for (int k = 0; k < nc; ++k) {
    const auto base = query_cell_locations(queries, cams[k], maps[k]);
    std::vector<double> base_rows(static_cast<std::size_t>(n) * m * 2);
    std::vector<int> rows(static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        const std::size_t r = static_cast<std::size_t>(i) * m + j;
        base_rows[2 * r] = base[i][0];
        base_rows[2 * r + 1] = base[i][1];
        rows[r] = (i * nc + k) * m + j;
        order[static_cast<std::size_t>(rows[r])] = k * n * m + static_cast<int>(r);
      }
    }
    const ad::Var loc = ad::Var::constant(n * m, 2, std::move(base_rows)) + ad::gather_rows(offsets, rows);
    per_camera.push_back(ad::bilinear_sample(maps[k].data, maps[k].height, maps[k].width, loc));
  }
  SampledFeatures out;
  out.tokens_per_query = per_query;
  out.tokens = ad::gather_rows(nc == 1 ? per_camera.front() : ad::concat_rows(per_camera), order);
  const ad::Var alpha = ad::reshape(plan.weights, n * per_query, 1);
  out.weighted = ad::sum_row_groups(out.tokens * alpha, per_query);
  return out;
}

ad::Var cross_attend(const ad::Var& query_feats, const ad::Var& token_rows, int tokens, int heads,
                     const nn::AttentionWeights& w, const ad::Var& logit_bias) {
  return query_feats + nn::multi_head_attention(query_feats, token_rows, tokens, heads, w, logit_bias);
}

FusionMask compute_fusion_mask(const QuerySet& queries, const std::vector<CameraModel>& cams) {
  FusionMask mask;
  mask.fusable.assign(queries.positions.size(), false);
  for (std::size_t i = 0; i < queries.positions.size(); ++i) {
    for (const auto& cam : cams) {
      if (camera_project(queries.positions[i], cam).in_view) {
        mask.fusable[i] = true;
        break;
      }
    }
  }
  return mask;
}

ad::Var global_adaptive_fuse(const ad::Var& fused, const std::vector<FeatureMap>& maps,
                             const ModelParams& params, int level) {
  const std::string p = level_prefix(level) + ".global";
  std::vector<ad::Var> pools;
  for (const auto& m : maps) pools.push_back(ad::mean_rows(m.data));
  ad::Var pool = pools.front();
  if (pools.size() > 1) pool = ad::mean_rows(ad::concat_rows(pools));
  const ad::Var proj = nn::linear(pool, params, p + ".proj");
  const ad::Var gate = ad::sigmoid(nn::linear(fused, params, p + ".gate"));
  return fused + gate * proj;
}

QuerySet fuse_level(const QuerySet& queries, const std::vector<FeatureMap>& maps,
                    const std::vector<CameraModel>& cams, const ModelParams& params, const Config& cfg,
                    FusionMask* mask_out) {
  FusionMask mask = compute_fusion_mask(queries, cams);
  QuerySet out = queries;
  if (mask.count() > 0) {
    const std::string p = level_prefix(queries.level);
    const SamplePlan plan = plan_samples(queries, params, cfg);
    const SampledFeatures sampled = sample_fuse(queries, maps, cams, plan);

    std::vector<double> pos(queries.positions.size() * 3);
    for (std::size_t i = 0; i < queries.positions.size(); ++i)
      for (int a = 0; a < 3; ++a) pos[3 * i + a] = queries.positions[i][a] * kPositionScale;
    const ad::Var pos_embed = nn::linear(ad::Var::constant(queries.size(), 3, std::move(pos)), params, p + ".pos");

    // Attention logits are biased by the raw weight logits; per query this
    // differs from log(alpha) by a constant, which softmax ignores.
    const nn::AttentionWeights w = nn::AttentionWeights::from(params, p + ".attn");
    const ad::Var attended = queries.features + nn::multi_head_attention(queries.features + pos_embed, sampled.tokens,
                                                                         sampled.tokens_per_query, cfg.fusion.heads,
                                                                         w, plan.weight_logits);
    ad::Var fused = attended;
    if (cfg.fusion.enable_global) fused = global_adaptive_fuse(attended, maps, params, queries.level);
    out.features = ad::select_rows(mask.fusable, fused, queries.features);
  }
  if (mask_out) *mask_out = std::move(mask);
  return out;
}

void declare_fusion_params(ParamBuilder& b, const Config& cfg) {
  const int d = cfg.encoder.channels;
  const int per_query = cfg.fusion.cameras * cfg.fusion.samples_per_query;
  for (int l = 0; l < cfg.encoder.levels; ++l) {
    const std::string p = level_prefix(l);
    b.zeros(p + ".offset.w", d, per_query * 2);
    b.zeros(p + ".offset.b", 1, per_query * 2);
    b.zeros(p + ".weight.w", d, per_query);
    b.zeros(p + ".weight.b", 1, per_query);
    b.linear(p + ".pos", 3, d);
    nn::declare_attention(b, p + ".attn", d, d, d);
    b.linear(p + ".global.proj", d, d);
    b.linear(p + ".global.gate", d, d);
  }
}

}  // namespace dvlo
