#include "dvlo/model.hpp"

#include "dvlo/fusion.hpp"

namespace dvlo {

ModelParams init_params(const Config& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams params;
  Rng rng(seed);
  ParamBuilder b(params, rng);
  declare_encoder_params(b, cfg);
  declare_fusion_params(b, cfg);
  declare_pose_params(b, cfg);
  declare_temporal_params(b, cfg);
  b.values("loss.k_t", 1, 1, {cfg.train.k_t0});
  b.values("loss.k_q", 1, 1, {cfg.train.k_q0});
  return params;
}

PreparedFrame prepare_frame(const Frame& frame, const Config& cfg) {
  PreparedFrame out;
  out.layout = build_point_layout(build_pseudo_image(frame.cloud, cfg.pseudo_image.params()), cfg);
  out.image = &frame.image;
  return out;
}

EncodedFrame encode_frame(const PreparedFrame& frame, const std::vector<CameraModel>& cams,
                          const ModelParams& params, const Config& cfg) {
  // The sequence supplies one image per frame; every camera of a multi-view
  // configuration reads the same raster.
  const auto queries = point_feature_pyramid(frame.layout, params, cfg);
  const auto maps = image_feature_pyramid(*frame.image, params, cfg);
  const std::vector<CameraModel> used(cams.begin(), cams.begin() + cfg.fusion.cameras);
  EncodedFrame out;
  for (int l = 0; l < cfg.encoder.levels; ++l) {
    const std::vector<FeatureMap> level_maps(static_cast<std::size_t>(cfg.fusion.cameras),
                                             maps[static_cast<std::size_t>(l)]);
    out.levels.push_back(fuse_level(queries[static_cast<std::size_t>(l)], level_maps, used, params, cfg));
  }
  return out;
}

PairOutput forward_pair(const EncodedFrame& src, const EncodedFrame& tgt, const TemporalState& state,
                        const ModelParams& params, const Config& cfg) {
  const int coarsest = cfg.pose.levels - 1;
  PairOutput out;
  PoseVar initial = PoseVar::constant(RigidMotion::identity(), coarsest);
  TemporalEncoding enc;
  if (cfg.temporal.enabled) {
    const CostVolume cv = attentive_cost_volume(src.levels[static_cast<std::size_t>(coarsest)],
                                                tgt.levels[static_cast<std::size_t>(coarsest)], params, cfg);
    out.ego = ego_refine(ego_feature_init(cv, params), state.mfb, params, cfg);
    enc = temporal_encode(state.mpb, params, cfg);
    initial = predict_initial_pose(out.ego, enc, params, cfg);
  }
  out.layers = run_pyramid(src.levels, tgt.levels, initial, params, cfg);
  if (cfg.temporal.enabled) {
    out.refined = update_refine(out.layers.back(), enc, params);
  } else {
    out.refined = out.layers.back();
    out.refined.level = -1;
  }
  return out;
}

void push_pair_state(TemporalState& state, const PairOutput& out, long tag, const Config& cfg) {
  if (!cfg.temporal.enabled) return;
  step_sequence_state(state, {out.ego.value().begin(), out.ego.value().end()}, out.refined.motion(), tag);
}

std::vector<RigidMotion> estimate_sequence(const SequenceBundle& seq, const ModelParams& params, const Config& cfg) {
  ad::NoGradGuard no_grad;
  if (static_cast<int>(seq.cameras.size()) < cfg.fusion.cameras) {
    throw ConfigError("sequence provides " + std::to_string(seq.cameras.size()) + " cameras, config expects " +
                      std::to_string(cfg.fusion.cameras));
  }
  std::vector<RigidMotion> out;
  if (seq.frames.size() < 2) return out;
  TemporalState state = TemporalState::fresh(cfg);
  EncodedFrame prev = encode_frame(prepare_frame(seq.frames[0], cfg), seq.cameras, params, cfg);
  for (std::size_t i = 1; i < seq.frames.size(); ++i) {
    EncodedFrame cur = encode_frame(prepare_frame(seq.frames[i], cfg), seq.cameras, params, cfg);
    const PairOutput res = forward_pair(prev, cur, state, params, cfg);
    push_pair_state(state, res, static_cast<long>(i - 1), cfg);
    out.push_back(res.refined.motion());
    prev = std::move(cur);
  }
  return out;
}

}  // namespace dvlo
