#pragma once

#include "dvlo/autodiff.hpp"
#include "dvlo/config.hpp"
#include "dvlo/encoders.hpp"
#include "dvlo/geom.hpp"
#include "dvlo/layers.hpp"
#include "dvlo/params.hpp"

#include <vector>

namespace dvlo {

/// Sampling offsets and weights per (query, camera, sample).
struct SamplePlan {
  int queries = 0;
  int cameras = 1;
  int samples = 1;
  ad::Var offsets;        // N x (Nc*M*2), (du, dv) pairs in feature-map cells
  ad::Var weight_logits;  // N x (Nc*M)
  ad::Var weights;        // softmax of weight_logits

  double offset(int i, int k, int j, int axis) const {
    return offsets(i, ((k * samples) + j) * 2 + axis);
  }
  double weight(int i, int k, int j) const { return weights(i, k * samples + j); }
};

struct FusionMask {
  std::vector<bool> fusable;

  int count() const;
};

/// Per-sample image tokens and their weighted sum.
struct SampledFeatures {
  int tokens_per_query = 0;  // Nc*M, ordered camera-major
  ad::Var tokens;            // (N*Nc*M) x C
  ad::Var weighted;          // N x C, the alpha-weighted sum
};

SamplePlan plan_samples(const QuerySet& queries, const ModelParams& params, const Config& cfg);

/// Value of `map` at a continuous (col, row) location; zero padding.
std::vector<double> bilinear_sample(const FeatureMap& map, double col, double row);

/// Projected (col, row) of every query in cell units of `map`, per camera.
/// Points behind a camera get a location far outside the map.
std::vector<std::array<double, 2>> query_cell_locations(const QuerySet& queries, const CameraModel& cam,
                                                        const FeatureMap& map);

SampledFeatures sample_fuse(const QuerySet& queries, const std::vector<FeatureMap>& maps,
                            const std::vector<CameraModel>& cams, const SamplePlan& plan);

/// F_P plus multi-head attention of each query over its own `tokens`
/// consecutive token rows. `logit_bias` (N x tokens) is optional.
ad::Var cross_attend(const ad::Var& query_feats, const ad::Var& token_rows, int tokens, int heads,
                     const nn::AttentionWeights& w, const ad::Var& logit_bias = {});

FusionMask compute_fusion_mask(const QuerySet& queries, const std::vector<CameraModel>& cams);

/// f + sigmoid(f Wg + bg) * (pool(maps) Wp + bp); pool is the mean over
/// cells, averaged across cameras.
ad::Var global_adaptive_fuse(const ad::Var& fused, const std::vector<FeatureMap>& maps,
                             const ModelParams& params, int level);

/// Fuses one level. Non-fusable queries keep their input feature row.
QuerySet fuse_level(const QuerySet& queries, const std::vector<FeatureMap>& maps,
                    const std::vector<CameraModel>& cams, const ModelParams& params, const Config& cfg,
                    FusionMask* mask_out = nullptr);

void declare_fusion_params(ParamBuilder& b, const Config& cfg);

}  // namespace dvlo
