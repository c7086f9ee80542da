#pragma once

#include "dvlo/autodiff.hpp"
#include "dvlo/config.hpp"
#include "dvlo/encoders.hpp"
#include "dvlo/geom.hpp"
#include "dvlo/params.hpp"

#include <string>
#include <vector>

namespace dvlo {

/// Differentiable pose: q is 1x4 (w, x, y, z), t is 1x3. Maps source-frame
/// points into the target frame.
struct PoseVar {
  ad::Var q;
  ad::Var t;
  int level = 0;  // producing layer; -1 for the temporally refined output

  static PoseVar constant(const RigidMotion& m, int level);
  RigidMotion motion() const;
};

struct PoseEstimate {
  RigidMotion motion;
  int level = 0;
};

struct CostVolume {
  int level = 0;
  ad::Var embeddings;       // N x D
  std::vector<bool> valid;  // source query validity
};

/// Indices of the k nearest valid targets of `p` (squared distance, ties by
/// index), nearest first.
std::vector<int> nearest_targets(const Vec3& p, const std::vector<Vec3>& targets, const std::vector<bool>& valid,
                                 int k);

/// Attentive cost volume between source queries at `src_positions` (N x 3,
/// possibly warped) and target queries. Parameters `<prefix>.*`.
CostVolume attentive_cost_volume(const ad::Var& src_positions, const ad::Var& src_features,
                                 const std::vector<bool>& src_valid, const QuerySet& tgt, const ModelParams& params,
                                 const std::string& prefix, int knn);
CostVolume attentive_cost_volume(const QuerySet& src, const QuerySet& tgt, const ModelParams& params,
                                 const Config& cfg);

/// Learnable-mask pooling of the embeddings followed by quaternion and
/// translation heads. Parameters `<prefix>.*`.
PoseVar coarse_pose_head(const CostVolume& cv, const ModelParams& params, const std::string& prefix);
PoseVar coarse_pose_head(const CostVolume& cv, const ModelParams& params);

/// Mask weights (1 x N) of the head; invalid queries get zero weight.
ad::Var pose_mask_weights(const CostVolume& cv, const ModelParams& params, const std::string& prefix);

/// Positions of `queries` as an N x 3 constant.
ad::Var position_matrix(const QuerySet& queries);

/// Warps source query positions by `prior` (rotation then translation).
ad::Var warp_positions(const ad::Var& positions, const PoseVar& prior);

/// Differentiable cascade update: q = dq ⊗ q_prior, t = dq t_prior dq^-1 + dt.
PoseVar compose_residual(const PoseVar& delta, const PoseVar& prior, int level);

/// One refinement layer: warp, re-correlate, regress residual, compose.
PoseVar refine_layer(int level, const QuerySet& src, const QuerySet& tgt, const PoseVar& prior,
                     const ModelParams& params, const Config& cfg);

/// Estimates for every layer, index 0 = coarsest (level L-1).
std::vector<PoseVar> run_pyramid(const std::vector<QuerySet>& src, const std::vector<QuerySet>& tgt,
                                 const PoseVar& initial, const ModelParams& params, const Config& cfg);

void declare_pose_params(ParamBuilder& b, const Config& cfg);

std::string pose_layer_prefix(int level);

}  // namespace dvlo
