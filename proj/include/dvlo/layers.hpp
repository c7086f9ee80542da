#pragma once

// Building blocks shared by the learned modules, composed from ad primitives.

#include "dvlo/autodiff.hpp"
#include "dvlo/params.hpp"

#include <string>

namespace dvlo::nn {

/// x W + b using `prefix.w` / `prefix.b`.
ad::Var linear(const ad::Var& x, const ModelParams& params, const std::string& prefix);

/// Projection weights of one attention block.
struct AttentionWeights {
  ad::Var wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionWeights from(const ModelParams& params, const std::string& prefix);
};

/// Declares `prefix.{q,k,v,o}.{w,b}` for query width dq, token width dk and
/// model width d.
void declare_attention(ParamBuilder& b, const std::string& prefix, int dq, int dk, int d);

/// Scaled dot-product weights. Q is N x D, K is (N*T) x D where rows
/// i*T .. i*T+T-1 are the tokens of query i. `logit_bias`, when defined, is
/// N x T and added to the scores of every head. Returns (N*T) x heads.
ad::Var attention_weights(const ad::Var& q, const ad::Var& k, int tokens, int heads,
                          const ad::Var& logit_bias = {});

/// Weighted token sum per head: weights (N*T) x heads, values (N*T) x D.
ad::Var apply_attention(const ad::Var& weights, const ad::Var& values, int tokens, int heads);

/// Multi-head attention of N queries over per-query token sets, followed by
/// the output projection. No residual is added here.
ad::Var multi_head_attention(const ad::Var& queries, const ad::Var& token_rows, int tokens, int heads,
                             const AttentionWeights& w, const ad::Var& logit_bias = {});

/// Repeats each row of `x` `times` times: row i -> rows i*times .. .
ad::Var repeat_rows(const ad::Var& x, int times);
/// Stacks `x` `times` times: (R x C) -> (times*R x C).
ad::Var tile_rows(const ad::Var& x, int times);

}  // namespace dvlo::nn
