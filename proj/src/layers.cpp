#include "dvlo/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace dvlo::nn {

ad::Var linear(const ad::Var& x, const ModelParams& params, const std::string& prefix) {
  return ad::matmul(x, params.get(prefix + ".w")) + params.get(prefix + ".b");
}

AttentionWeights AttentionWeights::from(const ModelParams& params, const std::string& prefix) {
  return {params.get(prefix + ".q.w"), params.get(prefix + ".q.b"), params.get(prefix + ".k.w"),
          params.get(prefix + ".k.b"), params.get(prefix + ".v.w"), params.get(prefix + ".v.b"),
          params.get(prefix + ".o.w"), params.get(prefix + ".o.b")};
}

void declare_attention(ParamBuilder& b, const std::string& prefix, int dq, int dk, int d) {
  b.linear(prefix + ".q", dq, d);
  b.linear(prefix + ".k", dk, d);
  b.linear(prefix + ".v", dk, d);
  b.linear(prefix + ".o", d, d);
}

ad::Var repeat_rows(const ad::Var& x, int times) {
  std::vector<int> idx(static_cast<std::size_t>(x.rows()) * times);
  for (int i = 0; i < x.rows(); ++i)
    for (int t = 0; t < times; ++t) idx[static_cast<std::size_t>(i) * times + t] = i;
  return ad::gather_rows(x, idx);
}

ad::Var tile_rows(const ad::Var& x, int times) {
  std::vector<int> idx(static_cast<std::size_t>(x.rows()) * times);
  for (int t = 0; t < times; ++t)
    for (int i = 0; i < x.rows(); ++i) idx[static_cast<std::size_t>(t) * x.rows() + i] = i;
  return ad::gather_rows(x, idx);
}

namespace {

// D x heads block matrix summing the columns of each head.
ad::Var head_sum_matrix(int d, int heads) {
  const int dh = d / heads;
  std::vector<double> m(static_cast<std::size_t>(d) * heads, 0.0);
  for (int c = 0; c < d; ++c) m[static_cast<std::size_t>(c) * heads + c / dh] = 1.0;
  return ad::Var::constant(d, heads, std::move(m));
}

}  // namespace

ad::Var attention_weights(const ad::Var& q, const ad::Var& k, int tokens, int heads, const ad::Var& logit_bias) {
  const int n = q.rows();
  const int d = q.cols();
  if (d % heads != 0) throw std::invalid_argument("attention width not divisible by heads");
  if (k.rows() != n * tokens || k.cols() != d) throw std::invalid_argument("attention key shape mismatch");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d / heads));
  // scores[(i*T + j), h] = <q_i, k_ij>_h / sqrt(dh)
  ad::Var scores = ad::scale(ad::matmul(repeat_rows(q, tokens) * k, head_sum_matrix(d, heads)), inv_sqrt);
  if (logit_bias.defined()) scores = scores + ad::reshape(logit_bias, n * tokens, 1);
  // Regroup to (N*heads) x T so that softmax runs over each query's tokens.
  std::vector<int> to_rows(static_cast<std::size_t>(n) * heads * tokens);
  std::vector<int> back(to_rows.size());
  for (int i = 0; i < n; ++i)
    for (int h = 0; h < heads; ++h)
      for (int j = 0; j < tokens; ++j) {
        const int src = (i * tokens + j) * heads + h;
        const int dst = (i * heads + h) * tokens + j;
        to_rows[dst] = src;
        back[src] = dst;
      }
  ad::Var probs = ad::softmax_rows(ad::gather(scores, n * heads, tokens, std::move(to_rows)));
  return ad::gather(probs, n * tokens, heads, std::move(back));
}

ad::Var apply_attention(const ad::Var& weights, const ad::Var& values, int tokens, int heads) {
  const int d = values.cols();
  ad::Var expanded = ad::matmul(weights, ad::transpose(head_sum_matrix(d, heads)));
  return ad::sum_row_groups(expanded * values, tokens);
}

ad::Var multi_head_attention(const ad::Var& queries, const ad::Var& token_rows, int tokens, int heads,
                             const AttentionWeights& w, const ad::Var& logit_bias) {
  const ad::Var q = ad::matmul(queries, w.wq) + w.bq;
  const ad::Var k = ad::matmul(token_rows, w.wk) + w.bk;
  const ad::Var v = ad::matmul(token_rows, w.wv) + w.bv;
  const ad::Var a = attention_weights(q, k, tokens, heads, logit_bias);
  return ad::matmul(apply_attention(a, v, tokens, heads), w.wo) + w.bo;
}

}  // namespace dvlo::nn
