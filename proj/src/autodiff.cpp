#include "dvlo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace dvlo::ad {
namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

void check(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(std::string("autodiff: ") + what);
}

// Builds a result node. The closure is recorded only if some input needs grad.
Var make(int rows, int cols, std::vector<double> value, std::vector<NodePtr> inputs,
         std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(bw);
  }
  return Var(std::move(n));
}

bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

enum class Bcast { kSame, kRow, kCol, kScalar };

Bcast broadcast_kind(const Var& a, const Var& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::kCol;
  throw std::invalid_argument("autodiff: incompatible shapes " + std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()));
}

inline std::size_t bidx(Bcast k, int r, int c, int cols) {
  switch (k) {
    case Bcast::kSame: return static_cast<std::size_t>(r) * cols + c;
    case Bcast::kRow: return static_cast<std::size_t>(c);
    case Bcast::kCol: return static_cast<std::size_t>(r);
    case Bcast::kScalar: return 0;
  }
  return 0;
}

template <typename Fwd, typename Dfa, typename Dfb>
Var binary(const Var& a, const Var& b, Fwd fwd, Dfa dfa, Dfb dfb) {
  const Bcast k = broadcast_kind(a, b);
  const int R = a.rows(), C = a.cols();
  std::vector<double> out(a.size());
  const auto av = a.value();
  const auto bv = b.value();
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * C + c;
      out[i] = fwd(av[i], bv[bidx(k, r, c, C)]);
    }
  return make(R, C, std::move(out), {a.node(), b.node()}, [k, R, C, dfa, dfb](Node& self) {
    const Node& na = *self.inputs[0];
    const Node& nb = *self.inputs[1];
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * C + c;
        const std::size_t j = bidx(k, r, c, C);
        const double g = self.grad[i];
        if (na.requires_grad) self.inputs[0]->grad[i] += g * dfa(na.value[i], nb.value[j]);
        if (nb.requires_grad) self.inputs[1]->grad[j] += g * dfb(na.value[i], nb.value[j]);
      }
  });
}

template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.size());
  const auto av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make(a.rows(), a.cols(), std::move(out), {a.node()}, [deriv](Node& self) {
    Node& na = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      na.grad[i] += self.grad[i] * deriv(na.value[i], self.value[i]);
    }
  });
}

}  // namespace

Var Var::constant(int rows, int cols, std::vector<double> values) {
  check(values.size() == static_cast<std::size_t>(rows) * cols, "constant size mismatch");
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(values);
  return Var(std::move(n));
}

Var Var::zeros(int rows, int cols) {
  return constant(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0));
}

Var Var::parameter(int rows, int cols, std::vector<double> values) {
  Var v = constant(rows, cols, std::move(values));
  v.node_->requires_grad = true;
  return v;
}

Var Var::detach() const { return constant(rows(), cols(), node_->value); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& output) {
  check(output.size() == 1, "backward needs a scalar output");
  if (!output.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  seen.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
  output.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul inner dimension mismatch");
  const int n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (int i = 0; i < n; ++i) {
    double* orow = out.data() + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double s = av[static_cast<std::size_t>(i) * k + p];
      const double* brow = bv + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) orow[j] += s * brow[j];
    }
  }
  return make(n, m, std::move(out), {a.node(), b.node()}, [n, k, m](Node& self) {
    const double* g = self.grad.data();
    if (wants(self, 0)) {
      // dA = G B^T
      const double* bv = self.inputs[1]->value.data();
      double* ga = self.inputs[0]->grad.data();
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = g + static_cast<std::size_t>(i) * m;
          const double* brow = bv + static_cast<std::size_t>(p) * m;
          for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
          ga[static_cast<std::size_t>(i) * k + p] += acc;
        }
    }
    if (wants(self, 1)) {
      // dB = A^T G
      const double* av = self.inputs[0]->value.data();
      double* gb = self.inputs[1]->grad.data();
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
          const double s = av[static_cast<std::size_t>(i) * k + p];
          if (s == 0.0) continue;
          const double* grow = g + static_cast<std::size_t>(i) * m;
          double* gbrow = gb + static_cast<std::size_t>(p) * m;
          for (int j = 0; j < m; ++j) gbrow[j] += s * grow[j];
        }
    }
  });
}

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(const Var& a, double s) {
  return unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var softmax_rows(const Var& a) {
  const int R = a.rows(), C = a.cols();
  std::vector<double> out(a.size(), 0.0);
  const auto av = a.value();
  for (int r = 0; r < R; ++r) {
    const double* row = av.data() + static_cast<std::size_t>(r) * C;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < C; ++c) mx = std::max(mx, row[c]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked row
    double sum = 0.0;
    double* orow = out.data() + static_cast<std::size_t>(r) * C;
    for (int c = 0; c < C; ++c) {
      orow[c] = std::exp(row[c] - mx);
      sum += orow[c];
    }
    for (int c = 0; c < C; ++c) orow[c] /= sum;
  }
  return make(R, C, std::move(out), {a.node()}, [R, C](Node& self) {
    double* ga = self.inputs[0]->grad.data();
    for (int r = 0; r < R; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * C;
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += self.grad[off + c] * self.value[off + c];
      for (int c = 0; c < C; ++c) ga[off + c] += self.value[off + c] * (self.grad[off + c] - dot);
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat of nothing");
  const int R = parts.front().rows();
  int C = 0;
  for (const auto& p : parts) {
    check(p.rows() == R, "concat_cols row mismatch");
    C += p.cols();
  }
  std::vector<double> out(static_cast<std::size_t>(R) * C);
  std::vector<NodePtr> inputs;
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    for (int r = 0; r < R; ++r)
      std::copy_n(p.value().data() + static_cast<std::size_t>(r) * p.cols(), p.cols(),
                  out.data() + static_cast<std::size_t>(r) * C + off);
    inputs.push_back(p.node());
    offsets.push_back(off);
    off += p.cols();
  }
  return make(R, C, std::move(out), std::move(inputs), [R, C, offsets](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < in.cols; ++c)
          in.grad[static_cast<std::size_t>(r) * in.cols + c] +=
              self.grad[static_cast<std::size_t>(r) * C + offsets[k] + c];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat of nothing");
  const int C = parts.front().cols();
  int R = 0;
  for (const auto& p : parts) {
    check(p.cols() == C, "concat_rows column mismatch");
    R += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(R) * C);
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    out.insert(out.end(), p.value().begin(), p.value().end());
    inputs.push_back(p.node());
  }
  return make(R, C, std::move(out), std::move(inputs), [](Node& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      if (in->requires_grad) {
        for (std::size_t i = 0; i < in->value.size(); ++i) in->grad[i] += self.grad[off + i];
      }
      off += in->value.size();
    }
  });
}

Var gather(const Var& a, int rows, int cols, std::vector<int> index) {
  check(index.size() == static_cast<std::size_t>(rows) * cols, "gather index size mismatch");
  std::vector<double> out(index.size(), 0.0);
  const auto av = a.value();
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= 0) out[k] = av[static_cast<std::size_t>(index[k])];
  }
  return make(rows, cols, std::move(out), {a.node()}, [index = std::move(index)](Node& self) {
    auto& ga = self.inputs[0]->grad;
    for (std::size_t k = 0; k < index.size(); ++k) {
      if (index[k] >= 0) ga[static_cast<std::size_t>(index[k])] += self.grad[k];
    }
  });
}

Var gather_rows(const Var& a, const std::vector<int>& index) {
  const int C = a.cols();
  std::vector<int> flat(index.size() * C);
  for (std::size_t i = 0; i < index.size(); ++i) {
    check(index[i] < a.rows(), "gather_rows index out of range");
    for (int c = 0; c < C; ++c) flat[i * C + c] = index[i] < 0 ? -1 : index[i] * C + c;
  }
  return gather(a, static_cast<int>(index.size()), C, std::move(flat));
}

Var slice_cols(const Var& a, int start, int count) {
  check(start >= 0 && start + count <= a.cols(), "slice_cols out of range");
  std::vector<int> flat(static_cast<std::size_t>(a.rows()) * count);
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < count; ++c) flat[static_cast<std::size_t>(r) * count + c] = r * a.cols() + start + c;
  return gather(a, a.rows(), count, std::move(flat));
}

Var slice_rows(const Var& a, int start, int count) {
  check(start >= 0 && start + count <= a.rows(), "slice_rows out of range");
  std::vector<int> idx(count);
  for (int i = 0; i < count; ++i) idx[i] = start + i;
  return gather_rows(a, idx);
}

Var transpose(const Var& a) {
  const int R = a.rows(), C = a.cols();
  std::vector<int> flat(static_cast<std::size_t>(R) * C);
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < R; ++r) flat[static_cast<std::size_t>(c) * R + r] = r * C + c;
  return gather(a, C, R, std::move(flat));
}

Var reshape(const Var& a, int rows, int cols) {
  check(static_cast<std::size_t>(rows) * cols == a.size(), "reshape size mismatch");
  return make(rows, cols, std::vector<double>(a.value().begin(), a.value().end()), {a.node()},
              [](Node& self) {
                auto& ga = self.inputs[0]->grad;
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
              });
}

Var select_rows(const std::vector<bool>& mask, const Var& when_true, const Var& when_false) {
  check(when_true.rows() == when_false.rows() && when_true.cols() == when_false.cols(),
        "select_rows shape mismatch");
  check(mask.size() == static_cast<std::size_t>(when_true.rows()), "select_rows mask size");
  const int C = when_true.cols();
  std::vector<double> out(when_true.size());
  for (std::size_t r = 0; r < mask.size(); ++r) {
    const auto src = mask[r] ? when_true.value() : when_false.value();
    std::copy_n(src.data() + r * C, C, out.data() + r * C);
  }
  return make(when_true.rows(), C, std::move(out), {when_true.node(), when_false.node()},
              [mask, C](Node& self) {
                for (std::size_t r = 0; r < mask.size(); ++r) {
                  Node& dst = *self.inputs[mask[r] ? 0 : 1];
                  if (!dst.requires_grad) continue;
                  for (int c = 0; c < C; ++c) dst.grad[r * C + c] += self.grad[r * C + c];
                }
              });
}

Var max_groups(const Var& a, const std::vector<std::vector<int>>& groups) {
  const int C = a.cols();
  const int G = static_cast<int>(groups.size());
  std::vector<double> out(static_cast<std::size_t>(G) * C);
  std::vector<int> arg(out.size());
  const auto av = a.value();
  for (int g = 0; g < G; ++g) {
    check(!groups[g].empty(), "max over an empty group");
    for (int c = 0; c < C; ++c) {
      int best = groups[g].front();
      for (int r : groups[g]) {
        if (av[static_cast<std::size_t>(r) * C + c] > av[static_cast<std::size_t>(best) * C + c]) best = r;
      }
      out[static_cast<std::size_t>(g) * C + c] = av[static_cast<std::size_t>(best) * C + c];
      arg[static_cast<std::size_t>(g) * C + c] = best * C + c;
    }
  }
  return make(G, C, std::move(out), {a.node()}, [arg = std::move(arg)](Node& self) {
    auto& ga = self.inputs[0]->grad;
    for (std::size_t k = 0; k < arg.size(); ++k) ga[static_cast<std::size_t>(arg[k])] += self.grad[k];
  });
}

Var sum_row_groups(const Var& a, int group) {
  check(group > 0 && a.rows() % group == 0, "sum_row_groups: rows not divisible by group");
  const int N = a.rows() / group, C = a.cols();
  std::vector<double> out(static_cast<std::size_t>(N) * C, 0.0);
  const auto av = a.value();
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < group; ++j)
      for (int c = 0; c < C; ++c)
        out[static_cast<std::size_t>(i) * C + c] += av[(static_cast<std::size_t>(i) * group + j) * C + c];
  return make(N, C, std::move(out), {a.node()}, [N, C, group](Node& self) {
    auto& ga = self.inputs[0]->grad;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < group; ++j)
        for (int c = 0; c < C; ++c)
          ga[(static_cast<std::size_t>(i) * group + j) * C + c] += self.grad[static_cast<std::size_t>(i) * C + c];
  });
}

Var mean_rows(const Var& a) {
  const int R = a.rows(), C = a.cols();
  check(R > 0, "mean of zero rows");
  std::vector<double> out(C, 0.0);
  const auto av = a.value();
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out[c] += av[static_cast<std::size_t>(r) * C + c];
  for (auto& v : out) v /= R;
  return make(1, C, std::move(out), {a.node()}, [R, C](Node& self) {
    auto& ga = self.inputs[0]->grad;
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) ga[static_cast<std::size_t>(r) * C + c] += self.grad[c] / R;
  });
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  return make(1, 1, {s}, {a.node()}, [](Node& self) {
    for (auto& g : self.inputs[0]->grad) g += self.grad[0];
  });
}

Var l1_norm(const Var& a) {
  double s = 0.0;
  for (double v : a.value()) s += std::abs(v);
  return make(1, 1, {s}, {a.node()}, [](Node& self) {
    Node& in = *self.inputs[0];
    for (std::size_t i = 0; i < in.value.size(); ++i) {
      const double v = in.value[i];
      in.grad[i] += self.grad[0] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
    }
  });
}

Var l2_norm(const Var& a) {
  double s = 0.0;
  for (double v : a.value()) s += v * v;
  const double n = std::sqrt(s);
  return make(1, 1, {n}, {a.node()}, [n](Node& self) {
    if (n == 0.0) return;
    Node& in = *self.inputs[0];
    for (std::size_t i = 0; i < in.value.size(); ++i) in.grad[i] += self.grad[0] * in.value[i] / n;
  });
}

Var bilinear_sample(const Var& map, int height, int width, const Var& locations) {
  check(map.rows() == height * width, "bilinear_sample map shape");
  check(locations.cols() == 2, "bilinear_sample locations must be N x 2");
  const int N = locations.rows(), C = map.cols();
  std::vector<double> out(static_cast<std::size_t>(N) * C, 0.0);
  const auto mv = map.value();
  const auto lv = locations.value();
  auto cell = [height, width](int r, int c) -> int {
    return (r >= 0 && r < height && c >= 0 && c < width) ? r * width + c : -1;
  };
  for (int i = 0; i < N; ++i) {
    const double x = lv[2 * i], y = lv[2 * i + 1];
    const double x0f = std::floor(x), y0f = std::floor(y);
    if (!std::isfinite(x0f) || !std::isfinite(y0f) || std::abs(x0f) > 1e9 || std::abs(y0f) > 1e9) continue;
    const int x0 = static_cast<int>(x0f), y0 = static_cast<int>(y0f);
    const double fx = x - x0f, fy = y - y0f;
    const int idx[4] = {cell(y0, x0), cell(y0, x0 + 1), cell(y0 + 1, x0), cell(y0 + 1, x0 + 1)};
    const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    for (int k = 0; k < 4; ++k) {
      if (idx[k] < 0) continue;
      for (int c = 0; c < C; ++c) {
        out[static_cast<std::size_t>(i) * C + c] += w[k] * mv[static_cast<std::size_t>(idx[k]) * C + c];
      }
    }
  }
  return make(N, C, std::move(out), {map.node(), locations.node()}, [N, C, cell](Node& self) {
    Node& nm = *self.inputs[0];
    Node& nl = *self.inputs[1];
    for (int i = 0; i < N; ++i) {
      const double x = nl.value[2 * i], y = nl.value[2 * i + 1];
      const double x0f = std::floor(x), y0f = std::floor(y);
      if (!std::isfinite(x0f) || !std::isfinite(y0f) || std::abs(x0f) > 1e9 || std::abs(y0f) > 1e9) continue;
      const int x0 = static_cast<int>(x0f), y0 = static_cast<int>(y0f);
      const double fx = x - x0f, fy = y - y0f;
      const int idx[4] = {cell(y0, x0), cell(y0, x0 + 1), cell(y0 + 1, x0), cell(y0 + 1, x0 + 1)};
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const double dwx[4] = {-(1 - fy), (1 - fy), -fy, fy};
      const double dwy[4] = {-(1 - fx), -fx, (1 - fx), fx};
      double gx = 0.0, gy = 0.0;
      for (int k = 0; k < 4; ++k) {
        if (idx[k] < 0) continue;
        for (int c = 0; c < C; ++c) {
          const double g = self.grad[static_cast<std::size_t>(i) * C + c];
          const std::size_t m = static_cast<std::size_t>(idx[k]) * C + c;
          if (nm.requires_grad) nm.grad[m] += w[k] * g;
          gx += dwx[k] * nm.value[m] * g;
          gy += dwy[k] * nm.value[m] * g;
        }
      }
      if (nl.requires_grad) {
        nl.grad[2 * i] += gx;
        nl.grad[2 * i + 1] += gy;
      }
    }
  });
}

Var quat_normalize(const Var& q) {
  check(q.cols() == 4, "quat_normalize needs N x 4");
  const int N = q.rows();
  std::vector<double> out(q.size());
  std::vector<double> norms(N);
  const auto qv = q.value();
  for (int i = 0; i < N; ++i) {
    const double* r = qv.data() + 4 * i;
    const double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + r[3] * r[3]);
    norms[i] = n;
    if (n == 0.0) {
      out[4 * i] = 1.0;
      out[4 * i + 1] = out[4 * i + 2] = out[4 * i + 3] = 0.0;
    } else {
      for (int k = 0; k < 4; ++k) out[4 * i + k] = r[k] / n;
    }
  }
  return make(N, 4, std::move(out), {q.node()}, [N, norms = std::move(norms)](Node& self) {
    auto& gq = self.inputs[0]->grad;
    for (int i = 0; i < N; ++i) {
      if (norms[i] == 0.0) continue;
      const double* u = self.value.data() + 4 * i;
      const double* g = self.grad.data() + 4 * i;
      const double dot = u[0] * g[0] + u[1] * g[1] + u[2] * g[2] + u[3] * g[3];
      for (int k = 0; k < 4; ++k) gq[4 * i + k] += (g[k] - u[k] * dot) / norms[i];
    }
  });
}

namespace {

// Left-multiplication matrix: a ⊗ b = L(a) b.
void left_matrix(const double* a, double m[4][4]) {
  const double w = a[0], x = a[1], y = a[2], z = a[3];
  const double v[4][4] = {{w, -x, -y, -z}, {x, w, -z, y}, {y, z, w, -x}, {z, -y, x, w}};
  std::copy(&v[0][0], &v[0][0] + 16, &m[0][0]);
}

// Right-multiplication matrix: a ⊗ b = R(b) a.
void right_matrix(const double* b, double m[4][4]) {
  const double w = b[0], x = b[1], y = b[2], z = b[3];
  const double v[4][4] = {{w, -x, -y, -z}, {x, w, z, -y}, {y, -z, w, x}, {z, y, -x, w}};
  std::copy(&v[0][0], &v[0][0] + 16, &m[0][0]);
}

}  // namespace

Var quat_mul(const Var& a, const Var& b) {
  check(a.rows() == 1 && a.cols() == 4 && b.rows() == 1 && b.cols() == 4, "quat_mul needs 1 x 4");
  const double* p = a.value().data();
  const double* q = b.value().data();
  std::vector<double> out = {p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
                             p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
                             p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
                             p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0]};
  return make(1, 4, std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    double m[4][4];
    if (na.requires_grad) {
      right_matrix(nb.value.data(), m);
      for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 4; ++r) na.grad[c] += m[r][c] * self.grad[r];
    }
    if (nb.requires_grad) {
      left_matrix(na.value.data(), m);
      for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 4; ++r) nb.grad[c] += m[r][c] * self.grad[r];
    }
  });
}

Var quat_rotate(const Var& q, const Var& v) {
  check(q.rows() == 1 && q.cols() == 4, "quat_rotate needs a 1 x 4 quaternion");
  check(v.cols() == 3, "quat_rotate needs N x 3 vectors");
  const int N = v.rows();
  const double* qv = q.value().data();
  const double w = qv[0], u[3] = {qv[1], qv[2], qv[3]};
  auto cross = [](const double* a, const double* b, double* o) {
    o[0] = a[1] * b[2] - a[2] * b[1];
    o[1] = a[2] * b[0] - a[0] * b[2];
    o[2] = a[0] * b[1] - a[1] * b[0];
  };
  std::vector<double> out(v.size());
  const auto vv = v.value();
  for (int i = 0; i < N; ++i) {
    const double* p = vv.data() + 3 * i;
    double c[3], uc[3];
    cross(u, p, c);
    cross(u, c, uc);
    for (int k = 0; k < 3; ++k) out[3 * i + k] = p[k] + 2.0 * w * c[k] + 2.0 * uc[k];
  }
  return make(N, 3, std::move(out), {q.node(), v.node()}, [N, cross](Node& self) {
    Node& nq = *self.inputs[0];
    Node& nv = *self.inputs[1];
    const double w = nq.value[0];
    const double u[3] = {nq.value[1], nq.value[2], nq.value[3]};
    double gw = 0.0, gu[3] = {0.0, 0.0, 0.0};
    for (int i = 0; i < N; ++i) {
      const double* p = nv.value.data() + 3 * i;
      const double* g = self.grad.data() + 3 * i;
      if (nv.requires_grad) {
        // J_v^T g = g + 2w (g x u) + 2 u x (u x g)
        double gxu[3], uxg[3], uuxg[3];
        cross(g, u, gxu);
        cross(u, g, uxg);
        cross(u, uxg, uuxg);
        for (int k = 0; k < 3; ++k) nv.grad[3 * i + k] += g[k] + 2.0 * w * gxu[k] + 2.0 * uuxg[k];
      }
      if (nq.requires_grad) {
        double uxv[3], vxg[3];
        cross(u, p, uxv);
        cross(p, g, vxg);
        const double ud = u[0] * p[0] + u[1] * p[1] + u[2] * p[2];
        const double gu_dot = g[0] * u[0] + g[1] * u[1] + g[2] * u[2];
        const double gv = g[0] * p[0] + g[1] * p[1] + g[2] * p[2];
        gw += 2.0 * (uxv[0] * g[0] + uxv[1] * g[1] + uxv[2] * g[2]);
        for (int k = 0; k < 3; ++k) {
          gu[k] += 2.0 * w * vxg[k] + 2.0 * (g[k] * ud + p[k] * gu_dot - 2.0 * u[k] * gv);
        }
      }
    }
    if (nq.requires_grad) {
      nq.grad[0] += gw;
      for (int k = 0; k < 3; ++k) nq.grad[1 + k] += gu[k];
    }
  });
}

}  // namespace dvlo::ad
