#pragma once

// Tensor-level reverse-mode differentiation over a small fixed primitive set.
//
// A Var is a handle to a row-major double matrix in a computation graph.
// Every learned operation in the library is composed from the primitives
// declared below, so gradients cover the whole model. backward() seeds a
// 1x1 output and propagates into every reachable node that requires grad.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace dvlo::ad {

struct Node {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(int rows, int cols, std::vector<double> values);
  static Var zeros(int rows, int cols);
  static Var scalar(double v) { return constant(1, 1, {v}); }
  /// Leaf that accumulates gradients.
  static Var parameter(int rows, int cols, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  double operator()(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }
  double item() const { return node_->value.front(); }
  std::span<const double> value() const { return node_->value; }
  std::span<double> mutable_value() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }

  /// Same values, no graph history.
  Var detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Propagates d(output)/d(node) into every reachable node. Gradients of all
/// reachable nodes are reset first, so repeated calls do not accumulate.
void backward(const Var& output);

/// While alive, ops record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Linear algebra and elementwise arithmetic. add/sub/mul broadcast the second
// operand when it is 1xC (row), Rx1 (column) or 1x1.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var exp(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.1);
Var softmax_rows(const Var& a);

// Shape and selection.
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, int start, int count);
/// out.flat[k] = a.flat[index[k]], or 0 where index[k] < 0.
Var gather(const Var& a, int rows, int cols, std::vector<int> index);
/// Rows picked by index; negative entries yield zero rows.
Var gather_rows(const Var& a, const std::vector<int>& index);
Var slice_rows(const Var& a, int start, int count);
Var transpose(const Var& a);
Var reshape(const Var& a, int rows, int cols);
/// Row i taken from `when_true` where mask[i], else from `when_false`.
Var select_rows(const std::vector<bool>& mask, const Var& when_true, const Var& when_false);

// Reductions.
/// Row g of the result is the elementwise max over rows groups[g] of a.
Var max_groups(const Var& a, const std::vector<std::vector<int>>& groups);
/// Sums consecutive blocks of `group` rows: (N*group) x C -> N x C.
Var sum_row_groups(const Var& a, int group);
Var mean_rows(const Var& a);
Var sum_all(const Var& a);
Var l1_norm(const Var& a);
Var l2_norm(const Var& a);

/// Bilinear lookup in an (height*width) x C map at N continuous (col, row)
/// locations. Neighbors outside the grid contribute zero.
Var bilinear_sample(const Var& map, int height, int width, const Var& locations);

// Quaternions as 1x4 rows (w, x, y, z).
/// Row-wise unit normalization; zero rows map to the identity (zero gradient).
Var quat_normalize(const Var& q);
/// Hamilton product of 1x4 rows.
Var quat_mul(const Var& a, const Var& b);
/// Rotates every row of the N x 3 matrix v by the 1x4 unit quaternion q.
Var quat_rotate(const Var& q, const Var& v);

// Operator sugar.
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

}  // namespace dvlo::ad
