#pragma once

#include <functional>
#include <span>
#include <vector>

#include "divlab/tensor.hpp"
#include "divlab/util.hpp"

namespace divlab::model {

/// A trainable tensor and the buffer its gradient accumulates into. `grad` may
/// be null when no gradient is wanted.
template <typename T>
struct ParamRef {
  const Matrix<T>* value = nullptr;
  Matrix<T>* grad = nullptr;
};

/// Reverse-mode tape over matrices. Every op appends a node holding its value
/// and, when gradients are recorded, a closure that pushes the node's gradient
/// to its inputs and parameters. Parameters are referenced, never copied.
template <typename T>
class Graph {
 public:
  using Var = int;

  explicit Graph(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Var constant(Matrix<T> value);

  /// Rows of `table` selected by ids; throws on an out-of-range id.
  Var gather_rows(ParamRef<T> table, std::span<const int> ids);
  Var concat_cols(Var a, Var b);
  Var add(Var a, Var b);
  Var add_constant(Var a, const Matrix<T>& c);
  Var scale(Var a, T factor);
  /// x * w + b with w shaped (in, out) and b shaped (1, out).
  Var linear(Var x, ParamRef<T> w, ParamRef<T> b);
  /// x * table^T, for output layers that share an embedding table.
  Var linear_transposed(Var x, ParamRef<T> table, ParamRef<T> b);
  Var layer_norm(Var x, ParamRef<T> gamma, ParamRef<T> beta, T eps = T(1e-5));
  Var relu(Var x);
  /// Inverted dropout; identity when p == 0.
  Var dropout(Var x, T p, Rng& rng);
  /// Scaled dot-product attention split over `heads` column groups.
  /// q is (Tq, d), k and v are (Tk, d). With `causal`, query i sees keys <= i.
  Var attention(Var q, Var k, Var v, int heads, bool causal);
  /// Sum over rows of the label-smoothed cross-entropy of softmax(logits)
  /// against targets; rows whose target equals ignore_id are skipped.
  /// Result is 1 x 1.
  Var cross_entropy(Var logits, std::span<const int> targets, T smoothing, int ignore_id = -1);

  const Matrix<T>& value(Var v) const { return nodes_[v].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Back-propagates d(seed * loss) from a 1 x 1 node.
  void backward(Var loss, T seed = T(1));

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    std::function<void(Graph&, Node&)> back;
  };

  Var push(Matrix<T> value, std::function<void(Graph&, Node&)> back);
  Matrix<T>& grad_of(Var v);

  bool record_;
  std::vector<Node> nodes_;
};

/// Softmax of one row into probabilities, with max subtraction.
template <typename T>
std::vector<T> softmax(std::span<const T> logits);

/// log-sum-exp of one row.
template <typename T>
T log_sum_exp(std::span<const T> logits);

}  // namespace divlab::model
