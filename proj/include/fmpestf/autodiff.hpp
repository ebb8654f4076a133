#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fmpestf/tensor.hpp"

namespace fmpestf {

// A learnable tensor with its accumulated gradient.
class Parameter {
 public:
  Parameter(std::string id, Tensor value);

  const std::string& id() const { return id_; }
  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }
  Tensor& grad() { return grad_; }
  const Tensor& grad() const { return grad_; }
  std::size_t size() const { return value_.size(); }

  void zero_grad() { grad_.fill(0.0); }

 private:
  std::string id_;
  Tensor value_;
  Tensor grad_;
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Records executed operations for reverse-mode accumulation. One tape per
// forward evaluation; tapes are not shared between threads.
class Tape {
 public:
  // Receives the tape and the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  // With grad_enabled == false parameters enter as constants and no backward
  // closures are kept (evaluation mode).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Repeated calls for the same Parameter return the same leaf.
  Var parameter(Parameter& p);

  // Appends an operation node. Throws NumericalError when `value` has
  // non-finite entries.
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  // Seeds d(root)/d(root) = 1 for a scalar root and runs the reverse sweep.
  void backward(Var root);
  // Adds leaf gradients from the last backward() into Parameter::grad.
  void accumulate_parameter_grads() const;
  // Leaf gradients from the last backward(), in leaf creation order.
  std::vector<std::pair<Parameter*, Tensor>> parameter_grads() const;

  bool requires_grad(const Var& v) const { return nodes_[v.index()].requires_grad; }
  // Gradient buffer of a node, allocated zeroed on first use.
  Tensor& grad(const Var& v);
  // Gradient after backward(); zero tensor when nothing flowed into v.
  Tensor grad_of(const Var& v) const;

  const Tensor& value(std::size_t index) const { return nodes_[index].value; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* parameter = nullptr;
  };

  bool grad_enabled_ = true;
  // deque keeps values referenced by Var::value() in place as the tape grows.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> parameter_leaves_;
};

namespace ops {

enum class ElementwiseKind {
  kAdd,
  kSubtract,
  kHadamard,
  kSigmoid,
  kTanh,
  kRelu,
  kExp,
};

// Binary kinds broadcast when one operand's shape is a trailing suffix of the
// other's (leading-axis expansion) or a scalar. Unary kinds ignore `b`.
Var elementwise(ElementwiseKind kind, Var a, Var b = {});

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double shift);

Var softmax(Var a, std::size_t axis);
// Sum along one axis; the axis is removed from the result shape.
Var sum(Var a, std::size_t axis);
Var sum_all(Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);

// Affine map along `axis`: weight is [out, in], bias (optional) is [out].
Var linear(Var x, Var weight, Var bias, std::size_t axis);

// Convolution over the last (time) axis of x [C_in, N, t] with weight
// [C_out, C_in, k] and bias [C_out]. Zero padding of (k-1)/2 on the left and
// the remainder on the right keeps the time length.
Var time_conv(Var x, Var weight, Var bias);

// Per-node scaled dot-product attention over time. q, k, v are [C, N, t].
Var time_attention(Var q, Var k, Var v);
// Row-stochastic attention weights [N, t, t]; inspection only.
Tensor time_attention_weights(const Tensor& q, const Tensor& k);

// Elements offset, offset+stride, ... of the last axis.
Var take_time(Var x, std::size_t offset, std::size_t stride);
// Inverse of the even/odd take_time pair: even positions from a, odd from b.
Var interleave_time(Var a, Var b);

// out[c, i, t] = sum_j A[i, j] * h[c, j, t] for A [N, N], h [C, N, t].
Var node_propagate(Var adjacency, Var h);

// Keeps the `k` largest entries of each row (ties to the lower column index).
Var topk_rows(Var a, std::size_t k);
// Divides each row by its sum; rows summing to zero pass through unchanged.
Var row_normalize(Var a);

// Rows of table [S, d] selected by `indices` -> [L, d].
Var gather_rows(Var table, const std::vector<std::size_t>& indices);
// [T, d] -> [d, N, T], copying each time step's vector to every node.
Var expand_nodes(Var x, std::size_t nodes);
// [C, N, T] -> [N, C*T] with feature index c*T + t.
Var flatten_nodes(Var x);

// sum_{|y| > threshold} |y_hat - y| / divisor, y a constant target.
Var masked_abs_error_sum(Var y_hat, const Tensor& target, double threshold, double divisor);

}  // namespace ops
}  // namespace fmpestf
