#include "fmpestf/autodiff.hpp"

#include "fmpestf/errors.hpp"

namespace fmpestf {

Parameter::Parameter(std::string id, Tensor value)
    : id_(std::move(id)), value_(std::move(value)), grad_(value_.shape(), 0.0) {}

const Tensor& Var::value() const { return tape_->value(index_); }

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericalError("non-finite constant recorded on tape");
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  if (auto it = parameter_leaves_.find(&p); it != parameter_leaves_.end()) {
    return Var(this, it->second);
  }
  if (!p.value().all_finite()) throw NumericalError("parameter " + p.id() + " holds non-finite values");
  Node node;
  node.op = "parameter";
  node.value = p.value();
  node.requires_grad = grad_enabled_;
  node.parameter = &p;
  nodes_.push_back(std::move(node));
  parameter_leaves_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced by " + std::string(op) + " (shape " +
                         shape_string(value.shape()) + ")");
  }
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.valid() && nodes_[in.index()].requires_grad) node.requires_grad = true;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(const Var& v) {
  Node& node = nodes_[v.index()];
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

Tensor Tape::grad_of(const Var& v) const {
  const Node& node = nodes_[v.index()];
  return node.has_grad ? node.grad : Tensor(node.value.shape(), 0.0);
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw ContractError("backward root belongs to a different tape");
  if (root.value().size() != 1) {
    throw DimensionError("backward needs a scalar root, got shape " +
                         shape_string(root.value().shape()));
  }
  for (Node& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
  grad(root).fill(1.0);
  for (std::size_t i = root.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.backward) continue;
    node.backward(*this, node.grad);
  }
}

void Tape::accumulate_parameter_grads() const {
  for (const Node& node : nodes_) {
    if (node.parameter != nullptr && node.has_grad) node.parameter->grad() += node.grad;
  }
}

std::vector<std::pair<Parameter*, Tensor>> Tape::parameter_grads() const {
  std::vector<std::pair<Parameter*, Tensor>> out;
  for (const Node& node : nodes_) {
    if (node.parameter != nullptr && node.has_grad) out.emplace_back(node.parameter, node.grad);
  }
  return out;
}

}  // namespace fmpestf
