#include "ccica/ndgrad/graph.hpp"

#include "ccica/error.hpp"

namespace ccica::ndgrad {

std::string_view op_name(OpTag tag) {
  switch (tag) {
    case OpTag::leaf: return "leaf";
    case OpTag::constant: return "constant";
    case OpTag::add: return "add";
    case OpTag::sub: return "sub";
    case OpTag::mul: return "mul";
    case OpTag::scale: return "scale";
    case OpTag::add_scalar: return "add_scalar";
    case OpTag::matmul: return "matmul";
    case OpTag::leaky_relu: return "leaky_relu";
    case OpTag::exp: return "exp";
    case OpTag::log: return "log";
    case OpTag::square: return "square";
    case OpTag::softplus: return "softplus";
    case OpTag::clamp: return "clamp";
    case OpTag::sum: return "sum";
    case OpTag::mean: return "mean";
    case OpTag::row_sum: return "row_sum";
    case OpTag::reshape: return "reshape";
    case OpTag::slice_cols: return "slice_cols";
    case OpTag::concat_cols: return "concat_cols";
    case OpTag::softmax: return "softmax";
    case OpTag::custom: return "custom";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!graph_) throw std::logic_error("Var is not attached to a graph");
  return graph_->value(*this);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.tag = OpTag::constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::leaf(Tensor value) {
  Node n;
  n.tag = OpTag::leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(Parameter& p) {
  Var v = leaf(p.value);
  nodes_.back().param = &p;
  return v;
}

Var Graph::record(OpTag tag, std::vector<std::size_t> parents, Tensor value, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced by op '" + std::string(op_name(tag)) + "'");
  }
  Node n;
  n.tag = tag;
  n.value = std::move(value);
  for (auto p : parents) {
    if (p >= nodes_.size()) throw std::logic_error("parent node out of range");
    n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw std::logic_error("loss belongs to a different graph");
  const std::size_t root = loss.id();
  if (nodes_.at(root).value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_string(nodes_[root].value.shape()));
  }
  for (auto& n : nodes_) {
    if (n.requires_grad) {
      if (n.adjoint.shape() != n.value.shape() || n.adjoint.size() != n.value.size()) {
        n.adjoint = Tensor(n.value.shape());
      } else {
        n.adjoint.fill(0.0);
      }
    } else {
      n.adjoint = Tensor();
    }
  }
  has_backward_ = true;
  if (!nodes_[root].requires_grad) return;
  nodes_[root].adjoint[0] = 1.0;
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
}

void Graph::accumulate_param_grads() {
  if (!has_backward_) throw std::logic_error("accumulate_param_grads() before backward()");
  for (auto& n : nodes_) {
    if (!n.param) continue;
    auto& g = n.param->grad;
    if (g.shape() != n.value.shape()) g = Tensor(n.value.shape());
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.adjoint[k];
  }
}

const Tensor& Graph::grad(Var v) const {
  if (!has_backward_) throw std::logic_error("grad() before backward()");
  const Node& n = nodes_.at(v.id());
  if (!n.requires_grad) throw std::logic_error("grad() of a node that does not require gradients");
  return n.adjoint;
}

Tensor* Graph::adjoint_if_needed(std::size_t id) {
  Node& n = nodes_[id];
  return n.requires_grad ? &n.adjoint : nullptr;
}

}  // namespace ccica::ndgrad
