#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ccica/ndgrad/tensor.hpp"

namespace ccica::ndgrad {

/// A learnable tensor together with its gradient accumulator.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Tensor value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

enum class OpTag {
  leaf,
  constant,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  matmul,
  leaky_relu,
  exp,
  log,
  square,
  softplus,
  clamp,
  sum,
  mean,
  row_sum,
  reshape,
  slice_cols,
  concat_cols,
  softmax,
  custom,
};

std::string_view op_name(OpTag tag);

class Graph;

/// Handle to a node on a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
/// tape order is already a topological order of the DAG.
class Graph {
 public:
  /// Propagates the adjoint of node `self` into its parents' adjoints.
  using BackwardFn = std::function<void(Graph& graph, std::size_t self)>;

  struct Node {
    OpTag tag = OpTag::leaf;
    std::vector<std::size_t> parents;
    Tensor value;
    Tensor adjoint;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Non-differentiable input.
  Var constant(Tensor value);
  /// Differentiable input whose adjoint can be read back with grad().
  Var leaf(Tensor value);
  /// Differentiable input bound to a Parameter; see accumulate_param_grads().
  Var param(Parameter& p);

  /// Appends an operation node. Throws NumericalError on a non-finite value.
  Var record(OpTag tag, std::vector<std::size_t> parents, Tensor value, BackwardFn backward);

  /// Zeroes every adjoint, seeds d(loss)/d(loss) = 1 and sweeps the tape backwards.
  void backward(Var loss);

  /// Adds each bound parameter's adjoint into Parameter::grad.
  void accumulate_param_grads();

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  /// Adjoint from the last backward(); zero tensor for nodes the loss does not reach.
  const Tensor& grad(Var v) const;

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  /// Adjoint of a parent that needs a gradient, or nullptr.
  Tensor* adjoint_if_needed(std::size_t id);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  bool has_backward_ = false;
};

// Forward operations. Each records a node on the graph of its operands.
//
// Elementwise binary ops broadcast rank<=2 operands viewed as (rows, cols):
// a dimension of size 1 stretches to match the other operand.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var matmul(Var a, Var b);
Var leaky_relu(Var a, double slope);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var softplus(Var a);
/// Clamps into [lo, hi]; the gradient is zero where the clamp is active.
Var clamp(Var a, double lo, double hi);
/// Sum of all elements, returns a scalar.
Var sum(Var a);
/// Mean of all elements, returns a scalar.
Var mean(Var a);
/// Sum over the last axis: [m, n] -> [m, 1].
Var row_sum(Var a);
Var reshape(Var a, Shape shape);
/// Columns [begin, end) of a rank-2 tensor.
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
/// Softmax over the last axis.
Var softmax(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace ccica::ndgrad
