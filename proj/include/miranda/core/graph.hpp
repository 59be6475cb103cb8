#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "miranda/core/tensor.hpp"

namespace miranda {

/// A learnable tensor living outside any graph. Graphs accumulate into
/// `grad` during backward.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
    grad.fill(0.0);
  }
};

class Graph;

/// Handle to a node of a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  std::size_t rank() const { return value().rank(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run differentiation graph. Nodes are appended in evaluation
/// order, so the parents of node k always have index < k and a reverse sweep
/// is a valid topological traversal.
class Graph {
 public:
  /// Propagates the node's output gradient into its parents via
  /// Graph::accumulate.
  using BackwardFn = std::function<void(Graph&, const Tensor& out_value,
                                        const Tensor& out_grad)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value) { return push("constant", std::move(value), {}, {}, false); }

  /// Leaf that requires a gradient but is not bound to a Parameter.
  Var variable(Tensor value) {
    return push("variable", std::move(value), {}, {}, grad_enabled_);
  }

  Var param(Parameter& p) {
    Var v = push("param", p.value, {}, {}, grad_enabled_);
    nodes_[v.id()].param = &p;
    return v;
  }

  /// Registers the result of an operation. The backward function is kept only
  /// when some parent requires a gradient.
  Var record(std::string op, Tensor value, std::vector<std::size_t> parents,
             BackwardFn backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (auto p : parents) needs = needs || nodes_[p].requires_grad;
    }
    if (!needs) backward = nullptr;
    return push(std::move(op), std::move(value), std::move(parents),
                std::move(backward), needs);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& parents(std::size_t id) const {
    return nodes_.at(id).parents;
  }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient buffer of node `id`.
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (g.size() != n.value.size()) {
      throw_shape("accumulate(" + n.op + ")", n.value.shape(), g.shape());
    }
    if (n.grad.empty()) {
      n.grad = Tensor(n.value.shape(), g.vec());
      return;
    }
    double* dst = n.grad.ptr();
    const double* src = g.ptr();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
  }

  /// Mutable gradient buffer of node `id`, allocated on demand.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  /// Gradient of the last backward() target with respect to `v`; zeros if `v`
  /// is not upstream of it.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  /// Reverse sweep from a scalar node. Every Parameter bound in this graph
  /// ends with Parameter::grad = d(loss)/d(parameter), zero when unreachable.
  void backward(Var loss) {
    const Node& root = nodes_.at(loss.id());
    if (root.value.size() != 1) {
      throw ShapeError("backward: loss must be a scalar, got shape " +
                       shape_str(root.value.shape()));
    }
    for (auto& n : nodes_) {
      n.grad = Tensor();
      if (n.param != nullptr) n.param->zero_grad();
    }
    if (!root.requires_grad) return;
    nodes_[loss.id()].grad = Tensor(root.value.shape(), 1.0);
    for (std::size_t k = loss.id() + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n.value, n.grad);
      if (n.param != nullptr) {
        Parameter& p = *n.param;
        double* dst = p.grad.ptr();
        const double* src = n.grad.ptr();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += src[i];
      }
    }
  }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(std::string op, Tensor value, std::vector<std::size_t> parents,
           BackwardFn backward, bool requires_grad) {
    nodes_.push_back(Node{std::move(op), std::move(value), Tensor(),
                          std::move(parents), std::move(backward), nullptr,
                          requires_grad});
    return Var(this, nodes_.size() - 1);
  }

  bool grad_enabled_;
  // deque: references to node values stay valid while nodes are appended.
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

}  // namespace miranda
