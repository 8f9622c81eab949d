#ifndef ASNET_NN_GRAPH_HPP
#define ASNET_NN_GRAPH_HPP

#include "asnet/core.hpp"
#include "asnet/nn/tensor.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace asnet::nn {

/// Handle to a node of a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// One line of the per-layer FLOP breakdown.
struct FlopRecord {
  std::string label;
  std::string kind;
  double flops = 0.0;
};

/// Reverse-mode tape. Every op appends a node holding its value and a closure
/// that propagates the node's gradient to its inputs. Nodes are created in
/// topological order, so backward() walks them in reverse.
///
/// A graph is single-use and single-threaded; run one graph per thread.
template <typename Scalar>
class Graph {
 public:
  using TensorT = Tensor<Scalar>;
  using Backward = std::function<void(Graph&, Var)>;

  /// With `training` false, parameters do not require gradients and no
  /// backward closures are retained.
  explicit Graph(bool training = true) : training_(training) {}

  Var input(TensorT value, bool requires_grad = false, std::string label = "input") {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.label = std::move(label);
    node.leaf = true;
    return push(std::move(node));
  }

  /// Binds an externally owned parameter tensor; it must outlive the graph.
  Var param(const std::string& name, const TensorT& value) {
    Node node;
    node.external = &value;
    node.requires_grad = training_;
    node.label = name;
    node.leaf = true;
    node.is_param = true;
    const Var v = push(std::move(node));
    params_.emplace_back(name, v);
    return v;
  }

  Var emit(TensorT value, std::initializer_list<Var> inputs, Backward backward, std::string label) {
    Node node;
    node.value = std::move(value);
    node.label = std::move(label);
    for (const Var& in : inputs) {
      if (in.valid() && nodes_[in.id].requires_grad) node.requires_grad = true;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    return push(std::move(node));
  }

  const TensorT& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return v.valid() && nodes_.at(v.id).requires_grad; }
  const std::string& label(Var v) const { return nodes_.at(v.id).label; }

  /// Gradient buffer of `v`, zero-initialised on first access.
  TensorT& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = TensorT(value(v).shape());
    return n.grad;
  }
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

  /// Per-node side storage for ops that keep intermediates (e.g. attention weights).
  TensorT& aux(Var v) { return nodes_.at(v.id).aux; }
  const TensorT& aux(Var v) const { return nodes_.at(v.id).aux; }

  /// Back-propagates from a single-element node. Intermediate values and
  /// gradients are released as soon as nothing upstream needs them; leaf
  /// gradients stay available.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw ShapeError("backward: loss must be a single element");
    if (!requires_grad(loss)) return;
    grad(loss).array().setConstant(Scalar(1));
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.leaf) continue;
      if (n.backward && !n.grad.empty()) n.backward(*this, Var{id});
      n.backward = nullptr;
      n.grad = TensorT();
      n.value = TensorT();
      n.aux = TensorT();
    }
  }

  void record_flops(std::string label, std::string kind, double flops) {
    flops_.push_back({std::move(label), std::move(kind), flops});
  }
  const std::vector<FlopRecord>& flops() const { return flops_; }

  const std::vector<std::pair<std::string, Var>>& params() const { return params_; }
  bool training() const { return training_; }

 private:
  struct Node {
    TensorT value;
    const TensorT* external = nullptr;
    TensorT grad;
    TensorT aux;
    bool requires_grad = false;
    bool leaf = false;
    bool is_param = false;
    Backward backward;
    std::string label;
  };

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool training_;
  std::vector<Node> nodes_;
  std::vector<FlopRecord> flops_;
  std::vector<std::pair<std::string, Var>> params_;
};

}  // namespace asnet::nn

#endif  // ASNET_NN_GRAPH_HPP
