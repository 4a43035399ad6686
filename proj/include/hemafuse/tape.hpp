#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hemafuse/errors.hpp"
#include "hemafuse/tensor.hpp"

namespace hemafuse {

/// Reverse-mode recording of one forward pass. A tape is owned by a single
/// model instance and a single thread; build a new one per step.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using Array = typename TensorT::Array;

  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  /// Called during backward with the id of the node whose gradient is ready.
  using BackwardFn = std::function<void(Tape&, int)>;

  Var constant(TensorT value) { return push("constant", std::move(value), {}, nullptr, false); }
  Var variable(TensorT value) { return push("variable", std::move(value), {}, nullptr, true); }

  /// Records an op. The backward closure is kept only when some input is
  /// differentiable, so inference passes release their caches immediately.
  Var record(std::string op, TensorT value, std::vector<int> inputs, BackwardFn fn) {
    bool needs = false;
    for (int i : inputs) needs = needs || node(i).requires_grad;
    return push(std::move(op), std::move(value), std::move(inputs), needs ? std::move(fn) : nullptr,
                needs);
  }

  const TensorT& value(Var v) const { return node(v.id).value; }
  bool requires_grad(Var v) const { return node(v.id).requires_grad; }
  bool requires_grad(int id) const { return node(id).requires_grad; }

  /// Gradient of the last backward() output w.r.t. v (zeros if unreachable).
  TensorT grad(Var v) const {
    if (!backward_done_) throw StateError("gradient requested before backward()");
    const Node& n = node(v.id);
    if (n.grad.size() == 0) return TensorT::zeros_like(n.value);
    return TensorT(n.value.shape(), n.grad);
  }

  /// Gradient flowing into node id; only valid inside a BackwardFn.
  const Array& incoming(int id) const { return node(id).grad; }

  /// Accumulation buffer for input id; allocated as zeros on first use.
  Array& accumulator(int id) {
    Node& n = node(id);
    if (n.grad.size() == 0) n.grad = Array::Zero(n.value.size());
    return n.grad;
  }

  /// Input ids of node id, in recording order.
  const std::vector<int>& inputs(int id) const { return node(id).inputs; }

  void backward(Var out) {
    if (out.valid() && value(out).size() != 1)
      throw ShapeError("backward() without a seed requires a scalar output, got " +
                       shape_string(value(out).shape()));
    backward(out, TensorT({1}, Scalar(1)));
  }

  void backward(Var out, const TensorT& seed) {
    if (nodes_.empty() || !out.valid() || out.id >= static_cast<int>(nodes_.size()))
      throw StateError("backward() called before a forward pass was recorded");
    if (seed.size() != value(out).size())
      throw ShapeError("backward seed " + shape_string(seed.shape()) + " does not match output " +
                       shape_string(value(out).shape()));
    for (Node& n : nodes_) n.grad = Array();
    accumulator(out.id) += seed.data();
    for (int id = out.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward && n.grad.size() != 0) n.backward(*this, id);
    }
    backward_done_ = true;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Op names in recording order; used for structural assertions on graphs.
  std::vector<std::string> ops() const {
    std::vector<std::string> out;
    out.reserve(nodes_.size());
    for (const Node& n : nodes_) out.push_back(n.op);
    return out;
  }

 private:
  struct Node {
    std::string op;
    TensorT value;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Array grad;
  };

  Var push(std::string op, TensorT value, std::vector<int> inputs, BackwardFn fn, bool needs) {
    nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs), std::move(fn), needs, {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(int id) {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw StateError("invalid tape variable");
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw StateError("invalid tape variable");
    return nodes_[static_cast<std::size_t>(id)];
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace hemafuse
