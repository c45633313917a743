#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semireward/error.hpp"
#include "semireward/tensor.hpp"

namespace semireward {

class ComputeTape;

// Handle to a value recorded on a ComputeTape. Cheap to copy; only valid while
// its tape is alive.
class Var {
 public:
  Var() = default;

  ComputeTape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  inline const Tensor& value() const;
  inline const Shape& shape() const;

 private:
  friend class ComputeTape;
  Var(ComputeTape* tape, std::size_t id) : tape_(tape), id_(id) {}

  ComputeTape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records differentiable operations in execution order and replays them in
// reverse on backward(). Nodes are appended after their inputs, so the
// recording order is already a topological order.
//
// A tape supports exactly one backward() call; a second call throws TapeError.
// Parameters enter through watch(), which borrows the tensor and accumulates
// its gradient into Tensor::grad_buffer(). Anything entered through
// constant()/constant_ref() is a stop-gradient leaf: no gradient is computed
// for it or for any value that depends only on constants.
class ComputeTape {
 public:
  using BackwardFn = std::function<void(ComputeTape&, std::size_t)>;

  ComputeTape() = default;
  ComputeTape(const ComputeTape&) = delete;
  ComputeTape& operator=(const ComputeTape&) = delete;

  Var constant(Tensor value) {
    Node node;
    node.owned = std::move(value);
    return push(std::move(node));
  }

  // Borrowed constant; `value` must outlive the tape.
  Var constant_ref(const Tensor& value) {
    Node node;
    node.borrowed = &value;
    return push(std::move(node));
  }

  // Owned leaf that receives a gradient, readable through grad().
  Var variable(Tensor value) {
    Node node;
    node.owned = std::move(value);
    node.needs_grad = true;
    return push(std::move(node));
  }

  // Borrowed trainable parameter; gradients are added into parameter.grad.
  Var watch(Tensor& parameter) {
    Node node;
    node.borrowed = &parameter;
    node.sink = &parameter;
    node.needs_grad = true;
    return push(std::move(node));
  }

  // Appends the result of an op. The node requires a gradient iff any input does.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    Node node;
    node.owned = std::move(value);
    for (const Var& in : inputs) {
      check_owned(in);
      node.needs_grad = node.needs_grad || nodes_[in.id()].needs_grad;
    }
    if (node.needs_grad) node.backward = std::move(backward);
    return push(std::move(node));
  }

  const Tensor& value(Var v) const {
    check_owned(v);
    const Node& n = nodes_[v.id()];
    return n.borrowed ? *n.borrowed : n.owned;
  }

  bool needs_grad(Var v) const {
    check_owned(v);
    return nodes_[v.id()].needs_grad;
  }

  // Gradient of the backward() output with respect to v; all zeros when v was
  // not reached or does not require a gradient.
  std::vector<double> grad(Var v) const {
    check_owned(v);
    const Node& n = nodes_[v.id()];
    if (n.grad.empty()) return std::vector<double>(value(v).size(), 0.0);
    return n.grad;
  }

  // Mutable gradient accumulator of node `id`, allocated on first use. For op
  // implementations only.
  std::vector<double>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
      n.grad.assign((n.borrowed ? *n.borrowed : n.owned).size(), 0.0);
    }
    return n.grad;
  }
  std::vector<double>& grad_buffer(Var v) { return grad_buffer(v.id()); }

  // Adds `delta` into v's gradient if v requires one.
  void accumulate(Var v, std::span<const double> delta) {
    if (!nodes_[v.id()].needs_grad) return;
    std::vector<double>& g = grad_buffer(v);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
  }

  void backward(Var output) {
    check_owned(output);
    if (backward_done_) {
      throw TapeError("backward() already ran on this tape; record a new tape per step");
    }
    if (value(output).size() != 1) {
      throw ShapeError("backward() needs a scalar output, got " + to_string(value(output).shape()));
    }
    backward_done_ = true;
    if (!nodes_[output.id()].needs_grad) return;
    grad_buffer(output)[0] = 1.0;
    visits_ = 0;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      ++visits_;
      if (n.backward) n.backward(*this, i);
      if (n.sink) {
        std::vector<double>& dst = n.sink->grad_buffer();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }
  // Number of nodes processed by the last backward().
  std::size_t backward_visits() const noexcept { return visits_; }

  // Gradient of node `id` during backward. For op implementations only.
  const std::vector<double>& node_grad(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor* sink = nullptr;
    std::vector<double> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  void check_owned(Var v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw TapeError("variable does not belong to this tape");
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::size_t visits_ = 0;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline const Shape& Var::shape() const { return value().shape(); }

}  // namespace semireward
