#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "unlearn/tensor.hpp"

namespace unlearn {

// Reverse-mode graph node. Values are computed eagerly; a node records its
// inputs and a backward closure only when some input requires a gradient.
struct Node {
  Tensor value;
  Tensor grad;  // empty until a gradient reaches the node
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into its inputs' grads.
  std::function<void(Node&)> backward;

  // Zero-filled gradient slot of the value's shape, allocated on first use.
  Tensor& grad_slot();
};

// Handle to a graph node. Cheap to copy; copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var leaf(Tensor value, bool requires_grad);
  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  // Direct access for optimizers and checkpoint loading; leaves only.
  Tensor& mutable_value();
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return node_->grad.shape() == node_->value.shape() && node_->grad.size() == node_->value.size() && !node_->grad.empty(); }
  // Gradient slot; zero-filled if nothing has been accumulated yet.
  const Tensor& grad() const { return node_->grad_slot(); }
  Tensor& grad() { return node_->grad_slot(); }
  void zero_grad();
  void clear_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled() noexcept;

// Builds an op result. Records `backward` only when grad mode is on and at
// least one input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
// Throws ShapeError if `loss` is not a single-element tensor.
void backward(const Var& loss);

// Same as backward() but seeds the output gradient with `seed` (shape must match).
void backward_with(const Var& output, const Tensor& seed);

}  // namespace unlearn
