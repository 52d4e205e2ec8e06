#include "unlearn/autodiff.hpp"

#include <unordered_set>

#include "unlearn/error.hpp"

namespace unlearn {
namespace {

thread_local bool g_grad_mode = true;

}  // namespace

Tensor& Node::grad_slot() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) {
    grad = Tensor(value.shape(), 0.0);
  }
  return grad;
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->is_leaf = true;
  return Var(std::move(node));
}

Tensor& Var::mutable_value() {
  if (!node_->is_leaf) fail(ErrorKind::kInput, "mutable_value() on a non-leaf node");
  return node_->value;
}

void Var::set_requires_grad(bool flag) {
  if (!node_->is_leaf) fail(ErrorKind::kInput, "set_requires_grad() on a non-leaf node");
  node_->requires_grad = flag;
  if (!flag) node_->grad = Tensor();
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

bool grad_mode_enabled() noexcept { return g_grad_mode; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->is_leaf = false;
  bool needs = false;
  if (g_grad_mode) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

namespace {

std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; graphs are deep (one node per op).
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward_with(const Var& output, const Tensor& seed) {
  if (!output.defined()) fail(ErrorKind::kInput, "backward on an undefined variable");
  if (seed.shape() != output.shape()) {
    fail(ErrorKind::kShape, "backward seed shape " + shape_string(seed.shape()) +
                                " does not match output " + shape_string(output.shape()));
  }
  Node* root = output.node().get();
  if (!root->requires_grad) return;
  auto order = topological_order(root);
  // Intermediate gradients are owned by this pass; leaves keep accumulating.
  for (Node* n : order) {
    if (!n->is_leaf) n->grad = Tensor();
  }
  Tensor& root_grad = root->grad_slot();
  for (std::size_t i = 0; i < seed.size(); ++i) root_grad[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf || !n->backward || n->grad.empty()) continue;
    n->backward(*n);
    n->grad = Tensor();
  }
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.size() != 1) {
    fail(ErrorKind::kShape, "backward requires a scalar loss, got shape " +
                                (loss.defined() ? shape_string(loss.shape()) : std::string("<none>")));
  }
  backward_with(loss, Tensor(loss.shape(), 1.0));
}

}  // namespace unlearn
