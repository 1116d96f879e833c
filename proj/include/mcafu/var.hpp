#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "mcafu/tensor.hpp"

namespace mcafu {

// Reverse-mode autodiff over whole tensors. Each op records a closure that
// pulls the node's gradient into its parents. Define-by-run, no retained
// global tape: the graph lives as long as someone holds the output Var.

template <typename T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first use
  bool requires_grad = false;
  std::vector<std::shared_ptr<VarNode<T>>> parents;
  std::function<void(VarNode<T>&)> backprop;

  Tensor<T>& ensure_grad() {
    if (!grad.defined()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> v, bool requires_grad = false)
      : node_(std::make_shared<VarNode<T>>()) {
    node_->value = std::move(v);
    node_->requires_grad = requires_grad && grad_enabled();
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& val() const { return node_->value; }
  Tensor<T>& val() { return node_->value; }
  Tensor<T>& grad() { return node_->ensure_grad(); }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && node_->grad.defined(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad() {
    if (node_ && node_->grad.defined()) node_->grad.fill(T(0));
  }
  const std::shared_ptr<VarNode<T>>& node() const { return node_; }

  const Shape& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }

  static Var from_node(std::shared_ptr<VarNode<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<VarNode<T>> node_;
};

/// Builds an op node. Skips graph bookkeeping when gradients are off or no
/// parent needs them.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(VarNode<T>&)> backprop) {
  bool need = grad_enabled();
  if (need) {
    need = false;
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) { need = true; break; }
  }
  if (!need) return Var<T>(std::move(value));
  auto node = std::make_shared<VarNode<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  for (auto& p : parents) node->parents.push_back(p.node());
  node->backprop = std::move(backprop);
  return Var<T>::from_node(std::move(node));
}

/// Runs reverse-mode accumulation from `root`. Seeds with ones unless the
/// caller already set root.grad().
template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined() || !root.requires_grad()) return;
  auto* rn = root.node().get();
  if (!rn->grad.defined()) {
    rn->ensure_grad().fill(T(1));
  }
  // Iterative topological order (children before parents).
  std::vector<VarNode<T>*> order;
  std::unordered_set<VarNode<T>*> seen;
  std::vector<std::pair<VarNode<T>*, size_t>> stack;
  stack.push_back({rn, 0});
  seen.insert(rn);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      VarNode<T>* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

}  // namespace mcafu
