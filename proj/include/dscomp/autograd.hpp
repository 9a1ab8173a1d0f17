#pragma once

#include <algorithm>
#include <functional>
#include <unordered_set>
#include <memory>
#include <vector>

#include "dscomp/tensor.hpp"

namespace dscomp {

template <Real T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape(), T(0));
    return grad;
  }
};

namespace detail {
bool& grad_mode_flag();
}

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Handle to a node of the recorded operation graph. Copies share the node.
template <Real T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::size_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient accumulated by the last backward pass; zeros if none reached this node.
  Tensor<T> grad() const {
    if (node_->grad.numel() == node_->value.numel()) return node_->grad;
    return Tensor<T>(node_->value.shape(), T(0));
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  /// Reverse sweep from this node. Non-scalar roots are seeded with ones.
  void backward() const;

  /// Records a new node whose backward function receives the node itself.
  static Var make(Tensor<T> value, std::vector<Var> inputs,
                  std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (grad_enabled()) {
      bool any = false;
      for (const auto& v : inputs) any = any || v.requires_grad();
      if (any) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& v : inputs) node->inputs.push_back(v.node_);
        node->backward_fn = std::move(backward_fn);
      }
    }
    return Var(std::move(node));
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <Real T>
void Var<T>::backward() const {
  // Iterative post-order DFS yields a topological order of the recorded subgraph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.numel() == n->value.numel()) n->backward_fn(*n);
  }
}

}  // namespace dscomp
