#pragma once

#include <initializer_list>

#include "octoforce/tensor.hpp"

namespace octoforce::detail {

template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!NoGradGuard::grad_enabled()) return false;
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Wraps a freshly computed value; attaches parents and the gradient rule only
// when `track` is set.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, bool track,
                      std::initializer_list<const Tensor<T>*> parents = {},
                      std::function<void(Node<T>&)> rule = nullptr) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (track) {
    node->requires_grad = true;
    for (const auto* p : parents) {
      if (p && p->defined()) node->parents.push_back(p->node());
    }
    node->backward = std::move(rule);
  }
  return Tensor<T>(std::move(node));
}

// Grad buffer of a parent, or nullptr when it does not take gradients.
template <typename T>
T* grad_sink(const std::shared_ptr<Node<T>>& node) {
  if (!node || !node->requires_grad) return nullptr;
  return node->ensure_grad().data();
}

}  // namespace octoforce::detail
