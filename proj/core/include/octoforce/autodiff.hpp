#pragma once

#include <functional>
#include <span>
#include <vector>

#include "octoforce/tensor.hpp"

namespace octoforce {

// Recorded operations reachable from a root, in topological order (inputs
// before the operations that consume them).
template <typename T>
class Graph {
 public:
  explicit Graph(const Tensor<T>& root);

  std::size_t size() const noexcept { return order_.size(); }
  const std::vector<detail::Node<T>*>& order() const noexcept { return order_; }

  // Seeds the root gradient with ones and replays every node once in reverse
  // order. Marks the graph consumed and releases the recorded closures.
  void run_backward();

 private:
  Tensor<T> root_;
  std::vector<detail::Node<T>*> order_;
};

// Throws GraphError when the loss is not a scalar, carries no graph, or its
// graph was already replayed.
template <typename T>
void backward(const Tensor<T>& loss);

struct GradCheckReport {
  // Per input: max_i |analytic_i - numeric_i| / max_i |numeric_i|.
  std::vector<double> max_rel_error;

  double worst() const;
  bool passed(double tolerance) const { return worst() <= tolerance; }
};

using ScalarFunction = std::function<Tensord(std::span<const Tensord>)>;

// Central differences with h = h_scale * max(1, |x_i|), compared against the
// analytic gradient from one backward pass. Inputs must be leaves with
// requires_grad set; they are restored after probing.
GradCheckReport grad_check(const ScalarFunction& fn, std::span<Tensord> inputs, double h_scale = 1e-5);

}  // namespace octoforce
