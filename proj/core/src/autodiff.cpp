#include "octoforce/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "octoforce/errors.hpp"

namespace octoforce {

template <typename T>
Graph<T>::Graph(const Tensor<T>& root) : root_(root) {
  if (!root.defined()) throw GraphError("graph root is undefined");
  // Iterative post-order DFS; parents finish before their consumers.
  std::unordered_set<const detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    order_.push_back(node);
    stack.pop_back();
  }
}

template <typename T>
void Graph<T>::run_backward() {
  auto* root = root_.node().get();
  if (root->consumed) throw GraphError("backward called twice on the same graph");
  auto& g = root->ensure_grad();
  std::fill(g.begin(), g.end(), T(1));
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (auto* node : order_) {
    if (!node->is_leaf()) {
      node->consumed = true;
      node->backward = nullptr;
      node->parents.clear();
    }
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw GraphError("backward on an undefined tensor");
  if (loss.numel() != 1) throw GraphError("backward requires a scalar loss, got shape " + loss.shape().str());
  if (loss.node()->consumed) throw GraphError("backward called twice on the same graph");
  if (!loss.requires_grad()) throw GraphError("backward on a tensor detached from the graph");
  Graph<T>(loss).run_backward();
}

template class Graph<float>;
template class Graph<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

double GradCheckReport::worst() const {
  double w = 0.0;
  for (double e : max_rel_error) w = std::max(w, e);
  return w;
}

GradCheckReport grad_check(const ScalarFunction& fn, std::span<Tensord> inputs, double h_scale) {
  for (auto& in : inputs) {
    if (!in.requires_grad() || !in.is_leaf()) throw GraphError("grad_check inputs must be leaves requiring grad");
    in.zero_grad();
  }
  {
    auto loss = fn(inputs);
    backward(loss);
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (auto& in : inputs) {
    std::vector<double> analytic(in.numel(), 0.0);
    if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), analytic.begin());
    auto values = in.mutable_data();
    double max_diff = 0.0;
    double max_numeric = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double x = values[i];
      const double h = h_scale * std::max(1.0, std::abs(x));
      values[i] = x + h;
      const double up = fn(inputs).item();
      values[i] = x - h;
      const double down = fn(inputs).item();
      values[i] = x;
      const double numeric = (up - down) / (2.0 * h);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      max_numeric = std::max(max_numeric, std::abs(numeric));
    }
    report.max_rel_error.push_back(max_numeric > 0.0 ? max_diff / max_numeric : max_diff);
  }
  return report;
}

}  // namespace octoforce
