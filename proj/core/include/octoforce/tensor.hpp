#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace octoforce {

// Extents of a dense row-major tensor. Volumetric feature maps use the
// channels-last layout [N_B, W, H, D, F]; planar maps drop D.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims) : dims_(dims) {}
  explicit Shape(std::vector<std::int64_t> dims) : dims_(std::move(dims)) {}

  std::size_t rank() const noexcept { return dims_.size(); }
  std::int64_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::int64_t>& dims() const noexcept { return dims_; }
  std::int64_t channels() const { return dims_.back(); }
  std::int64_t numel() const noexcept;

  bool operator==(const Shape&) const = default;

  std::string str() const;

 private:
  std::vector<std::int64_t> dims_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool consumed = false;  // set once backward() has replayed this node
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
  bool is_leaf() const noexcept { return parents.empty() && !backward; }
};

}  // namespace detail

// Gradient recording is suppressed on this thread while a guard is alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled() noexcept;

 private:
  bool previous_;
};

// Shared handle to a value in the autodiff graph. Copies alias the same
// node; values are immutable except for leaves updated by an optimizer.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->shape.numel(); }
  std::span<const T> data() const { return node_->value; }
  // Only valid on leaves; used by optimizers and finite-difference probes.
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();
  bool is_leaf() const { return node_->is_leaf(); }

  // Leaf copy of the current value, cut from any graph.
  Tensor detach(bool requires_grad = false) const;

  const NodePtr& node() const noexcept { return node_; }
  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  NodePtr node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace octoforce
