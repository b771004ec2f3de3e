#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace constyle {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Gradient recording switch, per thread. Disabled inside NoGradGuard scopes.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Pushes this node's grad into its parents. Empty for leaves.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  // Grad buffer of a parent, allocated on first use; nullptr when the parent takes no gradient.
  T* grad_sink() {
    if (!requires_grad) return nullptr;
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode differentiation.
///
/// A tensor is a cheap handle; copies share the same node. Values are treated as
/// immutable once an operation has consumed them, except for parameter leaves which
/// the optimizer and EMA update in place between graph constructions.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor zeros(const Shape& shape);
  static BasicTensor full(const Shape& shape, T value);
  static BasicTensor scalar(T value);
  static BasicTensor randn(const Shape& shape, Rng& rng, T stddev = T(1));
  static BasicTensor uniform(const Shape& shape, Rng& rng, T lo, T hi);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const T> data() const;
  /// In-place access for parameter leaves (optimizer, EMA, test fixtures).
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const T> grad() const;
  void zero_grad();

  /// Value copy cut from the graph.
  BasicTensor detach() const;

  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  void backward() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data().begin(), data().end());
    return BasicTensor<U>(shape(), std::move(out));
  }

  const NodePtr& node() const { return node_; }
  static BasicTensor from_node(NodePtr node);

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace constyle
