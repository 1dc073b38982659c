#pragma once

// Reverse-mode automatic differentiation over dense row-major arrays.
//
// A Tensor is a shared handle to a graph Node. Ops build new nodes that keep
// their inputs alive and carry a closure that pushes the node's gradient
// back into those inputs. backward() walks the graph in reverse topological
// order. Leaf gradients accumulate across calls until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dh {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using BackwardFn = std::function<void(Node<T>&)>;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor full(Shape shape, T fill, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false);

  /// Builds an op result. Inputs and the backward closure are dropped when no
  /// input requires a gradient or a NoGradGuard is active.
  static Tensor make_result(Shape shape, std::vector<T> values, std::vector<Tensor> inputs,
                            BackwardFn backward_fn);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  T item() const;
  T at(std::size_t flat) const { return node_->value[flat]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad();
  void zero_grad();

  /// Value copy with no graph history.
  Tensor detach() const;
  /// Same values viewed under a new shape with the same element count.
  Tensor reshape(Shape shape) const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;
};

/// Populates d(loss)/d(leaf) for every reachable leaf that requires a gradient.
/// Non-leaf gradients are reset at the start of each call; leaf gradients add.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dh
