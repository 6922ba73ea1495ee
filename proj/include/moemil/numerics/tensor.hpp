#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace moemil {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T{0});
    return grad;
  }
  bool is_leaf() const { return !backward_fn; }
};

// Disables graph recording on the current thread while alive.
bool grad_enabled();
void set_grad_enabled(bool on);

}  // namespace detail

class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
  ~NoGradGuard() { detail::set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major array that records the operations producing it, so a
// scalar result can be differentiated with backward(). Values are fixed at
// creation; only leaves (parameters) may be updated in place via
// mutable_data(), and only between steps.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return data().size(); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<const T> data() const;
  std::span<T> mutable_data();
  T item() const;
  T at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  // Reverse-mode accumulation from this scalar. Each graph may be
  // differentiated once; the recorded graph is released afterwards.
  void backward();

  // Same values, no history.
  Tensor detach() const;

  // Internal: used by ops to build graph nodes.
  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

 private:
  NodePtr node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// Converts values between precisions (no history).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad = false) {
  std::vector<To> v(t.data().begin(), t.data().end());
  return Tensor<To>::from(t.shape(), std::move(v), requires_grad);
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace moemil
