#include "moemil/numerics/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "moemil/errors.hpp"

namespace moemil {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

namespace detail {
namespace {
thread_local bool g_grad_enabled = true;
}
bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }
}  // namespace detail

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) return;  // rank-0 scalar
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T{0}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v, bool requires_grad) {
  check_shape(shape);
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
  return from(Shape{}, std::vector<T>{v}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) {
    throw IndexError("dim " + std::to_string(i) + " out of range for shape " + shape_str(s));
  }
  return s[i];
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) throw ContractError("use of undefined tensor");
  if (!node_->is_leaf()) throw ContractError("only leaf tensors may be modified in place");
  return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
  auto d = data();
  if (d.size() != 1) {
    throw DimensionError("item() requires a single-element tensor, got " + shape_str(shape()));
  }
  return d[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> idx) const {
  const auto& s = shape();
  if (idx.size() != s.size()) throw IndexError("at(): rank mismatch for shape " + shape_str(s));
  std::size_t flat = 0;
  std::size_t k = 0;
  for (auto i : idx) {
    if (i >= s[k]) {
      throw IndexError("at(): index " + std::to_string(i) + " out of range for shape " + shape_str(s));
    }
    flat = flat * s[k] + i;
    ++k;
  }
  return node_->value[flat];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
void Tensor<T>::backward() {
  if (!node_) throw ContractError("backward() on undefined tensor");
  if (node_->value.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(node_->shape));
  }
  if (node_->consumed) throw ContractError("backward() called twice on the same graph");
  if (!node_->requires_grad) throw ContractError("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order (inputs first).
  using N = detail::Node<T>;
  std::vector<N*> topo;
  std::unordered_set<N*> visited;
  std::vector<std::pair<N*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      N* p = n->parents[next++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        if (p->consumed) throw ContractError("backward() through an already-differentiated graph");
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T{1};
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    N* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (N* n : topo) {
    if (!n->is_leaf()) {
      n->backward_fn = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
      n->consumed = true;
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), std::vector<T>(data().begin(), data().end()), false);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace moemil
