#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "moemil/numerics/tensor.hpp"
#include "moemil/random.hpp"

namespace moemil {

// Named handles to trainable leaves; copies share storage with the model.
template <typename T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

// Values drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNormParams init(std::size_t width) {
    return {Tensor<T>::full({width}, T{1}, true), Tensor<T>::zeros({width}, true)};
  }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace moemil
