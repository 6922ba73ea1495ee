#pragma once

#include <cstdint>
#include <vector>

#include "moemil/numerics/params.hpp"

namespace moemil {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers aligned with a ParamList. Parameters that received no
// gradient in a step are left untouched, moments and step count included.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::vector<std::uint64_t> steps;

  static AdamState init(const ParamList<T>& params);
};

// w -= lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected moments.
// Throws NumericError naming the first parameter with a non-finite gradient;
// nothing is updated in that case.
template <typename T>
void adam_step(const ParamList<T>& params, AdamState<T>& state, const AdamConfig& cfg);

}  // namespace moemil
