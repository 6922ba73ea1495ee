#pragma once

// Selective state-space (Mamba-style) sequence layer and its residual stack.
//
// For an input sequence x[L, D]:
//   [xb | zb] = x W_in^T                       (each [L, inner])
//   u   = silu(causal_depthwise_conv(xb))
//   dt  = softplus(u W_dt^T + b_dt)            ([L, inner])
//   B   = u W_B^T, C = u W_C^T                 ([L, d_state])
//   y   = selective_scan(u, dt, A, B, C, D_skip)
//   out = (y * silu(zb)) W_out^T               ([L, D])
// with A = -exp(a_log) kept strictly negative.

#include <cstddef>
#include <string>
#include <vector>

#include "moemil/numerics/params.hpp"
#include "moemil/numerics/tensor.hpp"
#include "moemil/random.hpp"

namespace moemil {

struct SsmDims {
  std::size_t d_model = 512;
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t expand = 2;

  std::size_t inner() const { return expand * d_model; }
};

template <typename T>
struct SsmLayerParams {
  SsmDims dims;
  Tensor<T> in_proj;      // [2*inner, D]
  Tensor<T> conv_kernel;  // [inner, d_conv]
  Tensor<T> conv_bias;    // [inner]
  Tensor<T> dt_proj;      // [inner, inner]
  Tensor<T> dt_bias;      // [inner]
  Tensor<T> b_proj;       // [d_state, inner]
  Tensor<T> c_proj;       // [d_state, inner]
  Tensor<T> a_log;        // [inner, d_state]
  Tensor<T> d_skip;       // [inner]
  Tensor<T> out_proj;     // [D, inner]

  // Projections and the conv kernel use uniform fan-in init; a_log[c,s] =
  // log(s+1); dt_bias is the inverse softplus of a log-uniform draw from
  // [0.001, 0.1]; d_skip = 1.
  static SsmLayerParams init(const SsmDims& dims, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
  static std::size_t count(const SsmDims& dims);
};

template <typename T>
Tensor<T> ssm_forward(const SsmLayerParams<T>& p, const Tensor<T>& seq);

template <typename T>
struct SsmStackLayer {
  LayerNormParams<T> norm;
  SsmLayerParams<T> ssm;
};

template <typename T>
struct SsmStackParams {
  std::vector<SsmStackLayer<T>> layers;

  static SsmStackParams init(const SsmDims& dims, std::size_t depth, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// h <- h + ssm(layer_norm(h)) for each layer in order.
template <typename T>
Tensor<T> ssm_stack_forward(const SsmStackParams<T>& p, const Tensor<T>& seq);

}  // namespace moemil
