#pragma once

// Differentiable tensor primitives. Every op records a backward rule when any
// input requires grad (and recording is enabled), so compositions of these
// functions can be differentiated with Tensor::backward().
//
// Broadcasting is trailing-only: for binary elementwise ops the smaller
// operand's shape must equal a suffix of the larger one's.

#include <cstddef>
#include <span>
#include <vector>

#include "moemil/numerics/tensor.hpp"

namespace moemil {

using Index = std::vector<std::size_t>;

// a[..., m, k] x b[k, n] -> [..., m, n]; or batched a[B..., m, k] x b[B..., k, n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x[..., in] * w[out, in]^T (+ bias[out]) -> [..., out]. `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {});

template <typename T>
Tensor<T> transpose(const Tensor<T>& x);  // rank 2 only
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);
// log(1 + e^x), evaluated without overflow for large |x|.
template <typename T>
Tensor<T> softplus(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
// Inner product of two same-shape tensors -> scalar.
template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b);
// x[N, E] -> [E], column means.
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x);

// Max-subtracted softmax over the last dimension. Throws NumericError on
// non-finite input.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

// -log softmax(logits)[label] for logits of shape [C] or [1, C].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t label);

// Normalizes each last-dim slice to zero mean / unit variance, then applies
// gamma and beta. A zero-variance slice with eps == 0 maps to beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

// y[t,c] = sum_j kernel[c,j] * x[t-W+1+j, c] + bias[c], zero left padding.
template <typename T>
Tensor<T> depthwise_causal_conv1d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias);

// Rows of x[N, D] in the order of idx -> [len(idx), D].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> idx);
// dst + (src rows accumulated at rows idx of dst).
template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& dst, std::span<const std::size_t> idx, const Tensor<T>& src);
// Elements of the flattened x at positions idx -> [len(idx)].
template <typename T>
Tensor<T> gather_flat(const Tensor<T>& x, std::span<const std::size_t> idx);
// x[N, E] with per-row column lists idx[N*k] -> [N, k].
template <typename T>
Tensor<T> gather_per_row(const Tensor<T>& x, std::span<const std::size_t> idx, std::size_t k);
// x[N, D] with row i multiplied by w[i].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& w);
// Columns [start, start+len) of the last dimension.
template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t start, std::size_t len);

// Diagonal selective state-space recurrence, per channel c and state s:
//   h[t] = exp(delta[t,c] * a[c,s]) * h[t-1] + delta[t,c] * b[t,s] * u[t,c]
//   y[t,c] = sum_s c[t,s] * h[t,s] + skip[c] * u[t,c]
// with a = -exp(a_log) and h[-1] = 0.
// Shapes: u, delta [L, C]; a_log [C, S]; b, c [L, S]; skip [C] -> y [L, C].
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a_log,
                         const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& skip);

}  // namespace moemil
