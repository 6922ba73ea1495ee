#pragma once

// Raw compute kernels behind the tensor ops. Each kernel exists twice:
// `serial::` is the plain reference loop nest, `parallel::` splits the
// outermost independent loop across OpenMP threads. Every output element is
// produced by exactly one thread with the same inner loop as the serial
// version, so both return bit-identical results for any thread count.

#include <cstddef>
#include <span>

namespace moemil::kernels {

// Shapes for the selective scan: L timesteps, C inner channels, S state size.
struct ScanDims {
  std::size_t steps;
  std::size_t channels;
  std::size_t state;
};

// Inputs to the selective scan; all row-major.
//   u[L,C], delta[L,C], a[C,S] (already negative), b[L,S], c[L,S], skip[C]
template <typename T>
struct ScanInputs {
  std::span<const T> u, delta, a, b, c, skip;
};

// Gradients of the scan inputs; accumulated (+=) into.
template <typename T>
struct ScanGrads {
  std::span<T> u, delta, a, b, c, skip;
};

namespace serial {

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
// C[m,n] (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
// C[m,n] (+)= A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

// Forward selective scan. Writes y[L,C] and the full state history
// states[L,C,S] needed by the backward pass.
template <typename T>
void selective_scan(const ScanDims& d, const ScanInputs<T>& in, std::span<T> y, std::span<T> states);

// Backward of selective_scan given dy[L,C]. The b/c gradients reduce over
// channels; `scratch` must hold 2*L*C*S values.
template <typename T>
void selective_scan_backward(const ScanDims& d, const ScanInputs<T>& in, std::span<const T> states,
                             std::span<const T> dy, const ScanGrads<T>& g, std::span<T> scratch);

}  // namespace serial

namespace parallel {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void selective_scan(const ScanDims& d, const ScanInputs<T>& in, std::span<T> y, std::span<T> states);
template <typename T>
void selective_scan_backward(const ScanDims& d, const ScanInputs<T>& in, std::span<const T> states,
                             std::span<const T> dy, const ScanGrads<T>& g, std::span<T> scratch);

}  // namespace parallel

// Number of threads the parallel kernels will use (1 without OpenMP).
int max_threads();
// Caps the parallel kernels' thread count; n <= 0 restores the default.
void set_max_threads(int n);

}  // namespace moemil::kernels
