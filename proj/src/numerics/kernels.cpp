#include "moemil/numerics/kernels.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace moemil::kernels {

namespace {

// Work below this many multiply-adds is not worth a parallel region.
constexpr std::size_t kParallelThreshold = 1 << 15;

#ifdef _OPENMP
int g_default_threads = 0;
#endif

template <typename T>
inline T dot(const T* x, const T* y, std::size_t n) {
  T s0{0}, s1{0}, s2{0}, s3{0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  T s = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
inline void gemm_nn_row(std::size_t i, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                        bool accumulate) {
  T* crow = c + i * n;
  if (!accumulate) std::memset(crow, 0, n * sizeof(T));
  const T* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const T av = arow[p];
    if (av == T{0}) continue;
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

template <typename T>
inline void gemm_nt_row(std::size_t i, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                        bool accumulate) {
  T* crow = c + i * n;
  const T* arow = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const T v = dot(arow, b + j * k, k);
    crow[j] = accumulate ? crow[j] + v : v;
  }
}

template <typename T>
inline void gemm_tn_row(std::size_t i, std::size_t m, std::size_t n, std::size_t k, const T* a,
                        const T* b, T* c, bool accumulate) {
  T* crow = c + i * n;
  if (!accumulate) std::memset(crow, 0, n * sizeof(T));
  for (std::size_t p = 0; p < k; ++p) {
    const T av = a[p * m + i];
    if (av == T{0}) continue;
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

template <typename T>
inline void scan_channel(std::size_t ch, const ScanDims& d, const ScanInputs<T>& in, std::span<T> y,
                         std::span<T> states) {
  const std::size_t C = d.channels, S = d.state;
  T* h = states.data();
  for (std::size_t t = 0; t < d.steps; ++t) {
    const T dt = in.delta[t * C + ch];
    const T x = in.u[t * C + ch];
    const T* arow = in.a.data() + ch * S;
    const T* brow = in.b.data() + t * S;
    const T* crow = in.c.data() + t * S;
    T* cur = h + (t * C + ch) * S;
    const T* prev = t > 0 ? h + ((t - 1) * C + ch) * S : nullptr;
    T acc{0};
    for (std::size_t s = 0; s < S; ++s) {
      const T decay = std::exp(dt * arow[s]);
      const T hp = prev ? prev[s] : T{0};
      cur[s] = decay * hp + dt * brow[s] * x;
      acc += crow[s] * cur[s];
    }
    y[t * C + ch] = acc + in.skip[ch] * x;
  }
}

template <typename T>
inline void scan_channel_backward(std::size_t ch, const ScanDims& d, const ScanInputs<T>& in,
                                  std::span<const T> states, std::span<const T> dy,
                                  const ScanGrads<T>& g, T* partial_b, T* partial_c, T* gh) {
  const std::size_t L = d.steps, C = d.channels, S = d.state;
  const T* arow = in.a.data() + ch * S;
  T* ga = g.a.data() + ch * S;
  for (std::size_t s = 0; s < S; ++s) gh[s] = T{0};
  T gskip{0};
  for (std::size_t ti = L; ti-- > 0;) {
    const T dyt = dy[ti * C + ch];
    const T dt = in.delta[ti * C + ch];
    const T x = in.u[ti * C + ch];
    const T* brow = in.b.data() + ti * S;
    const T* crow = in.c.data() + ti * S;
    const T* cur = states.data() + (ti * C + ch) * S;
    const T* prev = ti > 0 ? states.data() + ((ti - 1) * C + ch) * S : nullptr;
    T* pb = partial_b + (ch * L + ti) * S;
    T* pc = partial_c + (ch * L + ti) * S;
    T du{0}, ddelta{0};
    for (std::size_t s = 0; s < S; ++s) {
      T gs = gh[s] + crow[s] * dyt;
      pc[s] = dyt * cur[s];
      const T hp = prev ? prev[s] : T{0};
      const T decay = std::exp(dt * arow[s]);
      const T gdecay = gs * hp * decay;
      ddelta += gdecay * arow[s] + gs * brow[s] * x;
      ga[s] += gdecay * dt;
      pb[s] = gs * dt * x;
      du += gs * dt * brow[s];
      gh[s] = gs * decay;
    }
    du += in.skip[ch] * dyt;
    gskip += dyt * x;
    g.u[ti * C + ch] += du;
    g.delta[ti * C + ch] += ddelta;
  }
  g.skip[ch] += gskip;
}

// Sums per-channel partials in channel order for element e of [L,S].
template <typename T>
inline void reduce_channels(std::size_t e, std::size_t channels, std::size_t stride, const T* partial,
                            T* out) {
  T acc{0};
  for (std::size_t ch = 0; ch < channels; ++ch) acc += partial[ch * stride + e];
  out[e] += acc;
}

}  // namespace

namespace serial {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(i, n, k, a, b, c, accumulate);
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(i, n, k, a, b, c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_tn_row(i, m, n, k, a, b, c, accumulate);
}

template <typename T>
void selective_scan(const ScanDims& d, const ScanInputs<T>& in, std::span<T> y, std::span<T> states) {
  for (std::size_t ch = 0; ch < d.channels; ++ch) scan_channel(ch, d, in, y, states);
}

template <typename T>
void selective_scan_backward(const ScanDims& d, const ScanInputs<T>& in, std::span<const T> states,
                             std::span<const T> dy, const ScanGrads<T>& g, std::span<T> scratch) {
  const std::size_t LS = d.steps * d.state;
  T* pb = scratch.data();
  T* pc = scratch.data() + d.channels * LS;
  std::vector<T> gh(d.state);
  for (std::size_t ch = 0; ch < d.channels; ++ch) scan_channel_backward(ch, d, in, states, dy, g, pb, pc, gh.data());
  for (std::size_t e = 0; e < LS; ++e) {
    reduce_channels(e, d.channels, LS, pb, g.b.data());
    reduce_channels(e, d.channels, LS, pc, g.c.data());
  }
}

}  // namespace serial

namespace parallel {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelThreshold && m > 1)
  for (long i = 0; i < rows; ++i) gemm_nn_row(static_cast<std::size_t>(i), n, k, a, b, c, accumulate);
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelThreshold && m > 1)
  for (long i = 0; i < rows; ++i) gemm_nt_row(static_cast<std::size_t>(i), n, k, a, b, c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelThreshold && m > 1)
  for (long i = 0; i < rows; ++i) gemm_tn_row(static_cast<std::size_t>(i), m, n, k, a, b, c, accumulate);
}

template <typename T>
void selective_scan(const ScanDims& d, const ScanInputs<T>& in, std::span<T> y, std::span<T> states) {
  const long channels = static_cast<long>(d.channels);
#pragma omp parallel for schedule(static) if (d.steps * d.channels * d.state > kParallelThreshold)
  for (long ch = 0; ch < channels; ++ch) scan_channel(static_cast<std::size_t>(ch), d, in, y, states);
}

template <typename T>
void selective_scan_backward(const ScanDims& d, const ScanInputs<T>& in, std::span<const T> states,
                             std::span<const T> dy, const ScanGrads<T>& g, std::span<T> scratch) {
  const std::size_t LS = d.steps * d.state;
  T* pb = scratch.data();
  T* pc = scratch.data() + d.channels * LS;
  const bool big = d.steps * d.channels * d.state > kParallelThreshold;
  const long channels = static_cast<long>(d.channels);
#pragma omp parallel if (big)
  {
    std::vector<T> gh(d.state);
#pragma omp for schedule(static)
    for (long ch = 0; ch < channels; ++ch)
      scan_channel_backward(static_cast<std::size_t>(ch), d, in, states, dy, g, pb, pc, gh.data());
  }
  const long elems = static_cast<long>(LS);
#pragma omp parallel for schedule(static) if (big)
  for (long e = 0; e < elems; ++e) {
    reduce_channels(static_cast<std::size_t>(e), d.channels, LS, pb, g.b.data());
    reduce_channels(static_cast<std::size_t>(e), d.channels, LS, pc, g.c.data());
  }
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_max_threads(int n) {
#ifdef _OPENMP
  if (g_default_threads == 0) g_default_threads = omp_get_max_threads();
  omp_set_num_threads(n > 0 ? n : g_default_threads);
#else
  (void)n;
#endif
}

#define MOEMIL_INSTANTIATE_KERNELS(NS, T)                                                                \
  template void NS::gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);   \
  template void NS::gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);   \
  template void NS::gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);   \
  template void NS::selective_scan<T>(const ScanDims&, const ScanInputs<T>&, std::span<T>, std::span<T>); \
  template void NS::selective_scan_backward<T>(const ScanDims&, const ScanInputs<T>&, std::span<const T>, \
                                               std::span<const T>, const ScanGrads<T>&, std::span<T>);

MOEMIL_INSTANTIATE_KERNELS(serial, float)
MOEMIL_INSTANTIATE_KERNELS(serial, double)
MOEMIL_INSTANTIATE_KERNELS(parallel, float)
MOEMIL_INSTANTIATE_KERNELS(parallel, double)

#undef MOEMIL_INSTANTIATE_KERNELS

}  // namespace moemil::kernels
