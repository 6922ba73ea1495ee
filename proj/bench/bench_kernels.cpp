// Serial reference kernels against their OpenMP counterparts.
//   bench_kernels --benchmark_filter=Scan
// Thread count for the parallel variants follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <vector>

#include "moemil/numerics/kernels.hpp"
#include "moemil/random.hpp"

namespace k = moemil::kernels;

namespace {

std::vector<float> noise(std::size_t n, moemil::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  moemil::Rng rng(1);
  const auto a = noise(n * n, rng), b = noise(n * n, rng);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    else
      k::serial::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

struct ScanData {
  k::ScanDims d;
  std::vector<float> u, delta, a, b, c, skip, y, states, dy, gu, gdelta, ga, gb, gc, gskip, scratch;

  explicit ScanData(std::size_t steps) : d{steps, 128, 16} {
    moemil::Rng rng(2);
    const std::size_t lc = d.steps * d.channels, ls = d.steps * d.state, cs = d.channels * d.state;
    u = noise(lc, rng);
    delta = noise(lc, rng, 0.001, 0.1);
    a = noise(cs, rng, -8.0, -0.5);
    b = noise(ls, rng);
    c = noise(ls, rng);
    skip = noise(d.channels, rng);
    dy = noise(lc, rng);
    y.resize(lc);
    states.resize(lc * d.state);
    gu.resize(lc);
    gdelta.resize(lc);
    ga.resize(cs);
    gb.resize(ls);
    gc.resize(ls);
    gskip.resize(d.channels);
    scratch.resize(2 * lc * d.state);
  }
  k::ScanInputs<float> in() const { return {u, delta, a, b, c, skip}; }
  k::ScanGrads<float> grads() { return {gu, gdelta, ga, gb, gc, gskip}; }
};

template <bool Parallel>
void BM_ScanForward(benchmark::State& state) {
  ScanData s(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::selective_scan<float>(s.d, s.in(), s.y, s.states);
    else
      k::serial::selective_scan<float>(s.d, s.in(), s.y, s.states);
    benchmark::DoNotOptimize(s.y.data());
  }
}

template <bool Parallel>
void BM_ScanBackward(benchmark::State& state) {
  ScanData s(static_cast<std::size_t>(state.range(0)));
  k::serial::selective_scan<float>(s.d, s.in(), s.y, s.states);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::selective_scan_backward<float>(s.d, s.in(), s.states, s.dy, s.grads(), s.scratch);
    else
      k::serial::selective_scan_backward<float>(s.d, s.in(), s.states, s.dy, s.grads(), s.scratch);
    benchmark::DoNotOptimize(s.gu.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("Gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("Gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_ScanForward<false>)->Name("ScanForward/serial")->Arg(84)->Arg(1024);
BENCHMARK(BM_ScanForward<true>)->Name("ScanForward/parallel")->Arg(84)->Arg(1024);
BENCHMARK(BM_ScanBackward<false>)->Name("ScanBackward/serial")->Arg(84)->Arg(1024);
BENCHMARK(BM_ScanBackward<true>)->Name("ScanBackward/parallel")->Arg(84)->Arg(1024);

BENCHMARK_MAIN();
