#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "../oracles/grad_cases.hpp"
#include "../oracles/oracles.hpp"
#include "moemil/errors.hpp"
#include "moemil/numerics/gradcheck.hpp"
#include "moemil/numerics/kernels.hpp"
#include "moemil/numerics/ops.hpp"
#include "test_util.hpp"

using namespace moemil;
using testutil::probe;
using testutil::randn;

TEST(Tensor, ZeroExtentRejected) {
  EXPECT_THROW(Tensord::zeros({3, 0}), DimensionError);
  EXPECT_THROW(Tensord::from({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST(Tensor, BackwardTwiceIsAnError) {
  Rng rng(1);
  auto a = randn({3}, rng);
  auto loss = sum(mul(a, a));
  loss.backward();
  EXPECT_THROW(loss.backward(), ContractError);
}

TEST(Tensor, BackwardNeedsScalar) {
  Rng rng(1);
  auto a = randn({3}, rng);
  EXPECT_THROW(mul(a, a).backward(), ContractError);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  Rng rng(2);
  auto a = randn({4}, rng);
  Tensord s;
  {
    NoGradGuard guard;
    s = sum(a);
  }
  EXPECT_FALSE(s.requires_grad());
  EXPECT_THROW(s.backward(), ContractError);
}

TEST(Tensor, GradientsAccumulateAcrossUses) {
  auto a = Tensord::from({2}, {1.0, 2.0}, true);
  sum(add(mul(a, a), a)).backward();  // d/da (a^2 + a) = 2a + 1
  EXPECT_DOUBLE_EQ(a.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], 5.0);
}

TEST(Ops, MatmulMatchesLoop) {
  Rng rng(3);
  auto a = randn({4, 5}, rng, false);
  auto b = randn({5, 3}, rng, false);
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += a.at({i, k}) * b.at({k, j});
      EXPECT_NEAR(c.at({i, j}), s, 1e-12);
    }
}

TEST(Ops, TrailingBroadcastOnly) {
  Rng rng(4);
  auto x = randn({3, 4}, rng, false);
  auto row = randn({4}, rng, false);
  auto y = add(x, row);
  EXPECT_DOUBLE_EQ(y.at({2, 1}), x.at({2, 1}) + row.at({1}));
  EXPECT_THROW(add(x, randn({3}, rng, false)), DimensionError);
}

TEST(Ops, SoftmaxRejectsNonFinite) {
  auto x = Tensord::from({3}, {0.0, std::numeric_limits<double>::infinity(), 1.0});
  EXPECT_THROW(softmax_lastdim(x), NumericError);
}

TEST(Ops, CrossEntropyLabelRange) {
  auto x = Tensord::from({3}, {0.1, 0.2, 0.3});
  EXPECT_THROW(cross_entropy(x, 3), IndexError);
  EXPECT_NEAR(cross_entropy(Tensord::from({2}, {0.0, 0.0}), 1).item(), std::log(2.0), 1e-15);
}

TEST(Ops, LayerNormConstantSliceWithoutEpsGivesBeta) {
  auto x = Tensord::from({1, 3}, {2.0, 2.0, 2.0});
  auto g = Tensord::from({3}, {1.0, 2.0, 3.0});
  auto b = Tensord::from({3}, {0.5, -1.0, 4.0});
  auto y = layer_norm(x, g, b, 0.0);
  EXPECT_EQ(y.at({0, 0}), 0.5);
  EXPECT_EQ(y.at({0, 1}), -1.0);
  EXPECT_EQ(y.at({0, 2}), 4.0);
}

TEST(Ops, SoftplusLargeInputsStayFinite) {
  auto y = softplus(Tensord::from({3}, {-800.0, 0.0, 800.0}));
  EXPECT_EQ(y.at({0}), 0.0);
  EXPECT_NEAR(y.at({1}), std::log(2.0), 1e-15);
  EXPECT_EQ(y.at({2}), 800.0);
}

TEST(Ops, SelectiveScanMatchesRecurrence) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const std::size_t L = 7, C = 5, S = 3;
    auto u = randn({L, C}, rng, false);
    auto delta = softplus(randn({L, C}, rng, false));
    auto a_log = randn({C, S}, rng, false, 0.5);
    auto b = randn({L, S}, rng, false);
    auto c = randn({L, S}, rng, false);
    auto skip = randn({C}, rng, false);
    auto y = selective_scan(u, delta, a_log, b, c, skip);
    const auto ref = oracle::selective_scan(oracle::to_mat(u), oracle::to_mat(delta), oracle::to_mat(a_log),
                                            oracle::to_mat(b), oracle::to_mat(c), oracle::to_vec(skip));
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t ch = 0; ch < C; ++ch) EXPECT_NEAR(y.at({t, ch}), ref[t][ch], 1e-12);
  }
}

TEST(Gradcheck, RelativeErrorDefinition) {
  EXPECT_DOUBLE_EQ(relative_error(0.5, 0.25), 0.25);
  EXPECT_DOUBLE_EQ(relative_error(10.0, 9.0), 0.1);
}

// Every primitive against central differences, five seeds each.
using gradcases::PrimitiveCase;

void PrintTo(const PrimitiveCase& c, std::ostream* os) { *os << c.name; }

class PrimitiveGrad : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  const auto& c = GetParam();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed * 7919 + 11);
    const std::vector<Tensord> inputs = c.make(rng);
    const Tensord w = randn(c.apply(inputs).shape(), rng, false);
    std::vector<NamedTensor> named;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (inputs[i].requires_grad()) named.emplace_back("in" + std::to_string(i), inputs[i]);
    const GradCheckResult r = gradcheck([&] { return probe(c.apply(inputs), w); }, named);
    EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " seed " << seed << " worst " << r.worst;
    EXPECT_GT(r.checked, 0u);
  }
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGrad, ::testing::ValuesIn(gradcases::primitive_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

// ---- kernels -------------------------------------------------------------

class KernelParity : public ::testing::Test {
 protected:
  void SetUp() override { kernels::set_max_threads(4); }
  void TearDown() override { kernels::set_max_threads(0); }
};

TEST_F(KernelParity, GemmSerialAndParallelAreBitIdentical) {
  Rng rng(5);
  for (auto [m, n, k] : {std::array<std::size_t, 3>{3, 5, 7}, {64, 96, 80}, {257, 33, 129}}) {
    std::vector<double> a(m * k), b(k * n), bt(n * k), at(k * m);
    for (auto* v : {&a, &b, &bt, &at})
      for (auto& x : *v) x = rng.normal();
    for (bool acc : {false, true}) {
      std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5);
      kernels::serial::gemm_nn(m, n, k, a.data(), b.data(), c1.data(), acc);
      kernels::parallel::gemm_nn(m, n, k, a.data(), b.data(), c2.data(), acc);
      EXPECT_EQ(c1, c2);
      kernels::serial::gemm_nt(m, n, k, a.data(), bt.data(), c1.data(), acc);
      kernels::parallel::gemm_nt(m, n, k, a.data(), bt.data(), c2.data(), acc);
      EXPECT_EQ(c1, c2);
      kernels::serial::gemm_tn(m, n, k, at.data(), b.data(), c1.data(), acc);
      kernels::parallel::gemm_tn(m, n, k, at.data(), b.data(), c2.data(), acc);
      EXPECT_EQ(c1, c2);
    }
  }
}

TEST_F(KernelParity, ScanSerialAndParallelAreBitIdentical) {
  Rng rng(6);
  const kernels::ScanDims d{50, 300, 16};
  const std::size_t LC = d.steps * d.channels, CS = d.channels * d.state, LS = d.steps * d.state;
  std::vector<float> u(LC), delta(LC), a(CS), b(LS), c(LS), skip(d.channels), dy(LC);
  for (auto* v : {&u, &b, &c, &skip, &dy})
    for (auto& x : *v) x = static_cast<float>(rng.normal());
  for (auto& x : delta) x = static_cast<float>(rng.uniform(0.001, 0.2));
  for (auto& x : a) x = static_cast<float>(-rng.uniform(0.5, 8.0));
  const kernels::ScanInputs<float> in{u, delta, a, b, c, skip};

  std::vector<float> y1(LC), y2(LC), s1(LC * d.state), s2(LC * d.state);
  kernels::serial::selective_scan<float>(d, in, y1, s1);
  kernels::parallel::selective_scan<float>(d, in, y2, s2);
  EXPECT_EQ(y1, y2);
  EXPECT_EQ(s1, s2);

  auto grads = [&](auto fn) {
    std::vector<std::vector<float>> g = {std::vector<float>(LC), std::vector<float>(LC), std::vector<float>(CS),
                                         std::vector<float>(LS), std::vector<float>(LS), std::vector<float>(d.channels)};
    std::vector<float> scratch(2 * LC * d.state);
    fn(d, in, std::span<const float>(s1), std::span<const float>(dy),
       kernels::ScanGrads<float>{g[0], g[1], g[2], g[3], g[4], g[5]}, std::span<float>(scratch));
    return g;
  };
  const auto g1 = grads(kernels::serial::selective_scan_backward<float>);
  const auto g2 = grads(kernels::parallel::selective_scan_backward<float>);
  EXPECT_EQ(g1, g2);
}
