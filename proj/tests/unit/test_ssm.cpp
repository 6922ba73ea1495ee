#include <gtest/gtest.h>

#include <cmath>

#include "../oracles/oracles.hpp"
#include "moemil/numerics/gradcheck.hpp"
#include "moemil/numerics/ops.hpp"
#include "moemil/ssm/ssm_layer.hpp"
#include "test_util.hpp"

using namespace moemil;
using testutil::probe;
using testutil::randn;

namespace {
const SsmDims kSmall{6, 4, 3, 2};
}

TEST(Ssm, InitFollowsConventions) {
  Rng rng(1);
  const auto p = SsmLayerParams<double>::init(kSmall, rng);
  const std::size_t I = kSmall.inner();
  EXPECT_EQ(p.in_proj.shape(), (Shape{2 * I, 6}));
  EXPECT_EQ(p.a_log.shape(), (Shape{I, 4}));
  for (std::size_t c = 0; c < I; ++c) {
    for (std::size_t s = 0; s < 4; ++s) EXPECT_DOUBLE_EQ(p.a_log.at({c, s}), std::log(static_cast<double>(s + 1)));
    EXPECT_DOUBLE_EQ(p.d_skip.at({c}), 1.0);
    const double dt = oracle::softplus(p.dt_bias.at({c}));
    EXPECT_GE(dt, 0.001 - 1e-12);
    EXPECT_LE(dt, 0.1 + 1e-12);
  }
}

TEST(Ssm, ParameterCountMatchesCollectedTensors) {
  for (const SsmDims& d : {kSmall, SsmDims{}, SsmDims{64, 16, 4, 2}}) {
    Rng rng(2);
    ParamList<float> params;
    SsmLayerParams<float>::init(d, rng).collect("ssm", params);
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    EXPECT_EQ(n, SsmLayerParams<float>::count(d));
    // 3DI + I^2 + I(W + 3S + 3), written out independently.
    const std::size_t D = d.d_model, I = d.inner(), S = d.d_state, W = d.d_conv;
    EXPECT_EQ(n, 2 * I * D + I * W + I + I * I + I + 2 * S * I + I * S + I + D * I);
  }
}

TEST(Ssm, ForwardMatchesNaiveOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto p = SsmLayerParams<double>::init(kSmall, rng);
    const auto x = randn({7, 6}, rng, false);
    const auto y = oracle::to_mat(ssm_forward(p, x));
    const auto want = oracle::ssm_layer(p, oracle::to_mat(x));
    for (std::size_t t = 0; t < 7; ++t)
      for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(y[t][d], want[t][d], 1e-12);
  }
}

TEST(Ssm, StackMatchesOracle) {
  Rng rng(3);
  const auto p = SsmStackParams<double>::init(kSmall, 3, rng);
  const auto x = randn({5, 6}, rng, false);
  const auto y = oracle::to_mat(ssm_stack_forward(p, x));
  const auto want = oracle::ssm_stack(p, oracle::to_mat(x));
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(y[t][d], want[t][d], 1e-11);
}

TEST(Ssm, OutputIsCausal) {
  Rng rng(4);
  const auto p = SsmLayerParams<double>::init(kSmall, rng);
  const auto x = randn({9, 6}, rng, false);
  const auto base = oracle::to_mat(ssm_forward(p, x));
  for (std::size_t t : {0u, 4u, 8u}) {
    auto bumped = cast<double>(x);
    bumped.mutable_data()[t * 6 + 2] += 0.5;
    const auto y = oracle::to_mat(ssm_forward(p, bumped));
    for (std::size_t s = 0; s < 9; ++s) {
      double diff = 0.0;
      for (std::size_t d = 0; d < 6; ++d) diff = std::max(diff, std::abs(y[s][d] - base[s][d]));
      if (s < t) {
        EXPECT_EQ(diff, 0.0) << "position " << s << " saw input " << t;
      } else if (s == t) {
        EXPECT_GT(diff, 0.0);
      }
    }
  }
}

TEST(Ssm, FloatTracksDouble) {
  Rng rng(5);
  const SsmDims d{32, 16, 4, 2};
  const auto pd = SsmLayerParams<double>::init(d, rng);
  SsmLayerParams<float> pf;
  pf.dims = d;
  const auto f = [](const Tensord& t) { return cast<float>(t); };
  pf.in_proj = f(pd.in_proj);
  pf.conv_kernel = f(pd.conv_kernel);
  pf.conv_bias = f(pd.conv_bias);
  pf.dt_proj = f(pd.dt_proj);
  pf.dt_bias = f(pd.dt_bias);
  pf.b_proj = f(pd.b_proj);
  pf.c_proj = f(pd.c_proj);
  pf.a_log = f(pd.a_log);
  pf.d_skip = f(pd.d_skip);
  pf.out_proj = f(pd.out_proj);
  const auto x = randn({40, 32}, rng, false);
  const auto yd = ssm_forward(pd, x);
  const auto yf = ssm_forward(pf, f(x));
  for (std::size_t i = 0; i < yd.numel(); ++i) EXPECT_NEAR(yf.data()[i], yd.data()[i], 1e-4);
}

TEST(Ssm, LayerGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 10);
    const auto p = SsmLayerParams<double>::init(kSmall, rng);
    const auto x = randn({5, 6}, rng);
    const auto w = randn({5, 6}, rng, false);
    ParamList<double> params;
    p.collect("ssm", params);
    params.emplace_back("x", x);
    const auto r = gradcheck([&] { return probe(ssm_forward(p, x), w); }, params);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed << " worst " << r.worst;
  }
}

TEST(Ssm, StackGradientsMatchFiniteDifferences) {
  Rng rng(20);
  const auto p = SsmStackParams<double>::init(kSmall, 2, rng);
  const auto x = randn({4, 6}, rng);
  const auto w = randn({4, 6}, rng, false);
  ParamList<double> params;
  p.collect("stack", params);
  params.emplace_back("x", x);
  const auto r = gradcheck([&] { return probe(ssm_stack_forward(p, x), w); }, params, 1e-6, 12);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}
