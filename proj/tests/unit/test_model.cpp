#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "../oracles/oracles.hpp"
#include "moemil/data/synthetic.hpp"
#include "moemil/errors.hpp"
#include "moemil/model/config.hpp"
#include "moemil/model/model.hpp"
#include "moemil/numerics/gradcheck.hpp"
#include "moemil/numerics/ops.hpp"
#include "test_util.hpp"

using namespace moemil;

namespace {

ModelConfig tiny_config(Variant v = Variant::full, std::uint64_t seed = 0) {
  ModelConfig c;
  c.d_in = 5;
  c.hidden = 4;
  c.classes = 3;
  c.levels = 3;
  c.experts = 3;
  c.topk = 2;
  c.static_layers = 1;
  c.dyn_layers = 2;
  c.d_state = 2;
  c.d_conv = 2;
  c.expand = 2;
  c.attn_hidden = 3;
  c.ffn_hidden = 6;
  c.variant = v;
  c.seed = seed;
  return c;
}

Bag tiny_bag(std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.classes = 3;
  s.slides_per_class = 1;
  s.roots = 2;
  s.fanouts = {2, 2};
  s.d_in = 5;
  s.seed = seed;
  return generate_synthetic(s).front();
}

// The whole forward pass rebuilt from the oracle pieces.
std::vector<double> oracle_logits(const MilModel<double>& m, const Bag& bag) {
  using oracle::Mat;
  const auto h = bag.hierarchy();
  Mat x;
  for (const auto& r : bag.records) x.emplace_back(r.features.begin(), r.features.end());
  const auto eb = oracle::to_vec(m.embed_b);
  const Mat emb = oracle::affine(x, oracle::to_mat(m.embed_w), &eb);

  std::vector<PatchNode> nodes = h.nodes();
  const auto region = oracle::region_nested_order(nodes);
  Mat seq;
  if (m.config.variant == Variant::wo_r) {
    for (auto t : region) seq.push_back(emb[t]);
  } else {
    std::vector<std::size_t> by_level(bag.size());
    std::iota(by_level.begin(), by_level.end(), 0);
    std::stable_sort(by_level.begin(), by_level.end(), [&](std::size_t a, std::size_t b) {
      const auto &ra = bag.records[a], &rb = bag.records[b];
      if (ra.level != rb.level) return ra.level < rb.level;
      if (ra.coord != rb.coord) return ra.coord < rb.coord;
      return ra.path < rb.path;
    });
    Mat lv;
    std::vector<int> levels;
    for (auto t : by_level) {
      lv.push_back(emb[t]);
      levels.push_back(bag.records[t].level);
    }
    const Mat enc = oracle::static_encode(m.static_bank, lv, levels);
    Mat by_token(bag.size());
    for (std::size_t j = 0; j < by_level.size(); ++j) by_token[by_level[j]] = enc[j];
    for (auto t : region) seq.push_back(by_token[t]);
  }

  for (const auto& blk : m.blocks) {
    const Mat hh = oracle::add(seq, oracle::ssm_layer(blk.ssm, oracle::layer_norm(seq, oracle::to_vec(blk.ssm_norm.gamma),
                                                                                   oracle::to_vec(blk.ssm_norm.beta))));
    const Mat xn = oracle::layer_norm(hh, oracle::to_vec(blk.moe_norm.gamma), oracle::to_vec(blk.moe_norm.beta));
    const auto gb = oracle::to_vec(blk.gate.bias);
    const Mat scores = oracle::affine(xn, oracle::to_mat(blk.gate.weight), &gb);
    RoutingDecision rd;
    rd.tokens = xn.size();
    rd.experts = blk.experts.experts.size();
    rd.k = m.config.topk;
    for (const auto& row : scores) {
      const auto t = oracle::brute_topk(row, rd.k);
      rd.topk_idx.insert(rd.topk_idx.end(), t.idx.begin(), t.idx.end());
      rd.weights.insert(rd.weights.end(), t.weights.begin(), t.weights.end());
    }
    seq = oracle::add(hh, oracle::dense_dispatch(blk.experts, xn, rd));
  }

  const Mat hid = oracle::affine(seq, oracle::to_mat(m.attn.v));
  std::vector<double> s(seq.size());
  const auto w = oracle::to_vec(m.attn.w);
  for (std::size_t i = 0; i < seq.size(); ++i)
    for (std::size_t j = 0; j < w.size(); ++j) s[i] += w[j] * std::tanh(hid[i][j]);
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (auto& v : s) z += (v = std::exp(v - mx));
  std::vector<double> pooled(seq[0].size(), 0.0);
  for (std::size_t i = 0; i < seq.size(); ++i)
    for (std::size_t d = 0; d < pooled.size(); ++d) pooled[d] += s[i] / z * seq[i][d];
  const auto cb = oracle::to_vec(m.cls_b);
  return oracle::affine({pooled}, oracle::to_mat(m.cls_w), &cb)[0];
}

}  // namespace

class ModelVariants : public ::testing::TestWithParam<Variant> {};

TEST_P(ModelVariants, ForwardMatchesComposedOracle) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto m = build_variant<double>(tiny_config(GetParam(), seed));
    const Bag bag = tiny_bag(seed + 1);
    const auto out = m.forward(bag);
    const auto want = oracle_logits(m, bag);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.logits.data()[c], want[c], 1e-11);
  }
}

TEST_P(ModelVariants, ParameterCountMatchesTensors) {
  for (const ModelConfig& c : {tiny_config(GetParam()), [] {
                                 ModelConfig d;
                                 d.hidden = 64;
                                 d.attn_hidden = 64;
                                 return d;
                               }()}) {
    ModelConfig cfg = c;
    cfg.variant = GetParam();
    const auto m = build_variant<float>(cfg);
    std::size_t n = 0;
    for (const auto& [name, t] : m.parameters()) n += t.numel();
    EXPECT_EQ(n, parameter_count(cfg));
  }
}

TEST_P(ModelVariants, FullModelGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = build_variant<double>(tiny_config(GetParam(), seed));
    const Bag bag = tiny_bag(seed + 11);
    const auto r = gradcheck(
        [&] {
          const auto out = m.forward(bag);
          const auto ce = cross_entropy(out.logits, bag.label);
          if (m.blocks.empty()) return ce;
          return add(ce, scale(load_balance_loss<double>(out.moe_stats, m.config.experts), 0.1));
        },
        m.parameters(), 1e-6, 4);
    EXPECT_LT(r.max_rel_error, 1e-3) << "seed " << seed << " worst " << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(All, ModelVariants,
                         ::testing::Values(Variant::full, Variant::wo_r, Variant::wo_moe, Variant::moeffn),
                         [](const auto& info) {
                           std::string s = variant_name(info.param);
                           std::replace(s.begin(), s.end(), '-', '_');
                           return s;
                         });

TEST(Model, VariantsChangeStructure) {
  const auto wo_r = build_variant<float>(tiny_config(Variant::wo_r));
  EXPECT_TRUE(wo_r.static_bank.experts.empty());
  const auto wo_moe = build_variant<float>(tiny_config(Variant::wo_moe));
  EXPECT_EQ(wo_moe.config.experts, 1u);
  EXPECT_EQ(wo_moe.config.topk, 1u);
  EXPECT_EQ(wo_moe.blocks[0].experts.experts.size(), 1u);
  const auto ffn = build_variant<float>(tiny_config(Variant::moeffn));
  EXPECT_EQ(ffn.blocks[0].experts.experts[0].kind, ExpertKind::ffn);
}

TEST(Model, AttentionIsADistributionOverTokens) {
  const auto m = build_variant<double>(tiny_config());
  const auto out = m.forward(tiny_bag());
  EXPECT_NEAR(std::accumulate(out.attention.begin(), out.attention.end(), 0.0), 1.0, 1e-12);
  EXPECT_NEAR(std::accumulate(out.probs.begin(), out.probs.end(), 0.0), 1.0, 1e-12);
  for (const auto& lv : out.per_level_attention)
    EXPECT_NEAR(std::accumulate(lv.begin(), lv.end(), 0.0), 1.0, 1e-12);
}

TEST(Model, RecordOrderDoesNotMatter) {
  const auto m = build_variant<double>(tiny_config());
  Bag bag = tiny_bag();
  const auto a = m.forward(bag);
  Rng rng(3);
  std::vector<std::size_t> perm(bag.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Bag shuffled = bag;
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled.records[i] = bag.records[perm[i]];
  const auto b = m.forward(shuffled);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(a.logits.data()[c], b.logits.data()[c], 1e-12);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_NEAR(b.attention[i], a.attention[perm[i]], 1e-12);
}

TEST(Model, SameSeedSameWeights) {
  const auto a = build_variant<float>(tiny_config(Variant::full, 5));
  const auto b = build_variant<float>(tiny_config(Variant::full, 5));
  const auto c = build_variant<float>(tiny_config(Variant::full, 6));
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_TRUE(std::equal(pa[i].second.data().begin(), pa[i].second.data().end(), pb[i].second.data().begin()));
    differs |= !std::equal(pa[i].second.data().begin(), pa[i].second.data().end(), pc[i].second.data().begin());
  }
  EXPECT_TRUE(differs);
}

TEST(Model, RejectsMismatchedBags) {
  const auto m = build_variant<double>(tiny_config());
  Bag bag = tiny_bag();
  for (auto& r : bag.records) r.features.push_back(0.0f);
  EXPECT_THROW(m.forward(bag), DimensionError);
  EXPECT_THROW(m.forward(Bag{}), ContractError);
}

TEST(AttentionPool, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    AttentionParams<double> p{testutil::randn({3, 4}, rng), testutil::randn({3}, rng)};
    const auto h = testutil::randn({6, 4}, rng);
    const auto w = testutil::randn({4}, rng, false);
    const auto r = gradcheck([&] { return testutil::probe(attention_pool(p, h).z, w); },
                             {{"v", p.v}, {"w", p.w}, {"h", h}});
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(Config, JsonRoundTripAndStrictKeys) {
  ModelConfig c = tiny_config(Variant::moeffn, 9);
  EXPECT_EQ(model_config_from_json(to_json(c)), c);
  auto j = to_json(c);
  j["hiden"] = 3;
  EXPECT_THROW(model_config_from_json(j), ContractError);
  c.topk = 4;
  EXPECT_THROW(c.validate(), ContractError);
  EXPECT_THROW(parse_variant("mamba"), ContractError);
}
