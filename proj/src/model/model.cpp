#include "moemil/model/model.hpp"

#include <algorithm>
#include <cmath>

#include "moemil/errors.hpp"
#include "moemil/hierarchy/hierarchy.hpp"
#include "moemil/numerics/ops.hpp"

namespace moemil {

template <typename T>
void MoEMambaBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  ssm_norm.collect(prefix + ".ssm_norm", out);
  ssm.collect(prefix + ".ssm", out);
  moe_norm.collect(prefix + ".moe_norm", out);
  gate.collect(prefix + ".gate", out);
  experts.collect(prefix + ".experts", out);
}

template <typename T>
BlockOutput<T> moe_mamba_block(const MoEMambaBlock<T>& block, const Tensor<T>& seq, std::size_t k) {
  const T eps = static_cast<T>(kLayerNormEps);
  const Tensor<T> h = add(seq, ssm_forward(block.ssm, layer_norm(seq, block.ssm_norm.gamma, block.ssm_norm.beta, eps)));
  const Tensor<T> x = layer_norm(h, block.moe_norm.gamma, block.moe_norm.beta, eps);
  const Tensor<T> scores = gate_scores(block.gate, x);
  BlockOutput<T> out;
  out.routing = topk_route(scores, k);
  out.stats = moe_stats(scores, out.routing);
  out.out = add(h, sparse_dispatch(block.experts, x, out.routing, routing_weights(scores, out.routing)));
  return out;
}

template <typename T>
PoolOutput<T> attention_pool(const AttentionParams<T>& p, const Tensor<T>& seq) {
  if (seq.rank() != 2) throw DimensionError("attention_pool expects [N,D], got " + shape_str(seq.shape()));
  const std::size_t n = seq.dim(0);
  const std::size_t d_attn = p.w.numel();
  const Tensor<T> hidden = tanh(linear(seq, p.v));
  const Tensor<T> scores = reshape(linear(hidden, reshape(p.w, {1, d_attn})), {n});
  PoolOutput<T> out;
  out.a = softmax_lastdim(scores);
  out.z = reshape(matmul(reshape(out.a, {1, n}), seq), {seq.dim(1)});
  return out;
}

template <typename T>
ParamList<T> MilModel<T>::parameters() const {
  ParamList<T> out;
  out.emplace_back("embed.weight", embed_w);
  out.emplace_back("embed.bias", embed_b);
  static_bank.collect("static", out);
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect("block." + std::to_string(l), out);
  out.emplace_back("attn.v", attn.v);
  out.emplace_back("attn.w", attn.w);
  out.emplace_back("cls.weight", cls_w);
  out.emplace_back("cls.bias", cls_b);
  return out;
}

template <typename T>
ForwardOutput<T> MilModel<T>::forward(const Bag& bag) const {
  if (bag.records.empty()) throw ContractError("forward: bag '" + bag.slide_id + "' is empty");
  if (bag.d_in() != config.d_in) {
    throw DimensionError("forward: bag '" + bag.slide_id + "' has feature width " + std::to_string(bag.d_in()) +
                         ", model expects " + std::to_string(config.d_in));
  }
  if (bag.levels > config.levels) {
    throw ContractError("forward: bag '" + bag.slide_id + "' has " + std::to_string(bag.levels) +
                        " levels, model supports " + std::to_string(config.levels));
  }
  const std::size_t n = bag.size();
  std::vector<T> feats(n * config.d_in);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = bag.records[i].features;
    if (f.size() != config.d_in) throw DimensionError("forward: bag '" + bag.slide_id + "' mixes feature widths");
    std::copy(f.begin(), f.end(), feats.begin() + static_cast<std::ptrdiff_t>(i * config.d_in));
  }
  const Tensor<T> x = Tensor<T>::from({n, config.d_in}, std::move(feats));
  const PatchHierarchy hier = bag.hierarchy();
  const ScanOrder region = region_nested_scan(hier);

  const Tensor<T> embedded = linear(x, embed_w, embed_b);
  Tensor<T> seq;
  if (config.variant == Variant::wo_r) {
    seq = gather_rows(embedded, region.order);
  } else {
    const ScanOrder by_level = resolution_ordered_scan(hier);
    const Tensor<T> encoded = static_encode(static_bank, gather_rows(embedded, by_level.order), by_level.level_of);
    std::vector<std::size_t> pos_by_level(n);
    for (std::size_t j = 0; j < n; ++j) pos_by_level[by_level.order[j]] = j;
    std::vector<std::size_t> reorder(n);
    for (std::size_t j = 0; j < n; ++j) reorder[j] = pos_by_level[region.order[j]];
    seq = gather_rows(encoded, reorder);
  }

  ForwardOutput<T> out;
  for (const auto& block : blocks) {
    BlockOutput<T> b = moe_mamba_block(block, seq, config.topk);
    seq = b.out;
    out.moe_stats.push_back(std::move(b.stats));
    out.routing.push_back(std::move(b.routing));
  }

  const PoolOutput<T> pooled = attention_pool(attn, seq);
  out.logits = linear(pooled.z, cls_w, cls_b);

  const auto lv = out.logits.data();
  double mx = lv[0];
  for (T v : lv) mx = std::max(mx, static_cast<double>(v));
  double total = 0.0;
  for (T v : lv) {
    out.probs.push_back(std::exp(static_cast<double>(v) - mx));
    total += out.probs.back();
  }
  for (auto& p : out.probs) p /= total;

  out.attention.assign(n, 0.0);
  const auto av = pooled.a.data();
  for (std::size_t j = 0; j < n; ++j) out.attention[region.order[j]] = av[j];
  out.token_level.resize(n);
  out.per_level_attention.assign(static_cast<std::size_t>(config.levels), {});
  std::vector<double> level_mass(static_cast<std::size_t>(config.levels), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    out.token_level[i] = bag.records[i].level;
    level_mass[static_cast<std::size_t>(bag.records[i].level - 1)] += out.attention[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(out.token_level[i] - 1);
    out.per_level_attention[r].push_back(level_mass[r] > 0.0 ? out.attention[i] / level_mass[r] : 0.0);
  }
  return out;
}

template <typename T>
MilModel<T> build_variant(const ModelConfig& cfg_in) {
  ModelConfig cfg = cfg_in;
  cfg.validate();
  if (cfg.variant == Variant::wo_moe) {
    cfg.experts = 1;
    cfg.topk = 1;
  }
  Rng rng(cfg.seed);
  const SsmDims dims{cfg.hidden, cfg.d_state, cfg.d_conv, cfg.expand};
  MilModel<T> m;
  m.config = cfg;
  m.embed_w = uniform_fan_in<T>({cfg.hidden, cfg.d_in}, cfg.d_in, rng);
  m.embed_b = uniform_fan_in<T>({cfg.hidden}, cfg.d_in, rng);
  if (cfg.variant != Variant::wo_r) {
    m.static_bank = StaticExpertBank<T>::init(dims, cfg.levels, cfg.static_layers, rng);
  }
  for (std::size_t l = 0; l < cfg.dyn_layers; ++l) {
    MoEMambaBlock<T> b;
    b.ssm_norm = LayerNormParams<T>::init(cfg.hidden);
    b.ssm = SsmLayerParams<T>::init(dims, rng);
    b.moe_norm = LayerNormParams<T>::init(cfg.hidden);
    b.gate = GateParams<T>::init(cfg.hidden, cfg.experts, rng);
    for (std::size_t e = 0; e < cfg.experts; ++e) {
      b.experts.experts.push_back(cfg.variant == Variant::moeffn
                                      ? DynamicExpert<T>::init_ffn(cfg.hidden, cfg.ffn_hidden, rng)
                                      : DynamicExpert<T>::init_mamba(dims, rng));
    }
    m.blocks.push_back(std::move(b));
  }
  m.attn.v = uniform_fan_in<T>({cfg.attn_hidden, cfg.hidden}, cfg.hidden, rng);
  m.attn.w = uniform_fan_in<T>({cfg.attn_hidden}, cfg.attn_hidden, rng);
  m.cls_w = uniform_fan_in<T>({cfg.classes, cfg.hidden}, cfg.hidden, rng);
  m.cls_b = Tensor<T>::zeros({cfg.classes}, true);
  return m;
}

#define MOEMIL_INSTANTIATE_MODEL(T)                                                                \
  template struct MoEMambaBlock<T>;                                                                \
  template BlockOutput<T> moe_mamba_block(const MoEMambaBlock<T>&, const Tensor<T>&, std::size_t); \
  template PoolOutput<T> attention_pool(const AttentionParams<T>&, const Tensor<T>&);              \
  template struct MilModel<T>;                                                                     \
  template MilModel<T> build_variant<T>(const ModelConfig&);

MOEMIL_INSTANTIATE_MODEL(float)
MOEMIL_INSTANTIATE_MODEL(double)

#undef MOEMIL_INSTANTIATE_MODEL

}  // namespace moemil
