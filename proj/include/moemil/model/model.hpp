#pragma once

// The assembled multiple-instance classifier:
//   embed -> (resolution-ordered static encoding) -> region-nested order
//   -> L_dyn MoE-Mamba blocks -> attention pooling -> linear classifier.

#include <cstddef>
#include <vector>

#include "moemil/data/bag.hpp"
#include "moemil/experts/experts.hpp"
#include "moemil/model/config.hpp"
#include "moemil/numerics/params.hpp"
#include "moemil/numerics/tensor.hpp"
#include "moemil/ssm/ssm_layer.hpp"

namespace moemil {

// h' = h + Mamba(LN(h)); out = h' + SparseMoE(LN(h')).
template <typename T>
struct MoEMambaBlock {
  LayerNormParams<T> ssm_norm;
  SsmLayerParams<T> ssm;
  LayerNormParams<T> moe_norm;
  GateParams<T> gate;
  DynamicExpertBank<T> experts;

  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct BlockOutput {
  Tensor<T> out;
  MoEStats<T> stats;
  RoutingDecision routing;
};

template <typename T>
BlockOutput<T> moe_mamba_block(const MoEMambaBlock<T>& block, const Tensor<T>& seq, std::size_t k);

template <typename T>
struct AttentionParams {
  Tensor<T> v;  // [D_attn, D]
  Tensor<T> w;  // [D_attn]
};

template <typename T>
struct PoolOutput {
  Tensor<T> z;  // [D]
  Tensor<T> a;  // [N], sums to 1
};

// a = softmax_i(w . tanh(V h_i)), z = sum_i a_i h_i
template <typename T>
PoolOutput<T> attention_pool(const AttentionParams<T>& p, const Tensor<T>& seq);

template <typename T>
struct ForwardOutput {
  Tensor<T> logits;                 // [C]
  std::vector<double> probs;        // [C]
  std::vector<double> attention;    // per token, bag record order
  std::vector<int> token_level;     // per token, bag record order
  // per_level_attention[r-1]: attention of the level-r tokens (record order)
  // renormalized to sum to 1 within the level. Display only.
  std::vector<std::vector<double>> per_level_attention;
  std::vector<MoEStats<T>> moe_stats;
  std::vector<RoutingDecision> routing;
};

template <typename T>
struct MilModel {
  ModelConfig config;  // after variant adjustments
  Tensor<T> embed_w;   // [D, D_in]
  Tensor<T> embed_b;   // [D]
  StaticExpertBank<T> static_bank;  // empty for WO_R
  std::vector<MoEMambaBlock<T>> blocks;
  AttentionParams<T> attn;
  Tensor<T> cls_w;  // [C, D]
  Tensor<T> cls_b;  // [C]

  // Trainable tensors with stable, unique names (checkpoint keys).
  ParamList<T> parameters() const;
  ForwardOutput<T> forward(const Bag& bag) const;
};

// Validates the config, applies the variant (WO_MoE forces E = k = 1) and
// initializes every parameter from config.seed.
template <typename T>
MilModel<T> build_variant(const ModelConfig& cfg);

}  // namespace moemil
