#pragma once

// Static resolution experts (hard assignment by level) and the dynamic sparse
// mixture-of-experts: linear gate, top-k routing with weights renormalized
// over the selected experts, expert-wise dispatch that runs each expert once
// over its routed tokens in scan order, and importance/load balance stats.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "moemil/numerics/params.hpp"
#include "moemil/numerics/tensor.hpp"
#include "moemil/random.hpp"
#include "moemil/ssm/ssm_layer.hpp"

namespace moemil {

// ---- static experts ------------------------------------------------------

template <typename T>
struct StaticExpertBank {
  std::vector<SsmStackParams<T>> experts;  // experts[r-1] serves level r

  static StaticExpertBank init(const SsmDims& dims, int levels, std::size_t depth, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Runs expert r over the subsequence of tokens with levels[i] == r (order
// preserved) and scatters the results back to their positions.
template <typename T>
Tensor<T> static_encode(const StaticExpertBank<T>& bank, const Tensor<T>& seq, std::span<const int> levels);

// ---- gating and routing --------------------------------------------------

template <typename T>
struct GateParams {
  Tensor<T> weight;  // [E, D]
  Tensor<T> bias;    // [E]

  static GateParams init(std::size_t width, std::size_t experts, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// g_i = W_g x_i + b_g, shape [N, E].
template <typename T>
Tensor<T> gate_scores(const GateParams<T>& g, const Tensor<T>& seq);

struct RoutingDecision {
  std::size_t tokens = 0;
  std::size_t experts = 0;
  std::size_t k = 0;
  std::vector<std::size_t> topk_idx;  // [tokens * k], best first
  std::vector<double> weights;        // [tokens * k], softmax over the selected scores
  std::vector<double> full_probs;     // [tokens * experts], softmax over all scores

  std::size_t expert(std::size_t token, std::size_t slot) const { return topk_idx[token * k + slot]; }
  double weight(std::size_t token, std::size_t slot) const { return weights[token * k + slot]; }
  std::size_t top1(std::size_t token) const { return topk_idx[token * k]; }
};

// Per token: the k highest scores (ties to the lower expert index) and their
// renormalized softmax weights. k == 1 gives a weight of exactly 1.
template <typename T>
RoutingDecision topk_route(const Tensor<T>& scores, std::size_t k);

// The routing weights as a differentiable [N, k] tensor of `scores`.
template <typename T>
Tensor<T> routing_weights(const Tensor<T>& scores, const RoutingDecision& rd);

// ---- dynamic experts -----------------------------------------------------

enum class ExpertKind { mamba, ffn };

template <typename T>
struct FfnParams {
  Tensor<T> w1;  // [H, D]
  Tensor<T> w2;  // [D, H]
};

// f(x) = x + Mamba(LN(x)), or x + W2 silu(W1 LN(x)) for ffn.
template <typename T>
struct DynamicExpert {
  ExpertKind kind = ExpertKind::mamba;
  LayerNormParams<T> norm;
  SsmLayerParams<T> ssm;
  FfnParams<T> ffn;

  static DynamicExpert init_mamba(const SsmDims& dims, Rng& rng);
  static DynamicExpert init_ffn(std::size_t width, std::size_t hidden, Rng& rng);
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
Tensor<T> expert_forward(const DynamicExpert<T>& e, const Tensor<T>& x);

template <typename T>
struct DynamicExpertBank {
  std::vector<DynamicExpert<T>> experts;

  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// y_i = sum_{e in topk(i)} alpha_{i,e} f_e(x_i), where each expert runs once
// over the tokens routed to it, in ascending position order. `weights` is
// [N, k] aligned with rd.topk_idx; experts without tokens are skipped.
template <typename T>
Tensor<T> sparse_dispatch(const DynamicExpertBank<T>& bank, const Tensor<T>& seq, const RoutingDecision& rd,
                          const Tensor<T>& weights);

// Same, using rd.weights as constants.
template <typename T>
Tensor<T> sparse_dispatch(const DynamicExpertBank<T>& bank, const Tensor<T>& seq, const RoutingDecision& rd);

// ---- load balancing ------------------------------------------------------

template <typename T>
struct MoEStats {
  Tensor<T> importance;       // [E], mean full-softmax probability (differentiable)
  std::vector<double> load;   // [E], fraction of tokens whose top-1 expert is e
  std::size_t token_count = 0;
};

template <typename T>
MoEStats<T> moe_stats(const Tensor<T>& scores, const RoutingDecision& rd);

// mean over layers of E * <importance, load>.
template <typename T>
Tensor<T> load_balance_loss(std::span<const MoEStats<T>> stats, std::size_t experts);

}  // namespace moemil
