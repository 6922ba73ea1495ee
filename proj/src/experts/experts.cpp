#include "moemil/experts/experts.hpp"

#include "moemil/errors.hpp"
#include "moemil/numerics/ops.hpp"

namespace moemil {

template <typename T>
StaticExpertBank<T> StaticExpertBank<T>::init(const SsmDims& dims, int levels, std::size_t depth, Rng& rng) {
  if (levels < 1) throw ContractError("static expert bank needs at least one level");
  StaticExpertBank bank;
  for (int r = 0; r < levels; ++r) bank.experts.push_back(SsmStackParams<T>::init(dims, depth, rng));
  return bank;
}

template <typename T>
void StaticExpertBank<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t r = 0; r < experts.size(); ++r) experts[r].collect(prefix + "." + std::to_string(r + 1), out);
}

template <typename T>
Tensor<T> static_encode(const StaticExpertBank<T>& bank, const Tensor<T>& seq, std::span<const int> levels) {
  if (seq.rank() != 2 || seq.dim(0) != levels.size()) {
    throw DimensionError("static_encode: " + std::to_string(levels.size()) + " levels for sequence " +
                         shape_str(seq.shape()));
  }
  const int R = static_cast<int>(bank.experts.size());
  std::vector<std::vector<std::size_t>> subsets(bank.experts.size());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < 1 || levels[i] > R) {
      throw ContractError("static_encode: token " + std::to_string(i) + " has level " + std::to_string(levels[i]) +
                          " outside [1," + std::to_string(R) + "]");
    }
    subsets[static_cast<std::size_t>(levels[i] - 1)].push_back(i);
  }
  Tensor<T> out = Tensor<T>::zeros(seq.shape());
  for (std::size_t r = 0; r < subsets.size(); ++r) {
    const auto& idx = subsets[r];
    if (idx.empty()) continue;
    out = scatter_add_rows(out, idx, ssm_stack_forward(bank.experts[r], gather_rows(seq, idx)));
  }
  return out;
}

template <typename T>
DynamicExpert<T> DynamicExpert<T>::init_mamba(const SsmDims& dims, Rng& rng) {
  DynamicExpert e;
  e.kind = ExpertKind::mamba;
  e.norm = LayerNormParams<T>::init(dims.d_model);
  e.ssm = SsmLayerParams<T>::init(dims, rng);
  return e;
}

template <typename T>
DynamicExpert<T> DynamicExpert<T>::init_ffn(std::size_t width, std::size_t hidden, Rng& rng) {
  DynamicExpert e;
  e.kind = ExpertKind::ffn;
  e.norm = LayerNormParams<T>::init(width);
  e.ffn.w1 = uniform_fan_in<T>({hidden, width}, width, rng);
  e.ffn.w2 = uniform_fan_in<T>({width, hidden}, hidden, rng);
  return e;
}

template <typename T>
void DynamicExpert<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  norm.collect(prefix + ".norm", out);
  if (kind == ExpertKind::mamba) {
    ssm.collect(prefix + ".ssm", out);
  } else {
    out.emplace_back(prefix + ".ffn.w1", ffn.w1);
    out.emplace_back(prefix + ".ffn.w2", ffn.w2);
  }
}

template <typename T>
Tensor<T> expert_forward(const DynamicExpert<T>& e, const Tensor<T>& x) {
  const Tensor<T> normed = layer_norm(x, e.norm.gamma, e.norm.beta, static_cast<T>(kLayerNormEps));
  if (e.kind == ExpertKind::mamba) return add(x, ssm_forward(e.ssm, normed));
  return add(x, linear(silu(linear(normed, e.ffn.w1)), e.ffn.w2));
}

template <typename T>
void DynamicExpertBank<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t e = 0; e < experts.size(); ++e) experts[e].collect(prefix + "." + std::to_string(e), out);
}

template <typename T>
Tensor<T> sparse_dispatch(const DynamicExpertBank<T>& bank, const Tensor<T>& seq, const RoutingDecision& rd,
                          const Tensor<T>& weights) {
  if (seq.rank() != 2 || seq.dim(0) != rd.tokens) {
    throw ContractError("sparse_dispatch: routing covers " + std::to_string(rd.tokens) + " tokens, sequence is " +
                        shape_str(seq.shape()));
  }
  if (rd.experts != bank.experts.size()) {
    throw ContractError("sparse_dispatch: routing over " + std::to_string(rd.experts) + " experts, bank has " +
                        std::to_string(bank.experts.size()));
  }
  if (weights.shape() != Shape{rd.tokens, rd.k}) {
    throw DimensionError("sparse_dispatch: weights " + shape_str(weights.shape()) + " do not match routing");
  }
  // Routed token positions (ascending) and their weight slots, per expert.
  std::vector<std::vector<std::size_t>> tokens(rd.experts), slots(rd.experts);
  for (std::size_t i = 0; i < rd.tokens; ++i) {
    for (std::size_t j = 0; j < rd.k; ++j) {
      const std::size_t e = rd.expert(i, j);
      tokens[e].push_back(i);
      slots[e].push_back(i * rd.k + j);
    }
  }
  Tensor<T> out = Tensor<T>::zeros(seq.shape());
  for (std::size_t e = 0; e < rd.experts; ++e) {
    if (tokens[e].empty()) continue;
    const Tensor<T> y = expert_forward(bank.experts[e], gather_rows(seq, tokens[e]));
    out = scatter_add_rows(out, tokens[e], scale_rows(y, gather_flat(weights, slots[e])));
  }
  return out;
}

template <typename T>
Tensor<T> sparse_dispatch(const DynamicExpertBank<T>& bank, const Tensor<T>& seq, const RoutingDecision& rd) {
  std::vector<T> w(rd.weights.begin(), rd.weights.end());
  return sparse_dispatch(bank, seq, rd, Tensor<T>::from({rd.tokens, rd.k}, std::move(w)));
}

#define MOEMIL_INSTANTIATE_EXPERTS(T)                                                                          \
  template struct StaticExpertBank<T>;                                                                         \
  template Tensor<T> static_encode(const StaticExpertBank<T>&, const Tensor<T>&, std::span<const int>);       \
  template struct DynamicExpert<T>;                                                                            \
  template struct DynamicExpertBank<T>;                                                                        \
  template Tensor<T> expert_forward(const DynamicExpert<T>&, const Tensor<T>&);                                \
  template Tensor<T> sparse_dispatch(const DynamicExpertBank<T>&, const Tensor<T>&, const RoutingDecision&,    \
                                     const Tensor<T>&);                                                        \
  template Tensor<T> sparse_dispatch(const DynamicExpertBank<T>&, const Tensor<T>&, const RoutingDecision&);

MOEMIL_INSTANTIATE_EXPERTS(float)
MOEMIL_INSTANTIATE_EXPERTS(double)

#undef MOEMIL_INSTANTIATE_EXPERTS

}  // namespace moemil
