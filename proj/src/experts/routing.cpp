#include <algorithm>
#include <cmath>
#include <numeric>

#include "moemil/errors.hpp"
#include "moemil/experts/experts.hpp"
#include "moemil/numerics/ops.hpp"

namespace moemil {

template <typename T>
GateParams<T> GateParams<T>::init(std::size_t width, std::size_t experts, Rng& rng) {
  return {uniform_fan_in<T>({experts, width}, width, rng), Tensor<T>::zeros({experts}, true)};
}

template <typename T>
void GateParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
Tensor<T> gate_scores(const GateParams<T>& g, const Tensor<T>& seq) {
  return linear(seq, g.weight, g.bias);
}

template <typename T>
RoutingDecision topk_route(const Tensor<T>& scores, std::size_t k) {
  if (scores.rank() != 2) throw DimensionError("topk_route expects [N,E] scores, got " + shape_str(scores.shape()));
  const std::size_t n = scores.dim(0), e = scores.dim(1);
  if (k < 1 || k > e) {
    throw ContractError("topk_route: k=" + std::to_string(k) + " outside [1," + std::to_string(e) + "]");
  }
  RoutingDecision rd;
  rd.tokens = n;
  rd.experts = e;
  rd.k = k;
  rd.topk_idx.resize(n * k);
  rd.weights.resize(n * k);
  rd.full_probs.resize(n * e);
  const auto sv = scores.data();
  std::vector<std::size_t> order(e);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = sv.data() + i * e;
    for (std::size_t j = 0; j < e; ++j) {
      if (!std::isfinite(row[j])) throw NumericError("topk_route: non-finite gate score for token " + std::to_string(i));
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    // Scores are max-subtracted so the single-expert weight is exp(0)/exp(0) = 1.
    const double top = static_cast<double>(row[order[0]]);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      rd.topk_idx[i * k + j] = order[j];
      rd.weights[i * k + j] = std::exp(static_cast<double>(row[order[j]]) - top);
      total += rd.weights[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) rd.weights[i * k + j] /= total;
    double full_total = 0.0;
    for (std::size_t j = 0; j < e; ++j) {
      rd.full_probs[i * e + j] = std::exp(static_cast<double>(row[j]) - top);
      full_total += rd.full_probs[i * e + j];
    }
    for (std::size_t j = 0; j < e; ++j) rd.full_probs[i * e + j] /= full_total;
  }
  return rd;
}

template <typename T>
Tensor<T> routing_weights(const Tensor<T>& scores, const RoutingDecision& rd) {
  if (scores.rank() != 2 || scores.dim(0) != rd.tokens || scores.dim(1) != rd.experts) {
    throw DimensionError("routing_weights: scores " + shape_str(scores.shape()) + " do not match routing");
  }
  return softmax_lastdim(gather_per_row(scores, rd.topk_idx, rd.k));
}

template <typename T>
MoEStats<T> moe_stats(const Tensor<T>& scores, const RoutingDecision& rd) {
  MoEStats<T> s;
  s.importance = mean_rows(softmax_lastdim(scores));
  s.load.assign(rd.experts, 0.0);
  for (std::size_t i = 0; i < rd.tokens; ++i) s.load[rd.top1(i)] += 1.0;
  for (auto& l : s.load) l /= static_cast<double>(rd.tokens);
  s.token_count = rd.tokens;
  return s;
}

template <typename T>
Tensor<T> load_balance_loss(std::span<const MoEStats<T>> stats, std::size_t experts) {
  if (stats.empty()) throw ContractError("load_balance_loss: no MoE layers");
  Tensor<T> total;
  for (const auto& s : stats) {
    if (s.importance.numel() != experts || s.load.size() != experts) {
      throw DimensionError("load_balance_loss: stats width does not match E=" + std::to_string(experts));
    }
    std::vector<T> load(s.load.begin(), s.load.end());
    const Tensor<T> layer =
        scale(dot(s.importance, Tensor<T>::from({experts}, std::move(load))), static_cast<T>(experts));
    total = total.defined() ? add(total, layer) : layer;
  }
  return scale(total, T{1} / static_cast<T>(stats.size()));
}

#define MOEMIL_INSTANTIATE_ROUTING(T)                                                        \
  template struct GateParams<T>;                                                             \
  template Tensor<T> gate_scores(const GateParams<T>&, const Tensor<T>&);                    \
  template RoutingDecision topk_route(const Tensor<T>&, std::size_t);                        \
  template Tensor<T> routing_weights(const Tensor<T>&, const RoutingDecision&);              \
  template MoEStats<T> moe_stats(const Tensor<T>&, const RoutingDecision&);                  \
  template Tensor<T> load_balance_loss(std::span<const MoEStats<T>>, std::size_t);

MOEMIL_INSTANTIATE_ROUTING(float)
MOEMIL_INSTANTIATE_ROUTING(double)

#undef MOEMIL_INSTANTIATE_ROUTING

}  // namespace moemil
