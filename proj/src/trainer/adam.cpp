#include "moemil/trainer/adam.hpp"

#include <cmath>

#include "moemil/errors.hpp"

namespace moemil {

template <typename T>
AdamState<T> AdamState<T>::init(const ParamList<T>& params) {
  AdamState s;
  for (const auto& [name, p] : params) {
    s.m.emplace_back(p.numel(), T{0});
    s.v.emplace_back(p.numel(), T{0});
    s.steps.push_back(0);
  }
  return s;
}

template <typename T>
void adam_step(const ParamList<T>& params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size() || state.steps.size() != params.size()) {
    throw ContractError("adam_step: optimizer state does not match the parameter list");
  }
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].second;
    if (!p.has_grad()) continue;
    if (state.m[i].size() != p.numel()) throw ContractError("adam_step: moment buffer shape mismatch for '" + params[i].first + "'");
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto t = static_cast<double>(++state.steps[i]);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      w[j] = static_cast<T>(w[j] - cfg.lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps));
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(const ParamList<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step(const ParamList<double>&, AdamState<double>&, const AdamConfig&);

}  // namespace moemil
