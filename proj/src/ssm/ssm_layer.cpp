#include "moemil/ssm/ssm_layer.hpp"

#include <cmath>

#include "moemil/errors.hpp"
#include "moemil/numerics/ops.hpp"

namespace moemil {

template <typename T>
SsmLayerParams<T> SsmLayerParams<T>::init(const SsmDims& dims, Rng& rng) {
  const std::size_t D = dims.d_model, I = dims.inner(), S = dims.d_state, W = dims.d_conv;
  if (D == 0 || S == 0 || W == 0 || dims.expand == 0) throw ContractError("SSM dimensions must be positive");
  SsmLayerParams p;
  p.dims = dims;
  p.in_proj = uniform_fan_in<T>({2 * I, D}, D, rng);
  p.conv_kernel = uniform_fan_in<T>({I, W}, W, rng);
  p.conv_bias = uniform_fan_in<T>({I}, W, rng);
  p.dt_proj = uniform_fan_in<T>({I, I}, I, rng);
  std::vector<T> dt_bias(I);
  for (auto& b : dt_bias) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    b = static_cast<T>(dt + std::log(-std::expm1(-dt)));  // softplus^-1(dt)
  }
  p.dt_bias = Tensor<T>::from({I}, std::move(dt_bias), true);
  p.b_proj = uniform_fan_in<T>({S, I}, I, rng);
  p.c_proj = uniform_fan_in<T>({S, I}, I, rng);
  std::vector<T> a_log(I * S);
  for (std::size_t c = 0; c < I; ++c)
    for (std::size_t s = 0; s < S; ++s) a_log[c * S + s] = static_cast<T>(std::log(static_cast<double>(s + 1)));
  p.a_log = Tensor<T>::from({I, S}, std::move(a_log), true);
  p.d_skip = Tensor<T>::full({I}, T{1}, true);
  p.out_proj = uniform_fan_in<T>({D, I}, I, rng);
  return p;
}

template <typename T>
void SsmLayerParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.emplace_back(prefix + ".in_proj", in_proj);
  out.emplace_back(prefix + ".conv_kernel", conv_kernel);
  out.emplace_back(prefix + ".conv_bias", conv_bias);
  out.emplace_back(prefix + ".dt_proj", dt_proj);
  out.emplace_back(prefix + ".dt_bias", dt_bias);
  out.emplace_back(prefix + ".b_proj", b_proj);
  out.emplace_back(prefix + ".c_proj", c_proj);
  out.emplace_back(prefix + ".a_log", a_log);
  out.emplace_back(prefix + ".d_skip", d_skip);
  out.emplace_back(prefix + ".out_proj", out_proj);
}

template <typename T>
std::size_t SsmLayerParams<T>::count(const SsmDims& d) {
  const std::size_t D = d.d_model, I = d.inner(), S = d.d_state, W = d.d_conv;
  return 2 * I * D + I * W + I + I * I + I + 2 * S * I + I * S + I + D * I;
}

template <typename T>
Tensor<T> ssm_forward(const SsmLayerParams<T>& p, const Tensor<T>& seq) {
  if (seq.rank() != 2 || seq.dim(1) != p.dims.d_model) {
    throw DimensionError("ssm_forward: expected [L," + std::to_string(p.dims.d_model) + "], got " +
                         shape_str(seq.shape()));
  }
  const std::size_t I = p.dims.inner();
  const Tensor<T> xz = linear(seq, p.in_proj);
  const Tensor<T> u = silu(depthwise_causal_conv1d(slice_lastdim(xz, 0, I), p.conv_kernel, p.conv_bias));
  const Tensor<T> gate = silu(slice_lastdim(xz, I, I));
  const Tensor<T> delta = softplus(linear(u, p.dt_proj, p.dt_bias));
  const Tensor<T> b = linear(u, p.b_proj);
  const Tensor<T> c = linear(u, p.c_proj);
  const Tensor<T> y = selective_scan(u, delta, p.a_log, b, c, p.d_skip);
  return linear(mul(y, gate), p.out_proj);
}

template <typename T>
SsmStackParams<T> SsmStackParams<T>::init(const SsmDims& dims, std::size_t depth, Rng& rng) {
  SsmStackParams p;
  for (std::size_t l = 0; l < depth; ++l) {
    auto norm = LayerNormParams<T>::init(dims.d_model);
    p.layers.push_back({std::move(norm), SsmLayerParams<T>::init(dims, rng)});
  }
  return p;
}

template <typename T>
void SsmStackParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    layers[l].norm.collect(base + ".norm", out);
    layers[l].ssm.collect(base + ".ssm", out);
  }
}

template <typename T>
Tensor<T> ssm_stack_forward(const SsmStackParams<T>& p, const Tensor<T>& seq) {
  Tensor<T> h = seq;
  for (const auto& layer : p.layers) {
    const Tensor<T> normed = layer_norm(h, layer.norm.gamma, layer.norm.beta, static_cast<T>(kLayerNormEps));
    h = add(h, ssm_forward(layer.ssm, normed));
  }
  return h;
}

template struct SsmLayerParams<float>;
template struct SsmLayerParams<double>;
template struct SsmStackParams<float>;
template struct SsmStackParams<double>;
template Tensor<float> ssm_forward(const SsmLayerParams<float>&, const Tensor<float>&);
template Tensor<double> ssm_forward(const SsmLayerParams<double>&, const Tensor<double>&);
template Tensor<float> ssm_stack_forward(const SsmStackParams<float>&, const Tensor<float>&);
template Tensor<double> ssm_stack_forward(const SsmStackParams<double>&, const Tensor<double>&);

}  // namespace moemil
