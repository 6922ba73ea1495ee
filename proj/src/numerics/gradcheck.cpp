#include "moemil/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace moemil {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

GradCheckResult gradcheck(const std::function<Tensord()>& loss_fn, std::vector<NamedTensor> params, double h,
                          std::size_t max_per_param) {
  for (auto& [name, p] : params) p.zero_grad();
  Tensord loss = loss_fn();
  loss.backward();

  GradCheckResult result;
  NoGradGuard no_grad;
  for (auto& [name, p] : params) {
    const std::size_t n = p.numel();
    std::vector<double> analytic(n, 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    const std::size_t stride = (max_per_param > 0 && n > max_per_param) ? n / max_per_param : 1;
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = values[i];
      values[i] = orig + h;
      const double plus = loss_fn().item();
      values[i] = orig - h;
      const double minus = loss_fn().item();
      values[i] = orig;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric);
      ++result.checked;
      if (err > result.max_rel_error || result.worst.empty()) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst = name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  return result;
}

}  // namespace moemil
