#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "moemil/numerics/tensor.hpp"

namespace moemil {

// |a - b| / max(1, |a|, |b|)
double relative_error(double a, double b);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[<flat index>]" of the worst element
  std::size_t checked = 0;
};

using NamedTensor = std::pair<std::string, Tensord>;

// Compares the analytic gradient of loss_fn with respect to every element of
// `params` against central finite differences (step h). loss_fn must rebuild
// its graph from the current parameter values on every call.
//
// If max_per_param > 0, only that many evenly spaced elements of each
// parameter are probed.
GradCheckResult gradcheck(const std::function<Tensord()>& loss_fn, std::vector<NamedTensor> params, double h = 1e-6,
                          std::size_t max_per_param = 0);

}  // namespace moemil
