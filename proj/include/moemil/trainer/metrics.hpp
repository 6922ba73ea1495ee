#pragma once

// Slide-level classification metrics. Per-class binary rates are
// macro-averaged; a rate whose denominator is zero counts as 0.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace moemil {

struct MetricsReport {
  std::size_t classes = 0;
  std::size_t samples = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  double f1 = 0.0;
  double auc = 0.0;  // macro one-vs-rest over the classes where it is defined
  double acc = 0.0;
  double mcc = 0.0;
  double sens = 0.0;
  double spec = 0.0;
  double ppv = 0.0;
  double npv = 0.0;
  // auc_skipped[c]: class c had no positives or no negatives, so it is left
  // out of the AUC average. If every class is skipped, auc is 0.
  std::vector<bool> auc_skipped;

  bool auc_partial() const;
};

// Prediction = argmax of each row (lowest index on ties).
std::size_t argmax_row(std::span<const double> row);

// One-vs-rest AUC of `scores` for binary `positive` flags via midranks:
// P(score_pos > score_neg) + 0.5 P(equal). Requires both groups non-empty.
double binary_auc(std::span<const double> scores, const std::vector<bool>& positive);

// Multiclass MCC from a confusion matrix:
// (c s - sum_k p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2)), 0 when
// the denominator vanishes.
double multiclass_mcc(const std::vector<std::vector<std::size_t>>& confusion);

// ContractError on size mismatches, empty input or labels >= classes.
MetricsReport compute_metrics(std::span<const std::uint32_t> labels, const std::vector<std::vector<double>>& probs);

}  // namespace moemil
