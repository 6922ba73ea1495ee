#include "moemil/trainer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moemil/errors.hpp"

namespace moemil {

bool MetricsReport::auc_partial() const {
  return std::any_of(auc_skipped.begin(), auc_skipped.end(), [](bool b) { return b; });
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

double binary_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  if (positive.size() != n) throw ContractError("binary_auc: size mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the midrank keeps everything integral.
  std::uint64_t rank2_pos = 0, n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t rank2 = (i + 1) + j;  // (i+1 + j) is twice the mean 1-based rank
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) {
        rank2_pos += rank2;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractError("binary_auc: needs positives and negatives");
  // wins2 = 2 * (#pos>neg pairs + 0.5 #ties)
  const std::uint64_t wins2 = rank2_pos - n_pos * (n_pos + 1);
  return 0.5 * static_cast<double>(wins2) / static_cast<double>(n_pos * n_neg);
}

double multiclass_mcc(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t k = confusion.size();
  std::int64_t s = 0, c = 0, pt = 0, pp = 0, tt = 0;
  std::vector<std::int64_t> t(k, 0), p(k, 0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto v = static_cast<std::int64_t>(confusion[i][j]);
      t[i] += v;
      p[j] += v;
      s += v;
    }
    c += static_cast<std::int64_t>(confusion[i][i]);
  }
  for (std::size_t i = 0; i < k; ++i) {
    pt += p[i] * t[i];
    pp += p[i] * p[i];
    tt += t[i] * t[i];
  }
  const std::int64_t num = c * s - pt;
  const std::int64_t a = s * s - pp;
  const std::int64_t b = s * s - tt;
  if (a == 0 || b == 0) return 0.0;
  return static_cast<double>(num) / std::sqrt(static_cast<double>(a) * static_cast<double>(b));
}

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport compute_metrics(std::span<const std::uint32_t> labels, const std::vector<std::vector<double>>& probs) {
  if (labels.empty()) throw ContractError("compute_metrics: no samples");
  if (labels.size() != probs.size()) throw ContractError("compute_metrics: labels and probabilities differ in length");
  const std::size_t C = probs.front().size();
  if (C < 2) throw ContractError("compute_metrics: need at least two classes");
  MetricsReport r;
  r.classes = C;
  r.samples = labels.size();
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (probs[i].size() != C) throw ContractError("compute_metrics: ragged probability rows");
    if (labels[i] >= C) throw ContractError("compute_metrics: label " + std::to_string(labels[i]) + " out of range");
    ++r.confusion[labels[i]][argmax_row(probs[i])];
  }
  std::size_t correct = 0;
  for (std::size_t c = 0; c < C; ++c) correct += r.confusion[c][c];
  r.acc = ratio(correct, r.samples);
  r.mcc = multiclass_mcc(r.confusion);

  double f1 = 0, sens = 0, spec = 0, ppv = 0, npv = 0, auc = 0;
  std::size_t auc_count = 0;
  r.auc_skipped.assign(C, false);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t tp = r.confusion[c][c], fn = 0, fp = 0;
    for (std::size_t j = 0; j < C; ++j) {
      if (j == c) continue;
      fn += r.confusion[c][j];
      fp += r.confusion[j][c];
    }
    const std::size_t tn = r.samples - tp - fn - fp;
    f1 += ratio(2 * tp, 2 * tp + fp + fn);
    sens += ratio(tp, tp + fn);
    spec += ratio(tn, tn + fp);
    ppv += ratio(tp, tp + fp);
    npv += ratio(tn, tn + fn);

    std::vector<double> scores(labels.size());
    std::vector<bool> positive(labels.size());
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probs[i][c];
      positive[i] = labels[i] == c;
      n_pos += positive[i] ? 1 : 0;
    }
    if (n_pos == 0 || n_pos == labels.size()) {
      r.auc_skipped[c] = true;
      continue;
    }
    auc += binary_auc(scores, positive);
    ++auc_count;
  }
  const auto dc = static_cast<double>(C);
  r.f1 = f1 / dc;
  r.sens = sens / dc;
  r.spec = spec / dc;
  r.ppv = ppv / dc;
  r.npv = npv / dc;
  r.auc = auc_count == 0 ? 0.0 : auc / static_cast<double>(auc_count);
  return r;
}

}  // namespace moemil
