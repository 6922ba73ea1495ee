#pragma once

// Reference implementations used only by the tests. They are written
// directly from the math with plain loops and share no code with the library
// kernels beyond the parameter containers they read.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

#include "moemil/experts/experts.hpp"
#include "moemil/hierarchy/hierarchy.hpp"
#include "moemil/ssm/ssm_layer.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;  // [rows][cols]

template <typename T>
Mat to_mat(const moemil::Tensor<T>& t) {
  const std::size_t rows = t.dim(0), cols = t.numel() / rows;
  Mat m(rows, std::vector<double>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m[i][j] = static_cast<double>(t.data()[i * cols + j]);
  return m;
}

template <typename T>
std::vector<double> to_vec(const moemil::Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

// y = x W^T (+ b), W given as [out][in].
inline Mat affine(const Mat& x, const Mat& w, const std::vector<double>* b = nullptr) {
  Mat y(x.size(), std::vector<double>(w.size(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < w.size(); ++o) {
      double s = b ? (*b)[o] : 0.0;
      for (std::size_t k = 0; k < x[i].size(); ++k) s += x[i][k] * w[o][k];
      y[i][o] = s;
    }
  return y;
}

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }
inline double softplus(double v) { return v > 20 ? v : std::log1p(std::exp(v)); }

inline Mat layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b, double eps = 1e-5) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0.0;
    for (double v : x[i]) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = (x[i][j] - mean) / std::sqrt(var + eps) * g[j] + b[j];
  }
  return y;
}

// h_t = exp(delta_t A) h_{t-1} + delta_t B_t u_t, y_t = C_t h_t + D u_t,
// per channel, A = -exp(a_log).
inline Mat selective_scan(const Mat& u, const Mat& delta, const Mat& a_log, const Mat& b, const Mat& c,
                          const std::vector<double>& skip) {
  const std::size_t L = u.size(), C = u.empty() ? 0 : u[0].size(), S = a_log.empty() ? 0 : a_log[0].size();
  Mat y(L, std::vector<double>(C, 0.0));
  for (std::size_t ch = 0; ch < C; ++ch) {
    std::vector<double> h(S, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
      double out = skip[ch] * u[t][ch];
      for (std::size_t s = 0; s < S; ++s) {
        const double A = -std::exp(a_log[ch][s]);
        h[s] = std::exp(delta[t][ch] * A) * h[s] + delta[t][ch] * b[t][s] * u[t][ch];
        out += c[t][s] * h[s];
      }
      y[t][ch] = out;
    }
  }
  return y;
}

template <typename T>
Mat ssm_layer(const moemil::SsmLayerParams<T>& p, const Mat& x) {
  const std::size_t I = p.dims.inner(), W = p.dims.d_conv, L = x.size();
  const Mat xz = affine(x, to_mat(p.in_proj));
  const Mat kernel = to_mat(p.conv_kernel);
  const auto conv_b = to_vec(p.conv_bias);
  Mat u(L, std::vector<double>(I)), gate(L, std::vector<double>(I));
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t ch = 0; ch < I; ++ch) {
      // causal: output t sees inputs t-W+1..t, kernel tap W-1 on the newest
      double s = conv_b[ch];
      for (std::size_t w = 0; w < W; ++w) {
        if (t + w + 1 < W) continue;
        s += kernel[ch][w] * xz[t + w + 1 - W][ch];
      }
      u[t][ch] = silu(s);
      gate[t][ch] = silu(xz[t][I + ch]);
    }
  const auto dt_bias = to_vec(p.dt_bias);
  Mat delta = affine(u, to_mat(p.dt_proj), &dt_bias);
  for (auto& row : delta)
    for (auto& v : row) v = softplus(v);
  const Mat b = affine(u, to_mat(p.b_proj));
  const Mat c = affine(u, to_mat(p.c_proj));
  Mat y = selective_scan(u, delta, to_mat(p.a_log), b, c, to_vec(p.d_skip));
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t ch = 0; ch < I; ++ch) y[t][ch] *= gate[t][ch];
  return affine(y, to_mat(p.out_proj));
}

inline Mat add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

template <typename T>
Mat ssm_stack(const moemil::SsmStackParams<T>& p, Mat h) {
  for (const auto& layer : p.layers) {
    h = add(h, ssm_layer(layer.ssm, layer_norm(h, to_vec(layer.norm.gamma), to_vec(layer.norm.beta))));
  }
  return h;
}

template <typename T>
Mat expert(const moemil::DynamicExpert<T>& e, const Mat& x) {
  const Mat n = layer_norm(x, to_vec(e.norm.gamma), to_vec(e.norm.beta));
  if (e.kind == moemil::ExpertKind::mamba) return add(x, ssm_layer(e.ssm, n));
  Mat hdn = affine(n, to_mat(e.ffn.w1));
  for (auto& row : hdn)
    for (auto& v : row) v = silu(v);
  return add(x, affine(hdn, to_mat(e.ffn.w2)));
}

// For every expert: scan all tokens, keep the routed ones, run the expert on
// that filtered sequence, then add alpha * output back token by token.
template <typename T>
Mat dense_dispatch(const moemil::DynamicExpertBank<T>& bank, const Mat& x, const moemil::RoutingDecision& rd) {
  Mat y(x.size(), std::vector<double>(x[0].size(), 0.0));
  for (std::size_t e = 0; e < bank.experts.size(); ++e) {
    Mat sub;
    std::vector<std::size_t> where;
    std::vector<double> alpha;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < rd.k; ++j)
        if (rd.topk_idx[i * rd.k + j] == e) {
          sub.push_back(x[i]);
          where.push_back(i);
          alpha.push_back(rd.weights[i * rd.k + j]);
        }
    if (sub.empty()) continue;
    const Mat out = expert(bank.experts[e], sub);
    for (std::size_t r = 0; r < where.size(); ++r)
      for (std::size_t d = 0; d < out[r].size(); ++d) y[where[r]][d] += alpha[r] * out[r][d];
  }
  return y;
}

template <typename T>
Mat static_encode(const moemil::StaticExpertBank<T>& bank, const Mat& x, const std::vector<int>& levels) {
  Mat y(x.size(), std::vector<double>(x[0].size(), 0.0));
  for (std::size_t r = 0; r < bank.experts.size(); ++r) {
    Mat sub;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (levels[i] == static_cast<int>(r + 1)) {
        sub.push_back(x[i]);
        where.push_back(i);
      }
    if (sub.empty()) continue;
    const Mat out = ssm_stack(bank.experts[r], sub);
    for (std::size_t j = 0; j < where.size(); ++j) y[where[j]] = out[j];
  }
  return y;
}

struct TopK {
  std::vector<std::size_t> idx;
  std::vector<double> weights;
};

// Full sort of (score, index) pairs; descending score, ascending index.
inline TopK brute_topk(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> v;
  for (std::size_t e = 0; e < scores.size(); ++e) v.emplace_back(scores[e], e);
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  TopK t;
  double z = 0.0;
  for (std::size_t j = 0; j < k; ++j) z += std::exp(v[j].first - v[0].first);
  for (std::size_t j = 0; j < k; ++j) {
    t.idx.push_back(v[j].second);
    t.weights.push_back(std::exp(v[j].first - v[0].first) / z);
  }
  return t;
}

// Recursive depth-first preorder over paths; children in path order.
inline std::vector<std::size_t> region_nested_order(const std::vector<moemil::PatchNode>& nodes) {
  std::map<moemil::PatchPath, std::size_t> by_path;
  for (const auto& n : nodes) by_path[n.path] = n.token_id;
  std::vector<std::size_t> out;
  std::function<void(const moemil::PatchPath&)> visit = [&](const moemil::PatchPath& p) {
    out.push_back(by_path.at(p));
    for (const auto& [q, tok] : by_path)
      if (q.size() == p.size() + 1 && std::equal(p.begin(), p.end(), q.begin())) visit(q);
  };
  for (const auto& [p, tok] : by_path)
    if (p.size() == 1) visit(p);
  return out;
}

// ---- metrics -------------------------------------------------------------

struct Binary {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline std::size_t predict(const std::vector<double>& row) {
  std::size_t best = 0;
  for (std::size_t c = 0; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

inline Binary binary_counts(const std::vector<std::uint32_t>& y, const Mat& p, std::size_t cls) {
  Binary b;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool truth = y[i] == cls, pred = predict(p[i]) == cls;
    if (truth && pred) ++b.tp;
    if (!truth && pred) ++b.fp;
    if (truth && !pred) ++b.fn;
    if (!truth && !pred) ++b.tn;
  }
  return b;
}

inline double frac(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

// All positive/negative pairs; a tie counts one half.
inline double pair_auc(const std::vector<std::uint32_t>& y, const Mat& p, std::size_t cls, bool* defined) {
  std::uint64_t wins2 = 0, pairs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != cls) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j] == cls) continue;
      ++pairs;
      if (p[i][cls] > p[j][cls]) wins2 += 2;
      if (p[i][cls] == p[j][cls]) wins2 += 1;
    }
  }
  *defined = pairs > 0;
  if (pairs == 0) return 0.0;
  return 0.5 * static_cast<double>(wins2) / static_cast<double>(pairs);
}

// MCC as cov(X,Y)/sqrt(cov(X,X) cov(Y,Y)) over one-hot truth X and
// prediction Y. Every covariance is scaled by N^2 to stay integral, then the
// common factor N is divided out exactly.
inline double covariance_mcc(const std::vector<std::uint32_t>& y, const Mat& p, std::size_t classes) {
  const auto n = static_cast<std::int64_t>(y.size());
  std::vector<std::int64_t> sx(classes, 0), sy(classes, 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    ++sx[y[i]];
    ++sy[predict(p[i])];
  }
  std::int64_t cxy = 0, cxx = 0, cyy = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t k = 0; k < classes; ++k) {
      const std::int64_t xi = (y[i] == k ? n : 0) - sx[k];
      const std::int64_t yi = (predict(p[i]) == k ? n : 0) - sy[k];
      cxy += xi * yi;
      cxx += xi * xi;
      cyy += yi * yi;
    }
  cxy /= n;
  cxx /= n;
  cyy /= n;
  if (cxx == 0 || cyy == 0) return 0.0;
  return static_cast<double>(cxy) / std::sqrt(static_cast<double>(cyy) * static_cast<double>(cxx));
}

}  // namespace oracle
