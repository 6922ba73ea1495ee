#include "moemil/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "moemil/errors.hpp"
#include "moemil/numerics/kernels.hpp"

namespace moemil {

namespace {

template <typename T>
using Node = detail::Node<T>;
template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

// Wraps a computed value into a tensor, attaching the backward rule only when
// some input needs a gradient and recording is on.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                      BackwardFn<T> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (detail::grad_enabled()) {
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  }
  if (needs) {
    n->requires_grad = true;
    for (const auto& in : inputs) n->parents.push_back(in.defined() ? in.node() : nullptr);
    n->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

// Grad buffer of parent i, or nullptr when that input needs no gradient.
template <typename T>
T* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return p->grad_buffer().data();
}

template <typename T>
void require_finite(std::span<const T> v, const char* op) {
  for (T x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

template <typename T>
Tensor<T> unary(const Tensor<T>& x, T (*f)(T), T (*df)(T, T)) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [df](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xin = self.parents[0]->value;
    for (std::size_t i = 0; i < xin.size(); ++i) gx[i] += self.grad[i] * df(xin[i], self.value[i]);
  });
}

template <typename T>
T softplus_value(T x) {
  // log(1+e^x) = max(x,0) + log1p(e^-|x|)
  return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= T{0}) {
    const T z = std::exp(-x);
    return T{1} / (T{1} + z);
  }
  const T z = std::exp(x);
  return z / (T{1} + z);
}

// Shared broadcast plumbing for add/sub/mul.
enum class BinOp { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinOp op) {
  const bool a_big = a.numel() >= b.numel();
  const Shape& big = a_big ? a.shape() : b.shape();
  const Shape& small = a_big ? b.shape() : a.shape();
  if (!is_suffix(small, big)) {
    throw DimensionError("incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " (only trailing broadcast is supported)");
  }
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t n = std::max(av.size(), bv.size());
  const std::size_t na = av.size(), nb = bv.size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = av[i % na], y = bv[i % nb];
    out[i] = op == BinOp::add ? x + y : op == BinOp::sub ? x - y : x * y;
  }
  return make_result<T>(big, std::move(out), {a, b}, [op, na, nb](Node<T>& self) {
    T* ga = parent_grad(self, 0);
    T* gb = parent_grad(self, 1);
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    const std::size_t n = self.grad.size();
    for (std::size_t i = 0; i < n; ++i) {
      const T g = self.grad[i];
      switch (op) {
        case BinOp::add:
          if (ga) ga[i % na] += g;
          if (gb) gb[i % nb] += g;
          break;
        case BinOp::sub:
          if (ga) ga[i % na] += g;
          if (gb) gb[i % nb] -= g;
          break;
        case BinOp::mul:
          if (ga) ga[i % na] += g * y[i % nb];
          if (gb) gb[i % nb] += g * x[i % na];
          break;
      }
    }
  });
}

void check_indices(std::span<const std::size_t> idx, std::size_t bound, const char* op) {
  for (auto i : idx) {
    if (i >= bound) {
      throw IndexError(std::string(op) + ": index " + std::to_string(i) + " out of range [0," +
                       std::to_string(bound) + ")");
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], n = sb.back();
  if (k != kb) {
    throw DimensionError("matmul inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
  }
  std::size_t batch = 1;
  bool batched_b = false;
  if (sb.size() == 2) {
    // Fold a's leading dims into rows.
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
  } else {
    if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
      throw DimensionError("matmul batch extents differ: " + shape_str(sa) + " x " + shape_str(sb));
    }
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
    batched_b = true;
  }
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  std::vector<T> out(batch * m * n);
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  if (!batched_b) {
    kernels::parallel::gemm_nn(batch * m, n, k, ap, bp, out.data(), false);
  } else {
    for (std::size_t bi = 0; bi < batch; ++bi)
      kernels::parallel::gemm_nn(m, n, k, ap + bi * m * k, bp + bi * k * n, out.data() + bi * m * n, false);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {a, b},
                        [batch, m, n, k, batched_b](Node<T>& self) {
                          T* ga = parent_grad(self, 0);
                          T* gb = parent_grad(self, 1);
                          const T* av = self.parents[0]->value.data();
                          const T* bv = self.parents[1]->value.data();
                          const T* g = self.grad.data();
                          if (!batched_b) {
                            // dA = dY B^T ; dB = A^T dY
                            if (ga) kernels::parallel::gemm_nt(batch * m, k, n, g, bv, ga, true);
                            if (gb) kernels::parallel::gemm_tn(k, n, batch * m, av, g, gb, true);
                            return;
                          }
                          for (std::size_t bi = 0; bi < batch; ++bi) {
                            const T* gi = g + bi * m * n;
                            if (ga) kernels::parallel::gemm_nt(m, k, n, gi, bv + bi * k * n, ga + bi * m * k, true);
                            if (gb) kernels::parallel::gemm_tn(k, n, m, av + bi * m * k, gi, gb + bi * k * n, true);
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sw.size() != 2 || sx.empty() || sx.back() != sw[1]) {
    throw DimensionError("linear: input " + shape_str(sx) + " incompatible with weight " + shape_str(sw));
  }
  const std::size_t in = sw[1], out_f = sw[0];
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(sw));
  }
  const std::size_t rows = x.numel() / in;
  Shape out_shape(sx.begin(), sx.end() - 1);
  out_shape.push_back(out_f);
  std::vector<T> out(rows * out_f);
  kernels::parallel::gemm_nt(rows, out_f, in, x.data().data(), w.data().data(), out.data(), false);
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_f; ++j) out[r * out_f + j] += bv[j];
  }
  const bool has_bias = bias.defined();
  return make_result<T>(std::move(out_shape), std::move(out), {x, w, bias},
                        [rows, in, out_f, has_bias](Node<T>& self) {
                          T* gx = parent_grad(self, 0);
                          T* gw = parent_grad(self, 1);
                          T* gbias = has_bias ? parent_grad(self, 2) : nullptr;
                          const T* g = self.grad.data();
                          // dX = dY W ; dW = dY^T X
                          if (gx) kernels::parallel::gemm_nn(rows, in, out_f, g, self.parents[1]->value.data(), gx, true);
                          if (gw) kernels::parallel::gemm_tn(out_f, in, rows, g, self.parents[0]->value.data(), gw, true);
                          if (gbias) {
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < out_f; ++j) gbias[j] += g[r * out_f + j];
                          }
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose needs rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto xv = x.data();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return make_result<T>(Shape{c, r}, std::move(out), {x}, [r, c](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes size");
  }
  for (auto e : shape)
    if (e == 0) throw DimensionError("reshape to zero extent " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::add);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::sub);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::mul);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factor;
  return make_result<T>(x.shape(), std::move(out), {x}, [factor](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(x, &sigmoid_value<T>, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return v * sigmoid_value(v); },
      [](T v, T) {
        const T s = sigmoid_value(v);
        return s * (T{1} + v * (T{1} - s));
      });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary<T>(x, &softplus_value<T>, [](T v, T) { return sigmoid_value(v); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s{0};
  for (T v : x.data()) s += v;
  return make_result<T>(Shape{}, std::vector<T>{s}, {x}, [](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    const T g = self.grad[0];
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("dot: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto av = a.data();
  const auto bv = b.data();
  T s{0};
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return make_result<T>(Shape{}, std::vector<T>{s}, {a, b}, [](Node<T>& self) {
    T* ga = parent_grad(self, 0);
    T* gb = parent_grad(self, 1);
    const T g = self.grad[0];
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (ga) ga[i] += g * y[i];
      if (gb) gb[i] += g * x[i];
    }
  });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("mean_rows needs rank 2, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), e = x.dim(1);
  const auto xv = x.data();
  std::vector<T> out(e, T{0});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < e; ++j) out[j] += xv[i * e + j];
  const T inv = T{1} / static_cast<T>(n);
  for (auto& v : out) v *= inv;
  return make_result<T>(Shape{e}, std::move(out), {x}, [n, e, inv](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < e; ++j) gx[i * e + j] += self.grad[j] * inv;
  });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const auto xv = x.data();
  require_finite<T>(xv, "softmax_lastdim");
  const std::size_t d = last_dim(x.shape());
  const std::size_t rows = xv.size() / d;
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T* o = out.data() + r * d;
    const T mx = *std::max_element(in, in + d);
    T s{0};
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < d; ++j) o[j] /= s;
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [rows, d](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * d;
      const T* g = self.grad.data() + r * d;
      T s{0};
      for (std::size_t j = 0; j < d; ++j) s += g[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (g[j] - s);
    }
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t label) {
  const Shape& s = logits.shape();
  const bool ok = s.size() == 1 || (s.size() == 2 && s[0] == 1);
  if (!ok) throw DimensionError("cross_entropy expects logits [C] or [1,C], got " + shape_str(s));
  const std::size_t c = s.back();
  if (label >= c) {
    throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range [0," + std::to_string(c) + ")");
  }
  const auto lv = logits.data();
  require_finite<T>(lv, "cross_entropy");
  const T mx = *std::max_element(lv.begin(), lv.end());
  T se{0};
  for (T v : lv) se += std::exp(v - mx);
  const T lse = mx + std::log(se);
  return make_result<T>(Shape{}, std::vector<T>{lse - lv[label]}, {logits}, [c, label, mx, se](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& v = self.parents[0]->value;
    const T g = self.grad[0];
    for (std::size_t j = 0; j < c; ++j) {
      const T p = std::exp(v[j] - mx) / se;
      gx[j] += g * (p - (j == label ? T{1} : T{0}));
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = last_dim(x.shape());
  if (gamma.numel() != d || beta.numel() != d || gamma.rank() != 1 || beta.rank() != 1) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                         " do not match input " + shape_str(x.shape()));
  }
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  const std::size_t rows = xv.size() / d;
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(d);
    const T denom = var + eps;
    rstd[r] = denom > T{0} ? T{1} / std::sqrt(denom) : T{0};
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mean) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gamma, beta},
                        [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
                          T* gx = parent_grad(self, 0);
                          T* gg = parent_grad(self, 1);
                          T* gb = parent_grad(self, 2);
                          const auto& gam = self.parents[1]->value;
                          std::vector<T> dxhat(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* g = self.grad.data() + r * d;
                            const T* xh = xhat.data() + r * d;
                            T m1{0}, m2{0};
                            for (std::size_t j = 0; j < d; ++j) {
                              dxhat[j] = g[j] * gam[j];
                              m1 += dxhat[j];
                              m2 += dxhat[j] * xh[j];
                              if (gg) gg[j] += g[j] * xh[j];
                              if (gb) gb[j] += g[j];
                            }
                            if (!gx) continue;
                            m1 /= static_cast<T>(d);
                            m2 /= static_cast<T>(d);
                            for (std::size_t j = 0; j < d; ++j)
                              gx[r * d + j] += rstd[r] * (dxhat[j] - m1 - xh[j] * m2);
                          }
                        });
}

template <typename T>
Tensor<T> depthwise_causal_conv1d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (x.rank() != 2 || kernel.rank() != 2 || bias.rank() != 1 || kernel.dim(0) != x.dim(1) ||
      bias.dim(0) != x.dim(1)) {
    throw DimensionError("depthwise_causal_conv1d: x " + shape_str(x.shape()) + ", kernel " +
                         shape_str(kernel.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const std::size_t L = x.dim(0), C = x.dim(1), W = kernel.dim(1);
  const auto xv = x.data();
  const auto kv = kernel.data();
  const auto bv = bias.data();
  std::vector<T> out(L * C);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      T acc = bv[c];
      for (std::size_t j = 0; j < W; ++j) {
        // source time t - W + 1 + j, skipped when it falls into the padding
        if (t + 1 + j < W) continue;
        acc += kv[c * W + j] * xv[(t + 1 + j - W) * C + c];
      }
      out[t * C + c] = acc;
    }
  }
  return make_result<T>(Shape{L, C}, std::move(out), {x, kernel, bias}, [L, C, W](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    T* gk = parent_grad(self, 1);
    T* gb = parent_grad(self, 2);
    const auto& xin = self.parents[0]->value;
    const auto& kin = self.parents[1]->value;
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        const T g = self.grad[t * C + c];
        if (gb) gb[c] += g;
        for (std::size_t j = 0; j < W; ++j) {
          if (t + 1 + j < W) continue;
          const std::size_t src = (t + 1 + j - W) * C + c;
          if (gx) gx[src] += kin[c * W + j] * g;
          if (gk) gk[c * W + j] += xin[src] * g;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> idx) {
  if (x.rank() != 2) throw DimensionError("gather_rows needs rank 2, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  check_indices(idx, n, "gather_rows");
  if (idx.empty()) throw DimensionError("gather_rows: empty index list");
  const auto xv = x.data();
  std::vector<T> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(xv.data() + idx[i] * d, d, out.data() + i * d);
  Index saved(idx.begin(), idx.end());
  return make_result<T>(Shape{idx.size(), d}, std::move(out), {x}, [d, saved = std::move(saved)](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < saved.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gx[saved[i] * d + j] += self.grad[i * d + j];
  });
}

template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& dst, std::span<const std::size_t> idx, const Tensor<T>& src) {
  if (dst.rank() != 2 || src.rank() != 2 || dst.dim(1) != src.dim(1) || src.dim(0) != idx.size()) {
    throw DimensionError("scatter_add_rows: dst " + shape_str(dst.shape()) + ", src " + shape_str(src.shape()) +
                         ", " + std::to_string(idx.size()) + " indices");
  }
  const std::size_t n = dst.dim(0), d = dst.dim(1);
  check_indices(idx, n, "scatter_add_rows");
  std::vector<T> out(dst.data().begin(), dst.data().end());
  const auto sv = src.data();
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out[idx[i] * d + j] += sv[i * d + j];
  Index saved(idx.begin(), idx.end());
  return make_result<T>(Shape{n, d}, std::move(out), {dst, src}, [d, saved = std::move(saved)](Node<T>& self) {
    T* gd = parent_grad(self, 0);
    T* gs = parent_grad(self, 1);
    if (gd)
      for (std::size_t i = 0; i < self.grad.size(); ++i) gd[i] += self.grad[i];
    if (gs)
      for (std::size_t i = 0; i < saved.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gs[i * d + j] += self.grad[saved[i] * d + j];
  });
}

template <typename T>
Tensor<T> gather_flat(const Tensor<T>& x, std::span<const std::size_t> idx) {
  check_indices(idx, x.numel(), "gather_flat");
  if (idx.empty()) throw DimensionError("gather_flat: empty index list");
  const auto xv = x.data();
  std::vector<T> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = xv[idx[i]];
  Index saved(idx.begin(), idx.end());
  return make_result<T>(Shape{idx.size()}, std::move(out), {x}, [saved = std::move(saved)](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < saved.size(); ++i) gx[saved[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> gather_per_row(const Tensor<T>& x, std::span<const std::size_t> idx, std::size_t k) {
  if (x.rank() != 2 || k == 0 || idx.size() != x.dim(0) * k) {
    throw DimensionError("gather_per_row: x " + shape_str(x.shape()) + " with " + std::to_string(idx.size()) +
                         " indices and k=" + std::to_string(k));
  }
  const std::size_t n = x.dim(0), e = x.dim(1);
  check_indices(idx, e, "gather_per_row");
  Index flat(idx.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) flat[i * k + j] = i * e + idx[i * k + j];
  return reshape(gather_flat(x, flat), Shape{n, k});
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() != 2 || w.rank() != 1 || w.dim(0) != x.dim(0)) {
    throw DimensionError("scale_rows: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()));
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  const auto xv = x.data();
  const auto wv = w.data();
  std::vector<T> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = wv[i] * xv[i * d + j];
  return make_result<T>(Shape{n, d}, std::move(out), {x, w}, [n, d](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    T* gw = parent_grad(self, 1);
    const auto& xin = self.parents[0]->value;
    const auto& win = self.parents[1]->value;
    for (std::size_t i = 0; i < n; ++i) {
      T acc{0};
      for (std::size_t j = 0; j < d; ++j) {
        const T g = self.grad[i * d + j];
        if (gx) gx[i * d + j] += g * win[i];
        acc += g * xin[i * d + j];
      }
      if (gw) gw[i] += acc;
    }
  });
}

template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t start, std::size_t len) {
  const std::size_t d = last_dim(x.shape());
  if (x.rank() == 0 || len == 0 || start + len > d) {
    throw DimensionError("slice_lastdim [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  std::vector<T> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * d + start, len, out.data() + r * len);
  Shape s = x.shape();
  s.back() = len;
  return make_result<T>(std::move(s), std::move(out), {x}, [rows, d, start, len](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) gx[r * d + start + j] += self.grad[r * len + j];
  });
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a_log, const Tensor<T>& b,
                         const Tensor<T>& c, const Tensor<T>& skip) {
  if (u.rank() != 2 || a_log.rank() != 2) {
    throw DimensionError("selective_scan: u " + shape_str(u.shape()) + ", a_log " + shape_str(a_log.shape()));
  }
  const std::size_t L = u.dim(0), C = u.dim(1), S = a_log.dim(1);
  const bool ok = delta.shape() == u.shape() && a_log.dim(0) == C && b.shape() == Shape{L, S} &&
                  c.shape() == Shape{L, S} && skip.shape() == Shape{C};
  if (!ok) {
    throw DimensionError("selective_scan: inconsistent shapes u " + shape_str(u.shape()) + ", delta " +
                         shape_str(delta.shape()) + ", a_log " + shape_str(a_log.shape()) + ", b " +
                         shape_str(b.shape()) + ", c " + shape_str(c.shape()) + ", skip " + shape_str(skip.shape()));
  }
  std::vector<T> a(C * S);
  const auto al = a_log.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(al[i]);
  const kernels::ScanDims dims{L, C, S};
  std::vector<T> y(L * C);
  std::vector<T> states(L * C * S);
  kernels::parallel::selective_scan<T>(
      dims, kernels::ScanInputs<T>{u.data(), delta.data(), a, b.data(), c.data(), skip.data()}, y, states);
  return make_result<T>(
      Shape{L, C}, std::move(y), {u, delta, a_log, b, c, skip},
      [dims, a = std::move(a), states = std::move(states)](Node<T>& self) {
        const auto& P = self.parents;
        const std::size_t L = dims.steps, C = dims.channels, S = dims.state;
        // The kernel accumulates into every gradient; unused ones go to scratch.
        std::vector<T> gu(L * C, T{0}), gdelta(L * C, T{0}), ga(C * S, T{0}), gb(L * S, T{0}), gc(L * S, T{0}),
            gskip(C, T{0});
        std::vector<T> scratch(2 * L * C * S);
        const kernels::ScanInputs<T> in{P[0]->value, P[1]->value, a, P[3]->value, P[4]->value, P[5]->value};
        kernels::parallel::selective_scan_backward<T>(dims, in, states, self.grad,
                                                      kernels::ScanGrads<T>{gu, gdelta, ga, gb, gc, gskip}, scratch);
        auto flush = [&](std::size_t i, const std::vector<T>& g) {
          T* dst = parent_grad(self, i);
          if (!dst) return;
          for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
        };
        flush(0, gu);
        flush(1, gdelta);
        // a = -exp(a_log) so d/da_log = a * d/da
        if (T* gal = parent_grad(self, 2))
          for (std::size_t j = 0; j < ga.size(); ++j) gal[j] += ga[j] * a[j];
        flush(3, gb);
        flush(4, gc);
        flush(5, gskip);
      });
}

#define MOEMIL_INSTANTIATE_OPS(T)                                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> transpose(const Tensor<T>&);                                                          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                           \
  template Tensor<T> tanh(const Tensor<T>&);                                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                            \
  template Tensor<T> silu(const Tensor<T>&);                                                               \
  template Tensor<T> softplus(const Tensor<T>&);                                                           \
  template Tensor<T> exp(const Tensor<T>&);                                                                \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> dot(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mean_rows(const Tensor<T>&);                                                          \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                                    \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::size_t);                                         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                  \
  template Tensor<T> depthwise_causal_conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                          \
  template Tensor<T> scatter_add_rows(const Tensor<T>&, std::span<const std::size_t>, const Tensor<T>&);   \
  template Tensor<T> gather_flat(const Tensor<T>&, std::span<const std::size_t>);                          \
  template Tensor<T> gather_per_row(const Tensor<T>&, std::span<const std::size_t>, std::size_t);          \
  template Tensor<T> scale_rows(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> slice_lastdim(const Tensor<T>&, std::size_t, std::size_t);                            \
  template Tensor<T> selective_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                    const Tensor<T>&, const Tensor<T>&);

MOEMIL_INSTANTIATE_OPS(float)
MOEMIL_INSTANTIATE_OPS(double)

#undef MOEMIL_INSTANTIATE_OPS

}  // namespace moemil
