#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pemb/autodiff.hpp"
#include "pemb/kernels.hpp"
#include "pemb/rng.hpp"

namespace pemb {

namespace detail {

template <class T>
[[noreturn]] void shape_fail(const Graph<T>& g, const std::string& op, const std::string& msg) {
  throw ShapeError("node #" + std::to_string(g.size()) + " (" + op + "): " + msg);
}

template <class T>
void require_same_graph(Var<T> a, Var<T> b, const char* op) {
  if (a.graph != b.graph) shape_fail(*a.graph, op, "operands belong to different graphs");
}

template <class T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  require_same_graph(a, b, op);
  if (a.shape() != b.shape()) {
    shape_fail(*a.graph, op,
               "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <class T>
void require_rank(Var<T> a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    shape_fail(*a.graph, op,
               "expected rank " + std::to_string(rank) + ", got " + shape_string(a.shape()));
  }
}

template <class T, class F, class DF>
Var<T> map_unary(Var<T> a, const char* name, F f, DF df) {
  auto& g = *a.graph;
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const bool rg = a.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [ai = a.id, df](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      const auto& x = g.node(ai).value;
      const auto& y = g.node(self).value;
      auto& gx = g.grad(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(x[i], y[i]);
    };
  }
  return g.push(name, std::move(out), rg, std::move(back));
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <class T>
Var<T> relu(Var<T> a) {
  return detail::map_unary(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return detail::map_unary(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> tanh(Var<T> a) {
  return detail::map_unary(
      a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> exp(Var<T> a) {
  return detail::map_unary(
      a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> square(Var<T> a) {
  return detail::map_unary(
      a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  return detail::map_unary(
      a, "scale", [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
Var<T> neg(Var<T> a) {
  return detail::map_unary(
      a, "neg", [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  auto& g = *a.graph;
  Tensor<T> out(a.value());
  const auto& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [ai = a.id, bi = b.id](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      for (auto id : {ai, bi}) {
        if (!g.wants_grad(id)) continue;
        auto& gx = g.grad(id);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      }
    };
  }
  return g.push("add", std::move(out), rg, std::move(back));
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "sub");
  auto& g = *a.graph;
  Tensor<T> out(a.value());
  const auto& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [ai = a.id, bi = b.id](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      if (g.wants_grad(ai)) {
        auto& gx = g.grad(ai);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      }
      if (g.wants_grad(bi)) {
        auto& gx = g.grad(bi);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] -= gy[i];
      }
    };
  }
  return g.push("sub", std::move(out), rg, std::move(back));
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "mul");
  auto& g = *a.graph;
  Tensor<T> out(a.value());
  const auto& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [ai = a.id, bi = b.id](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      if (g.wants_grad(ai)) {
        const auto& bv = g.node(bi).value;
        auto& gx = g.grad(ai);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * bv[i];
      }
      if (g.wants_grad(bi)) {
        const auto& av = g.node(ai).value;
        auto& gx = g.grad(bi);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * av[i];
      }
    };
  }
  return g.push("mul", std::move(out), rg, std::move(back));
}

template <class T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <class T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <class T>
Var<T> operator-(Var<T> a) { return neg(a); }
template <class T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <class T>
Var<T> operator*(T s, Var<T> a) { return scale(a, s); }

// ---- reductions ------------------------------------------------------------

template <class T>
Var<T> sum(Var<T> a) {
  auto& g = *a.graph;
  T s = T(0);
  for (T v : a.value().values()) s += v;
  const bool rg = a.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [ai = a.id](Graph<T>& g, std::size_t self) {
      const T gy = g.node(self).grad[0];
      auto& gx = g.grad(ai);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
    };
  }
  return g.push("sum", Tensor<T>::scalar(s), rg, std::move(back));
}

template <class T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

// ---- shape -----------------------------------------------------------------

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  auto& g = *a.graph;
  if (shape_size(shape) != a.value().size()) {
    detail::shape_fail(g, "reshape",
                       "cannot reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  const bool rg = a.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [ai = a.id](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      auto& gx = g.grad(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    };
  }
  return g.push("reshape", a.value().reshaped(std::move(shape)), rg, std::move(back));
}

/// [N, ...] -> [N, prod(...)]
template <class T>
Var<T> flatten(Var<T> a) {
  const auto& s = a.shape();
  return reshape(a, Shape{s[0], a.value().size() / s[0]});
}

/// Columns [begin, end) of a rank-2 tensor.
template <class T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  detail::require_rank(a, 2, "slice_cols");
  auto& g = *a.graph;
  const std::size_t n = a.shape()[0], d = a.shape()[1];
  if (begin >= end || end > d) {
    detail::shape_fail(g, "slice_cols",
                       "bad column range [" + std::to_string(begin) + "," + std::to_string(end) +
                           ") for " + shape_string(a.shape()));
  }
  const std::size_t w = end - begin;
  Tensor<T> out(Shape{n, w});
  const auto& x = a.value();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x[r * d + begin + c];
  const bool rg = a.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [ai = a.id, n, d, w, begin](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      auto& gx = g.grad(ai);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < w; ++c) gx[r * d + begin + c] += gy[r * w + c];
    };
  }
  return g.push("slice_cols", std::move(out), rg, std::move(back));
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  auto& g = *parts.front().graph;
  const std::size_t n = parts.front().shape().at(0);
  std::size_t total = 0;
  bool rg = false;
  for (auto p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    detail::require_same_graph(p, parts.front(), "concat_cols");
    if (p.shape()[0] != n) detail::shape_fail(g, "concat_cols", "row count mismatch");
    total += p.shape()[1];
    rg = rg || p.requires_grad();
  }
  Tensor<T> out(Shape{n, total});
  std::vector<std::pair<std::size_t, std::size_t>> layout;  // (node id, width)
  std::size_t off = 0;
  for (auto p : parts) {
    const std::size_t w = p.shape()[1];
    const auto& x = p.value();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < w; ++c) out[r * total + off + c] = x[r * w + c];
    layout.emplace_back(p.id, w);
    off += w;
  }
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [layout, n, total](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      std::size_t off = 0;
      for (auto [id, w] : layout) {
        if (g.wants_grad(id)) {
          auto& gx = g.grad(id);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c) gx[r * w + c] += gy[r * total + off + c];
        }
        off += w;
      }
    };
  }
  return g.push("concat_cols", std::move(out), rg, std::move(back));
}

// ---- layers ----------------------------------------------------------------

/// y[N,out] = x[N,in] W[out,in]^T + b[out]
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  auto& g = *x.graph;
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  const std::size_t n = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
  if (w.shape()[1] != in || b.value().size() != out_dim) {
    detail::shape_fail(g, "linear",
                       "input " + shape_string(x.shape()) + " incompatible with weight " +
                           shape_string(w.shape()) + " and bias " + shape_string(b.shape()));
  }
  Tensor<T> out(Shape{n, out_dim});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < out_dim; ++c) out[r * out_dim + c] = b.value()[c];
  kernels::gemm_nt(n, out_dim, in, x.value().data(), w.value().data(), out.data());
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [xi = x.id, wi = w.id, bi = b.id, n, in, out_dim](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      if (g.wants_grad(xi))
        kernels::gemm_nn(n, in, out_dim, gy.data(), g.node(wi).value.data(), g.grad(xi).data());
      if (g.wants_grad(wi))
        kernels::gemm_tn(out_dim, in, n, gy.data(), g.node(xi).value.data(), g.grad(wi).data());
      if (g.wants_grad(bi)) {
        auto& gb = g.grad(bi);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < out_dim; ++c) gb[c] += gy[r * out_dim + c];
      }
    };
  }
  return g.push("linear", std::move(out), rg, std::move(back));
}

/// x[N,C,H,W] * w[O,C,k,k] + b[O] with square kernels.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad) {
  auto& g = *x.graph;
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::size_t n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const std::size_t o = ws[0], k = ws[2];
  if (ws[1] != c || ws[3] != k || b.value().size() != o || h + 2 * pad < k || wd + 2 * pad < k) {
    detail::shape_fail(g, "conv2d",
                       "input " + shape_string(xs) + " incompatible with kernel " + shape_string(ws));
  }
  kernels::ConvGeometry geo{c, h, wd, k, stride, pad, kernels::conv_out_extent(h, k, stride, pad),
                            kernels::conv_out_extent(wd, k, stride, pad)};
  const std::size_t rows = geo.col_rows(), cols_n = geo.col_cols();
  Tensor<T> out(Shape{n, o, geo.out_h, geo.out_w});
  std::vector<T> cols(rows * cols_n);
  for (std::size_t s = 0; s < n; ++s) {
    kernels::im2col(geo, x.value().data() + s * c * h * wd, cols.data());
    T* dst = out.data() + s * o * cols_n;
    for (std::size_t oc = 0; oc < o; ++oc)
      std::fill(dst + oc * cols_n, dst + (oc + 1) * cols_n, b.value()[oc]);
    kernels::gemm_nn(o, cols_n, rows, w.value().data(), cols.data(), dst);
  }
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [xi = x.id, wi = w.id, bi = b.id, geo, n, o](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      const std::size_t rows = geo.col_rows(), cols_n = geo.col_cols();
      const std::size_t in_sz = geo.channels * geo.height * geo.width;
      std::vector<T> cols(rows * cols_n);
      const bool gx = g.wants_grad(xi), gw = g.wants_grad(wi), gb = g.wants_grad(bi);
      for (std::size_t s = 0; s < n; ++s) {
        const T* dy = gy.data() + s * o * cols_n;
        if (gw) {
          kernels::im2col(geo, g.node(xi).value.data() + s * in_sz, cols.data());
          kernels::gemm_nt(o, rows, cols_n, dy, cols.data(), g.grad(wi).data());
        }
        if (gx) {
          std::fill(cols.begin(), cols.end(), T(0));
          kernels::gemm_tn(rows, cols_n, o, g.node(wi).value.data(), dy, cols.data());
          kernels::col2im(geo, cols.data(), g.grad(xi).data() + s * in_sz);
        }
        if (gb) {
          auto& gbias = g.grad(bi);
          for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t j = 0; j < cols_n; ++j) gbias[oc] += dy[oc * cols_n + j];
        }
      }
    };
  }
  return g.push("conv2d", std::move(out), rg, std::move(back));
}

/// Transposed convolution: x[N,Ci,H,W], w[Ci,Co,k,k], b[Co]; output extent
/// (H-1)*stride - 2*pad + k. Exactly the adjoint of conv2d with the same w.
template <class T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad) {
  auto& g = *x.graph;
  detail::require_rank(x, 4, "conv_transpose2d");
  detail::require_rank(w, 4, "conv_transpose2d");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::size_t n = xs[0], ci = xs[1], h = xs[2], wd = xs[3];
  const std::size_t co = ws[1], k = ws[2];
  if (ws[0] != ci || ws[3] != k || b.value().size() != co || (h - 1) * stride + k <= 2 * pad) {
    detail::shape_fail(g, "conv_transpose2d",
                       "input " + shape_string(xs) + " incompatible with kernel " + shape_string(ws));
  }
  const std::size_t oh = (h - 1) * stride + k - 2 * pad, ow = (wd - 1) * stride + k - 2 * pad;
  // Geometry of the equivalent forward conv from the output image to x.
  kernels::ConvGeometry geo{co, oh, ow, k, stride, pad, h, wd};
  const std::size_t rows = geo.col_rows(), cols_n = geo.col_cols();
  Tensor<T> out(Shape{n, co, oh, ow});
  std::vector<T> cols(rows * cols_n);
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(cols.begin(), cols.end(), T(0));
    kernels::gemm_tn(rows, cols_n, ci, w.value().data(), x.value().data() + s * ci * cols_n,
                     cols.data());
    T* dst = out.data() + s * co * oh * ow;
    for (std::size_t oc = 0; oc < co; ++oc)
      std::fill(dst + oc * oh * ow, dst + (oc + 1) * oh * ow, b.value()[oc]);
    kernels::col2im(geo, cols.data(), dst);
  }
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [xi = x.id, wi = w.id, bi = b.id, geo, n, ci](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      const std::size_t rows = geo.col_rows(), cols_n = geo.col_cols();
      const std::size_t out_sz = geo.channels * geo.height * geo.width;
      std::vector<T> cols(rows * cols_n);
      const bool gx = g.wants_grad(xi), gw = g.wants_grad(wi), gb = g.wants_grad(bi);
      for (std::size_t s = 0; s < n; ++s) {
        const T* dy = gy.data() + s * out_sz;
        kernels::im2col(geo, dy, cols.data());
        if (gx)
          kernels::gemm_nn(ci, cols_n, rows, g.node(wi).value.data(), cols.data(),
                           g.grad(xi).data() + s * ci * cols_n);
        if (gw)
          kernels::gemm_nt(ci, rows, cols_n, g.node(xi).value.data() + s * ci * cols_n,
                           cols.data(), g.grad(wi).data());
        if (gb) {
          auto& gbias = g.grad(bi);
          const std::size_t plane = geo.height * geo.width;
          for (std::size_t oc = 0; oc < geo.channels; ++oc)
            for (std::size_t j = 0; j < plane; ++j) gbias[oc] += dy[oc * plane + j];
        }
      }
    };
  }
  return g.push("conv_transpose2d", std::move(out), rg, std::move(back));
}

template <class T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// Per-channel normalisation of [N,C] or [N,C,H,W]. In training mode batch
/// statistics are used and (if update_stats) folded into the running averages;
/// in eval mode the running averages are used.
template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, bool training,
                  bool update_stats = true, T momentum = T(0.1), T eps = T(1e-5)) {
  auto& g = *x.graph;
  const auto& xs = x.shape();
  if (xs.size() != 2 && xs.size() != 4) detail::shape_fail(g, "batch_norm", "rank must be 2 or 4");
  const std::size_t n = xs[0], c = xs[1], plane = xs.size() == 4 ? xs[2] * xs[3] : 1;
  if (gamma.value().size() != c || beta.value().size() != c || stats.running_mean.size() != c) {
    detail::shape_fail(g, "batch_norm", "channel count mismatch for " + shape_string(xs));
  }
  const std::size_t m = n * plane;
  std::vector<T> mu(c), inv_std(c);
  const auto& xv = x.value();
  auto at = [plane, c](std::size_t s, std::size_t ch, std::size_t j) { return (s * c + ch) * plane + j; };
  if (training) {
    if (m < 2) detail::shape_fail(g, "batch_norm", "training mode needs more than one value per channel");
    for (std::size_t ch = 0; ch < c; ++ch) {
      T s1 = T(0);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < plane; ++j) s1 += xv[at(s, ch, j)];
      const T mean_v = s1 / static_cast<T>(m);
      T s2 = T(0);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < plane; ++j) {
          const T d = xv[at(s, ch, j)] - mean_v;
          s2 += d * d;
        }
      const T var = s2 / static_cast<T>(m);
      mu[ch] = mean_v;
      inv_std[ch] = T(1) / std::sqrt(var + eps);
      if (update_stats) {
        stats.running_mean[ch] = (T(1) - momentum) * stats.running_mean[ch] + momentum * mean_v;
        stats.running_var[ch] = (T(1) - momentum) * stats.running_var[ch] +
                                momentum * s2 / static_cast<T>(m - 1);
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = stats.running_mean[ch];
      inv_std[ch] = T(1) / std::sqrt(stats.running_var[ch] + eps);
    }
  }
  Tensor<T> xhat(xs), out(xs);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < plane; ++j) {
        const auto i = at(s, ch, j);
        xhat[i] = (xv[i] - mu[ch]) * inv_std[ch];
        out[i] = gamma.value()[ch] * xhat[i] + beta.value()[ch];
      }
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [xi = x.id, gi = gamma.id, bi = beta.id, xhat = std::move(xhat), inv_std, n, c, plane, m,
            training, at](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      const auto& gam = g.node(gi).value;
      for (std::size_t ch = 0; ch < c; ++ch) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t j = 0; j < plane; ++j) {
            const auto i = at(s, ch, j);
            sum_dy += gy[i];
            sum_dy_xhat += gy[i] * xhat[i];
          }
        if (g.wants_grad(gi)) g.grad(gi)[ch] += sum_dy_xhat;
        if (g.wants_grad(bi)) g.grad(bi)[ch] += sum_dy;
        if (!g.wants_grad(xi)) continue;
        auto& gx = g.grad(xi);
        const T k = gam[ch] * inv_std[ch];
        const T inv_m = T(1) / static_cast<T>(m);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t j = 0; j < plane; ++j) {
            const auto i = at(s, ch, j);
            gx[i] += training ? k * (gy[i] - inv_m * sum_dy - xhat[i] * inv_m * sum_dy_xhat)
                              : k * gy[i];
          }
      }
    };
  }
  return g.push(training ? "batch_norm[train]" : "batch_norm[eval]", std::move(out), rg,
                std::move(back));
}

/// Inverted dropout. Identity when not training or rate == 0.
template <class T>
Var<T> dropout(Var<T> x, T rate, Rng& rng, bool training) {
  auto& g = *x.graph;
  if (rate < T(0) || rate >= T(1)) detail::shape_fail(g, "dropout", "rate must lie in [0,1)");
  if (!training || rate == T(0)) return scale(x, T(1));
  const T keep_scale = T(1) / (T(1) - rate);
  std::vector<T> mask(x.value().size());
  for (auto& v : mask) v = uniform01(rng) < static_cast<double>(rate) ? T(0) : keep_scale;
  Tensor<T> out(x.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const bool rg = x.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [xi = x.id, mask = std::move(mask)](Graph<T>& g, std::size_t self) {
      const auto& gy = g.node(self).grad;
      auto& gx = g.grad(xi);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mask[i];
    };
  }
  return g.push("dropout", std::move(out), rg, std::move(back));
}

// ---- losses ----------------------------------------------------------------

/// Mean of squared differences over every element.
template <class T>
Var<T> mse(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "mse");
  auto& g = *a.graph;
  const auto& x = a.value();
  const auto& y = b.value();
  T acc = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T d = x[i] - y[i];
    acc += d * d;
  }
  const T inv_n = T(1) / static_cast<T>(x.size());
  const bool rg = a.requires_grad() || b.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [ai = a.id, bi = b.id, inv_n](Graph<T>& g, std::size_t self) {
      const T gy = g.node(self).grad[0];
      const auto& x = g.node(ai).value;
      const auto& y = g.node(bi).value;
      const bool ga = g.wants_grad(ai), gb = g.wants_grad(bi);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const T d = T(2) * inv_n * gy * (x[i] - y[i]);
        if (ga) g.grad(ai)[i] += d;
        if (gb) g.grad(bi)[i] -= d;
      }
    };
  }
  return g.push("mse", Tensor<T>::scalar(acc * inv_n), rg, std::move(back));
}

/// Mean binary cross-entropy of sigmoid(logits) against targets in [0,1].
template <class T>
Var<T> bce_with_logits(Var<T> logits, Var<T> targets) {
  detail::require_same_shape(logits, targets, "bce_with_logits");
  auto& g = *logits.graph;
  const auto& z = logits.value();
  const auto& t = targets.value();
  T acc = T(0);
  for (std::size_t i = 0; i < z.size(); ++i)
    acc += std::max(z[i], T(0)) - z[i] * t[i] + std::log1p(std::exp(-std::abs(z[i])));
  const T inv_n = T(1) / static_cast<T>(z.size());
  const bool rg = logits.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [zi = logits.id, ti = targets.id, inv_n](Graph<T>& g, std::size_t self) {
      const T gy = g.node(self).grad[0];
      const auto& z = g.node(zi).value;
      const auto& t = g.node(ti).value;
      auto& gz = g.grad(zi);
      for (std::size_t i = 0; i < z.size(); ++i) {
        const T p = z[i] >= T(0) ? T(1) / (T(1) + std::exp(-z[i]))
                                 : std::exp(z[i]) / (T(1) + std::exp(z[i]));
        gz[i] += gy * inv_n * (p - t[i]);
      }
    };
  }
  return g.push("bce_with_logits", Tensor<T>::scalar(acc * inv_n), rg, std::move(back));
}

/// KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims, averaged over rows.
template <class T>
Var<T> kl_standard_normal(Var<T> mu, Var<T> logvar) {
  detail::require_same_shape(mu, logvar, "kl_standard_normal");
  detail::require_rank(mu, 2, "kl_standard_normal");
  auto& g = *mu.graph;
  const auto& m = mu.value();
  const auto& lv = logvar.value();
  const T inv_rows = T(1) / static_cast<T>(mu.shape()[0]);
  T acc = T(0);
  for (std::size_t i = 0; i < m.size(); ++i) acc += -T(0.5) * (T(1) + lv[i] - m[i] * m[i] - std::exp(lv[i]));
  const bool rg = mu.requires_grad() || logvar.requires_grad();
  typename Graph<T>::BackwardFn back;
  if (rg) {
    back = [mi = mu.id, li = logvar.id, inv_rows](Graph<T>& g, std::size_t self) {
      const T gy = g.node(self).grad[0] * inv_rows;
      const auto& m = g.node(mi).value;
      const auto& lv = g.node(li).value;
      if (g.wants_grad(mi)) {
        auto& gm = g.grad(mi);
        for (std::size_t i = 0; i < m.size(); ++i) gm[i] += gy * m[i];
      }
      if (g.wants_grad(li)) {
        auto& gl = g.grad(li);
        for (std::size_t i = 0; i < lv.size(); ++i) gl[i] += gy * T(-0.5) * (T(1) - std::exp(lv[i]));
      }
    };
  }
  return g.push("kl_standard_normal", Tensor<T>::scalar(acc * inv_rows), rg, std::move(back));
}

}  // namespace pemb
