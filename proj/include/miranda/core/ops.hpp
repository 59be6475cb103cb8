#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "miranda/core/graph.hpp"
#include "miranda/core/tensor.hpp"

namespace miranda {

namespace detail {

/// C (m x n) = op(A) * op(B) (+ C when accumulating); all row-major. With
/// trans_a, A is stored k x m; with trans_b, B is stored n x k.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                 std::size_t k, const double* A, const double* B, double* C,
                 bool accumulate) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
             K = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> c(C, M, N);
  if (!accumulate) c.setZero();
  if (!trans_a && !trans_b) {
    c.noalias() += CMap(A, M, K) * CMap(B, K, N);
  } else if (trans_a && !trans_b) {
    c.noalias() += CMap(A, K, M).transpose() * CMap(B, K, N);
  } else if (!trans_a && trans_b) {
    c.noalias() += CMap(A, M, K) * CMap(B, N, K).transpose();
  } else {
    c.noalias() += CMap(A, K, M).transpose() * CMap(B, N, K).transpose();
  }
}

inline std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

/// Shape viewed as (outer, n, inner) around `axis`.
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() >= big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - small.size());
}

inline void same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) {
    throw Error(std::string(op) + ": operands belong to different graphs");
  }
}

/// Sums `g` (shape big) down to a tensor of `small` elements repeated
/// contiguously `g.size() / small` times.
inline Tensor sum_repeats(const Tensor& g, const Shape& small) {
  Tensor out(small, 0.0);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < g.size(); ++i) out[i % n] += g[i];
  return out;
}

/// Elementwise binary op with leading-dimension broadcasting only.
template <class F, class DA, class DB>
Var binary(const char* op, Var a, Var b, F f, DA dfa, DB dfb) {
  same_graph(a, b, op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Shape out_shape;
  if (av.shape() == bv.shape() || is_suffix(bv.shape(), av.shape())) {
    out_shape = av.shape();
  } else if (is_suffix(av.shape(), bv.shape())) {
    out_shape = bv.shape();
  } else {
    throw_shape(op, av.shape(), bv.shape());
  }
  Tensor out(out_shape);
  const std::size_t na = av.size(), nb = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i % na], bv[i % nb]);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(
      op, std::move(out), {ia, ib},
      [ia, ib, dfa, dfb](Graph& g, const Tensor& y, const Tensor& gy) {
        const Tensor& x1 = g.value(ia);
        const Tensor& x2 = g.value(ib);
        const std::size_t n1 = x1.size(), n2 = x2.size();
        if (g.requires_grad(ia)) {
          Tensor ga(y.shape());
          for (std::size_t i = 0; i < y.size(); ++i)
            ga[i] = dfa(x1[i % n1], x2[i % n2], y[i], gy[i]);
          g.accumulate(ia, n1 == y.size() ? ga : sum_repeats(ga, x1.shape()));
        }
        if (g.requires_grad(ib)) {
          Tensor gb(y.shape());
          for (std::size_t i = 0; i < y.size(); ++i)
            gb[i] = dfb(x1[i % n1], x2[i % n2], y[i], gy[i]);
          g.accumulate(ib, n2 == y.size() ? gb : sum_repeats(gb, x2.shape()));
        }
      });
}

/// Elementwise unary op; `df(x, y, gy)` returns the input gradient.
template <class F, class DF>
Var unary(const char* op, Var a, F f, DF df) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id();
  return a.graph().record(
      op, std::move(out), {ia},
      [ia, df](Graph& g, const Tensor& y, const Tensor& gy) {
        const Tensor& x = g.value(ia);
        Tensor gx(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] = df(x[i], y[i], gy[i]);
        g.accumulate(ia, gx);
      });
}

/// Copies `in` into the layout obtained by swapping axes a1 and a2.
inline Tensor swap_axes(const Tensor& in, std::size_t a1, std::size_t a2) {
  Shape out_shape = in.shape();
  std::swap(out_shape[a1], out_shape[a2]);
  Tensor out(out_shape);
  const std::size_t r = in.rank();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in.dim(i + 1);
  std::vector<std::size_t> src_stride = in_stride;
  std::swap(src_stride[a1], src_stride[a2]);
  // Innermost output axis is walked with a fixed source stride.
  const std::size_t last = out_shape[r - 1];
  const std::size_t last_stride = src_stride[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < out.size(); o += last) {
    double* dst = out.ptr() + o;
    const double* s = in.ptr() + src;
    for (std::size_t j = 0; j < last; ++j) dst[j] = s[j * last_stride];
    for (std::size_t ax = r - 1; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        src += src_stride[ax];
        break;
      }
      src -= src_stride[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(Var a, Var b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double g) { return g; },
      [](double, double, double, double g) { return g; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double g) { return g; },
      [](double, double, double, double g) { return -g; });
}

inline Var mul(Var a, Var b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double, double g) { return g * y; },
      [](double x, double, double, double g) { return g * x; });
}

inline Var div(Var a, Var b) {
  return detail::binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double, double g) { return g / y; },
      [](double, double y, double out, double g) { return -g * out / y; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

inline Var scale(Var a, double c) {
  return detail::unary(
      "scale", a, [c](double x) { return c * x; },
      [c](double, double, double g) { return c * g; });
}

inline Var add_scalar(Var a, double c) {
  return detail::unary(
      "add_scalar", a, [c](double x) { return x + c; },
      [](double, double, double g) { return g; });
}

inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

inline Var exp(Var a) {
  return detail::unary(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y, double g) { return g * y; });
}

inline Var log(Var a) {
  return detail::unary(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double, double g) { return g / x; });
}

inline Var sqrt(Var a) {
  return detail::unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y, double g) { return g * 0.5 / y; });
}

inline Var pow(Var a, double p) {
  return detail::unary(
      "pow", a, [p](double x) { return std::pow(x, p); },
      [p](double x, double, double g) { return g * p * std::pow(x, p - 1.0); });
}

inline Var relu(Var a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

/// log(1 + e^x), evaluated without overflow.
inline Var softplus(Var a) {
  return detail::unary(
      "softplus", a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double, double g) {
        const double e = std::exp(-std::abs(x));
        return g * (x >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e));
      });
}

/// Gradient reversal: identity forward, gradient scaled by -lambda backward.
inline Var gradient_reversal(Var a, double lambda) {
  if (!(lambda >= 0.0)) throw Error("gradient_reversal: lambda must be >= 0");
  const std::size_t ia = a.id();
  return a.graph().record(
      "grl", a.value(), {ia},
      [ia, lambda](Graph& g, const Tensor&, const Tensor& gy) {
        Tensor gx(gy.shape());
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = -lambda * gy[i];
        g.accumulate(ia, gx);
      });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a, int axis, bool keepdim = false) {
  const Shape& s = a.shape();
  const std::size_t ax = detail::norm_axis(axis, s.size(), "sum");
  const auto v = detail::axis_view(s, ax);
  Shape out_shape = s;
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
    if (out_shape.empty()) out_shape = {1};
  }
  Tensor out(out_shape, 0.0);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t k = 0; k < v.n; ++k)
      for (std::size_t i = 0; i < v.inner; ++i)
        out[o * v.inner + i] += x[(o * v.n + k) * v.inner + i];
  const std::size_t ia = a.id();
  return a.graph().record(
      "sum", std::move(out), {ia},
      [ia, v](Graph& g, const Tensor&, const Tensor& gy) {
        Tensor gx(g.value(ia).shape());
        for (std::size_t o = 0; o < v.outer; ++o)
          for (std::size_t k = 0; k < v.n; ++k)
            for (std::size_t i = 0; i < v.inner; ++i)
              gx[(o * v.n + k) * v.inner + i] = gy[o * v.inner + i];
        g.accumulate(ia, gx);
      });
}

inline Var mean(Var a, int axis, bool keepdim = false) {
  const std::size_t ax = detail::norm_axis(axis, a.rank(), "mean");
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(a.dim(ax)));
}

inline Var sum_all(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  const std::size_t ia = a.id();
  return a.graph().record(
      "sum_all", Tensor::scalar(s), {ia},
      [ia](Graph& g, const Tensor&, const Tensor& gy) {
        g.accumulate(ia, Tensor(g.value(ia).shape(), gy[0]));
      });
}

inline Var mean_all(Var a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var softmax(Var a, int axis) {
  const Shape& s = a.shape();
  const std::size_t ax = detail::norm_axis(axis, s.size(), "softmax");
  const auto v = detail::axis_view(s, ax);
  const Tensor& x = a.value();
  Tensor out(s);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.n * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v.n; ++k) mx = std::max(mx, x[base + k * v.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < v.n; ++k) {
        const double e = std::exp(x[base + k * v.inner] - mx);
        out[base + k * v.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < v.n; ++k) out[base + k * v.inner] /= z;
    }
  }
  const std::size_t ia = a.id();
  return a.graph().record(
      "softmax", std::move(out), {ia},
      [ia, v](Graph& g, const Tensor& y, const Tensor& gy) {
        Tensor gx(y.shape());
        for (std::size_t o = 0; o < v.outer; ++o) {
          for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.n * v.inner + i;
            double dot = 0.0;
            for (std::size_t k = 0; k < v.n; ++k)
              dot += gy[base + k * v.inner] * y[base + k * v.inner];
            for (std::size_t k = 0; k < v.n; ++k) {
              const std::size_t e = base + k * v.inner;
              gx[e] = y[e] * (gy[e] - dot);
            }
          }
        }
        g.accumulate(ia, gx);
      });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

/// Batched matrix product over the last two axes. Leading dimensions must be
/// equal, or one operand is a plain matrix shared across the other's batch.
inline Var matmul(Var a, Var b) {
  detail::same_graph(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw_shape("matmul", sa, sb);
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t k2 = sb[sb.size() - 2], n = sb.back();
  if (k != k2) throw_shape("matmul", sa, sb);
  const Shape lead_a(sa.begin(), sa.end() - 2);
  const Shape lead_b(sb.begin(), sb.end() - 2);
  Shape lead;
  if (lead_a == lead_b || lead_b.empty()) {
    lead = lead_a;
  } else if (lead_a.empty()) {
    lead = lead_b;
  } else {
    throw_shape("matmul", sa, sb);
  }
  const std::size_t batch = numel(lead);
  const bool a_shared = lead_a.empty() && batch > 1;
  const bool b_shared = lead_b.empty() && batch > 1;
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);
  const double* A = a.value().ptr();
  const double* B = b.value().ptr();
  if (b_shared) {
    detail::gemm(false, false, batch * m, n, k, A, B, out.ptr(), false);
  } else {
    for (std::size_t t = 0; t < batch; ++t) {
      detail::gemm(false, false, m, n, k, A + (a_shared ? 0 : t * m * k),
                   B + t * k * n, out.ptr() + t * m * n, false);
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(
      "matmul", std::move(out), {ia, ib},
      [=](Graph& g, const Tensor&, const Tensor& gy) {
        const double* A = g.value(ia).ptr();
        const double* B = g.value(ib).ptr();
        const double* G = gy.ptr();
        if (g.requires_grad(ia)) {
          Tensor ga(g.value(ia).shape(), 0.0);
          if (b_shared) {
            detail::gemm(false, true, batch * m, k, n, G, B, ga.ptr(), false);
          } else {
            for (std::size_t t = 0; t < batch; ++t) {
              detail::gemm(false, true, m, k, n, G + t * m * n, B + t * k * n,
                           ga.ptr() + (a_shared ? 0 : t * m * k), true);
            }
          }
          g.accumulate(ia, ga);
        }
        if (g.requires_grad(ib)) {
          Tensor gb(g.value(ib).shape(), 0.0);
          if (b_shared) {
            detail::gemm(true, false, k, n, batch * m, A, G, gb.ptr(), false);
          } else {
            for (std::size_t t = 0; t < batch; ++t) {
              detail::gemm(true, false, k, n, m, A + (a_shared ? 0 : t * m * k),
                           G + t * m * n, gb.ptr() + t * k * n, true);
            }
          }
          g.accumulate(ib, gb);
        }
      });
}

inline Var transpose(Var a, int axis1 = -2, int axis2 = -1) {
  const std::size_t a1 = detail::norm_axis(axis1, a.rank(), "transpose");
  const std::size_t a2 = detail::norm_axis(axis2, a.rank(), "transpose");
  if (a1 == a2) return a;
  const std::size_t ia = a.id();
  return a.graph().record(
      "transpose", detail::swap_axes(a.value(), a1, a2), {ia},
      [ia, a1, a2](Graph& g, const Tensor&, const Tensor& gy) {
        g.accumulate(ia, detail::swap_axes(gy, a1, a2));
      });
}

inline Var reshape(Var a, Shape shape) {
  const std::size_t ia = a.id();
  return a.graph().record(
      "reshape", a.value().reshaped(std::move(shape)), {ia},
      [ia](Graph& g, const Tensor&, const Tensor& gy) {
        g.accumulate(ia, gy.reshaped(g.value(ia).shape()));
      });
}

inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw Error("concat: no operands");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = detail::norm_axis(axis, s0.size(), "concat");
  Shape out_shape = s0;
  out_shape[ax] = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    detail::same_graph(parts[0], p, "concat");
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw_shape("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != s0[i]) throw_shape("concat", s0, s);
    }
    out_shape[ax] += s[ax];
    ids.push_back(p.id());
    widths.push_back(detail::axis_view(s, ax).n * detail::axis_view(s, ax).inner);
  }
  const auto v = detail::axis_view(out_shape, ax);
  const std::size_t row = v.n * v.inner;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& x = parts[p].value();
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(x.ptr() + o * widths[p], widths[p], out.ptr() + o * row + offset);
    }
    offset += widths[p];
  }
  return parts[0].graph().record(
      "concat", std::move(out), ids,
      [ids, widths, v, row](Graph& g, const Tensor&, const Tensor& gy) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (g.requires_grad(ids[p])) {
            Tensor gx(g.value(ids[p]).shape());
            for (std::size_t o = 0; o < v.outer; ++o) {
              std::copy_n(gy.ptr() + o * row + offset, widths[p],
                          gx.ptr() + o * widths[p]);
            }
            g.accumulate(ids[p], gx);
          }
          offset += widths[p];
        }
      });
}

/// Elements [begin, end) along `axis`.
inline Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  const std::size_t ax = detail::norm_axis(axis, s.size(), "slice");
  if (begin >= end || end > s[ax]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for axis of size " +
                     std::to_string(s[ax]) + " in " + shape_str(s));
  }
  const auto v = detail::axis_view(s, ax);
  Shape out_shape = s;
  out_shape[ax] = end - begin;
  const std::size_t in_row = v.n * v.inner;
  const std::size_t out_row = (end - begin) * v.inner;
  const std::size_t off = begin * v.inner;
  Tensor out(out_shape);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(x.ptr() + o * in_row + off, out_row, out.ptr() + o * out_row);
  const std::size_t ia = a.id();
  return a.graph().record(
      "slice", std::move(out), {ia},
      [=](Graph& g, const Tensor&, const Tensor& gy) {
        Tensor gx(g.value(ia).shape(), 0.0);
        for (std::size_t o = 0; o < v.outer; ++o)
          std::copy_n(gy.ptr() + o * out_row, out_row, gx.ptr() + o * in_row + off);
        g.accumulate(ia, gx);
      });
}

/// Explicit broadcast to `shape`: new leading axes are prepended and size-1
/// axes are repeated.
inline Var expand(Var a, const Shape& shape) {
  const Shape& s = a.shape();
  if (s.size() > shape.size()) throw_shape("expand", s, shape);
  const std::size_t lead = shape.size() - s.size();
  Shape src(lead, 1);
  src.insert(src.end(), s.begin(), s.end());
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (src[i] != shape[i] && src[i] != 1) throw_shape("expand", s, shape);
  }
  if (src == shape) return reshape(a, shape);
  const std::size_t r = shape.size();
  // Source strides; broadcast axes get stride 0.
  std::vector<std::size_t> stride(r, 0);
  std::size_t acc = 1;
  for (std::size_t i = r; i-- > 0;) {
    stride[i] = src[i] == 1 ? 0 : acc;
    acc *= src[i];
  }
  auto map_index = [stride, shape, r](std::size_t flat) {
    std::size_t off = 0;
    for (std::size_t i = r; i-- > 0;) {
      off += (flat % shape[i]) * stride[i];
      flat /= shape[i];
    }
    return off;
  };
  Tensor out(shape);
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[map_index(i)];
  const std::size_t ia = a.id();
  return a.graph().record(
      "expand", std::move(out), {ia},
      [ia, map_index](Graph& g, const Tensor&, const Tensor& gy) {
        Tensor gx(g.value(ia).shape(), 0.0);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[map_index(i)] += gy[i];
        g.accumulate(ia, gx);
      });
}

// ---------------------------------------------------------------------------
// Attention

/// Multi-head scaled dot-product attention on packed heads. q is (B, Lq, D),
/// k and v are (B, Lk, D); head h owns feature columns [h*D/heads, (h+1)*D/heads).
/// Returns softmax(q_h k_h^T / sqrt(dh)) v_h packed back to (B, Lq, D). Only the
/// attention probabilities are kept for the backward pass.
inline Var attention(Var q, Var k, Var v, std::size_t heads) {
  detail::same_graph(q, k, "attention");
  detail::same_graph(q, v, "attention");
  if (q.rank() != 3 || k.rank() != 3 || k.shape() != v.shape() || q.dim(0) != k.dim(0) ||
      q.dim(2) != k.dim(2)) {
    throw_shape("attention", q.shape(), k.shape());
  }
  const std::size_t B = q.dim(0), Lq = q.dim(1), Lk = k.dim(1), D = q.dim(2);
  if (heads == 0 || D % heads != 0) throw Error("attention: dim not divisible by heads");
  const std::size_t dh = D / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Strided = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
  using CStrided = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
  using MMap = Eigen::Map<Mat>;
  const auto eLq = static_cast<Eigen::Index>(Lq), eLk = static_cast<Eigen::Index>(Lk),
             edh = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(D));

  auto probs = std::make_shared<Tensor>(Shape{B, heads, Lq, Lk});
  Tensor out({B, Lq, D});
  const Tensor &Q = q.value(), &K = k.value(), &V = v.value();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      CStrided qh(Q.ptr() + b * Lq * D + h * dh, eLq, edh, stride);
      CStrided kh(K.ptr() + b * Lk * D + h * dh, eLk, edh, stride);
      CStrided vh(V.ptr() + b * Lk * D + h * dh, eLk, edh, stride);
      MMap p(probs->ptr() + (b * heads + h) * Lq * Lk, eLq, eLk);
      p.noalias() = (qh * kh.transpose()) * inv;
      for (Eigen::Index i = 0; i < eLq; ++i) {
        auto row = p.row(i);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      Strided oh(out.ptr() + b * Lq * D + h * dh, eLq, edh, stride);
      oh.noalias() = p * vh;
    }
  }

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.graph().record(
      "attention", std::move(out), {iq, ik, iv},
      [=](Graph& g, const Tensor&, const Tensor& gy) {
        const Tensor &Qv = g.value(iq), &Kv = g.value(ik), &Vv = g.value(iv);
        Tensor gq(Qv.shape(), 0.0), gk(Kv.shape(), 0.0), gv(Vv.shape(), 0.0);
        Mat dp(eLq, eLk);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off_q = b * Lq * D + h * dh, off_k = b * Lk * D + h * dh;
            CStrided qh(Qv.ptr() + off_q, eLq, edh, stride);
            CStrided kh(Kv.ptr() + off_k, eLk, edh, stride);
            CStrided vh(Vv.ptr() + off_k, eLk, edh, stride);
            CStrided go(gy.ptr() + off_q, eLq, edh, stride);
            Eigen::Map<const Mat> p(probs->ptr() + (b * heads + h) * Lq * Lk, eLq, eLk);
            Strided(gv.ptr() + off_k, eLk, edh, stride).noalias() = p.transpose() * go;
            dp.noalias() = go * vh.transpose();
            for (Eigen::Index i = 0; i < eLq; ++i) {
              const double dot = dp.row(i).dot(p.row(i));
              dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)) * inv;
            }
            Strided(gq.ptr() + off_q, eLq, edh, stride).noalias() = dp * kh;
            Strided(gk.ptr() + off_k, eLk, edh, stride).noalias() = dp.transpose() * qh;
          }
        }
        if (g.requires_grad(iq)) g.accumulate(iq, gq);
        if (g.requires_grad(ik)) g.accumulate(ik, gk);
        if (g.requires_grad(iv)) g.accumulate(iv, gv);
      });
}

/// Rows of x divided by max(||row||, eps), over the last axis. Rows whose
/// norm falls below eps are counted in *clamped when given.
inline Var l2_normalize(Var a, double eps, std::size_t* clamped = nullptr) {
  const Tensor& x = a.value();
  const std::size_t d = x.shape().back(), rows = x.size() / d;
  std::vector<double> norm(rows);
  std::vector<char> below(rows, 0);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += x[r * d + i] * x[r * d + i];
    const double n = std::sqrt(s);
    below[r] = n < eps;
    if (below[r] && clamped) ++*clamped;
    norm[r] = below[r] ? eps : n;
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = x[r * d + i] / norm[r];
  }
  const std::size_t ia = a.id();
  return a.graph().record(
      "l2_normalize", std::move(out), {ia},
      [ia, d, rows, norm, below](Graph& g, const Tensor& y, const Tensor& gy) {
        Tensor gx(y.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const double* yr = y.ptr() + r * d;
          const double* gr = gy.ptr() + r * d;
          double dot = 0.0;
          if (!below[r]) {
            for (std::size_t i = 0; i < d; ++i) dot += yr[i] * gr[i];
          }
          for (std::size_t i = 0; i < d; ++i) gx[r * d + i] = (gr[i] - dot * yr[i]) / norm[r];
        }
        g.accumulate(ia, gx);
      });
}

// ---------------------------------------------------------------------------
// Composites

/// Cosine similarity of two vectors of equal length. Zero-norm inputs are
/// rejected.
inline Var cosine_similarity(Var a, Var b) {
  if (a.value().size() != b.value().size()) {
    throw_shape("cosine_similarity", a.shape(), b.shape());
  }
  auto norm_sq = [](const Tensor& t) {
    double s = 0.0;
    for (double x : t.data()) s += x * x;
    return s;
  };
  if (norm_sq(a.value()) == 0.0 || norm_sq(b.value()) == 0.0) {
    throw Error("cosine_similarity: zero-norm input vector");
  }
  const Shape flat{a.value().size()};
  Var av = reshape(a, flat);
  Var bv = reshape(b, flat);
  Var dot = sum_all(av * bv);
  Var na = sqrt(sum_all(av * av));
  Var nb = sqrt(sum_all(bv * bv));
  return dot / (na * nb);
}

}  // namespace miranda
