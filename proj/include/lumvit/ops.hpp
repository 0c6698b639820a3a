#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "lumvit/tensor.hpp"

// Differentiable operations over Tensor<Real>. Every op computes its forward
// result, and, when a tape is active and any input is tracked, records a
// closure that accumulates input gradients from the output gradient.
//
// Reduction order is fixed (row-major sequential within each output element);
// OpenMP parallelism only ever splits over output elements, so results are
// identical for any thread count.

namespace lumvit::ops {

using std::int64_t;

namespace detail {

constexpr int64_t kParallelThreshold = 1 << 15;

template <class Real>
bool track(const Tensor<Real>& a) {
  return active_tape<Real>() != nullptr && a.requires_grad();
}

template <class Real>
void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. add/mul accept equal shapes or a scalar (1-element)
// second operand; no other broadcasting exists.
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> add(Tensor<Real> a, Tensor<Real> b) {
  const bool scalar_b = b.numel() == 1 && a.numel() != 1;
  if (!scalar_b) detail::check_same_shape(a, b, "add");
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const int64_t n = a.numel();
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + (scalar_b ? pb[0] : pb[i]);
  if (detail::track(a) || detail::track(b)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, b, out, n, scalar_b]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      if (a.requires_grad()) a.accumulate_grad(g, n);
      if (b.requires_grad()) {
        if (scalar_b) {
          Real s = 0;
          for (int64_t i = 0; i < n; ++i) s += g[i];
          b.accumulate_grad(&s, 1);
        } else {
          b.accumulate_grad(g, n);
        }
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mul(Tensor<Real> a, Tensor<Real> b) {
  const bool scalar_b = b.numel() == 1 && a.numel() != 1;
  if (!scalar_b) detail::check_same_shape(a, b, "mul");
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const int64_t n = a.numel();
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * (scalar_b ? pb[0] : pb[i]);
  if (detail::track(a) || detail::track(b)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, b, out, n, scalar_b]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      const Real* pa = a.data();
      const Real* pb = b.data();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (int64_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += g[i] * (scalar_b ? pb[0] : pb[i]);
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        if (scalar_b) {
          Real s = 0;
          for (int64_t i = 0; i < n; ++i) s += g[i] * pa[i];
          gb[0] += s;
        } else {
          for (int64_t i = 0; i < n; ++i) gb[static_cast<std::size_t>(i)] += g[i] * pa[i];
        }
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> scale(Tensor<Real> a, double c) {
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const int64_t n = a.numel();
  const Real* pa = a.data();
  Real* po = out.data();
  const Real rc = static_cast<Real>(c);
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * rc;
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out, n, rc]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      auto& ga = a.grad();
      for (int64_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += g[i] * rc;
    });
  }
  return out;
}

template <class Real>
Tensor<Real> add_const(Tensor<Real> a, double c) {
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const int64_t n = a.numel();
  const Real* pa = a.data();
  Real* po = out.data();
  const Real rc = static_cast<Real>(c);
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + rc;
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out, n]() mutable {
      if (!out.has_grad()) return;
      a.accumulate_grad(out.grad_view().data(), n);
    });
  }
  return out;
}

template <class Real>
Tensor<Real> neg(Tensor<Real> a) {
  return scale(a, -1.0);
}

template <class Real>
Tensor<Real> sub(Tensor<Real> a, Tensor<Real> b) {
  return add(a, neg(b));
}

template <class Real>
Tensor<Real> relu(Tensor<Real> a) {
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const int64_t n = a.numel();
  const Real* pa = a.data();
  Real* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > Real(0) ? pa[i] : Real(0);
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out, n]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      const Real* pa = a.data();
      auto& ga = a.grad();
      for (int64_t i = 0; i < n; ++i)
        if (pa[i] > Real(0)) ga[static_cast<std::size_t>(i)] += g[i];
    });
  }
  return out;
}

// Exact (erf-based) GELU.
template <class Real>
Tensor<Real> gelu(Tensor<Real> a) {
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const int64_t n = a.numel();
  const Real* pa = a.data();
  Real* po = out.data();
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (int64_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(pa[i]);
    po[i] = static_cast<Real>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
  }
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out, n]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      const Real* pa = a.data();
      auto& ga = a.grad();
      constexpr double inv_sqrt2 = 0.7071067811865475244;
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      for (int64_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(pa[i]);
        const double d = 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                         x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        ga[static_cast<std::size_t>(i)] += g[i] * static_cast<Real>(d);
      }
    });
  }
  return out;
}

// log(max(x, floor)); gradient is 1/x above the floor, 0 below it.
template <class Real>
Tensor<Real> log_clamped(Tensor<Real> a, double floor = 1e-20) {
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const int64_t n = a.numel();
  const Real* pa = a.data();
  Real* po = out.data();
  for (int64_t i = 0; i < n; ++i)
    po[i] = static_cast<Real>(std::log(std::max(static_cast<double>(pa[i]), floor)));
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out, n, floor]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      const Real* pa = a.data();
      auto& ga = a.grad();
      for (int64_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(pa[i]);
        if (x > floor) ga[static_cast<std::size_t>(i)] += g[i] / static_cast<Real>(x);
      }
    });
  }
  return out;
}

// Copy with the tape connection severed.
template <class Real>
Tensor<Real> detach(Tensor<Real> a) {
  return Tensor<Real>::from(a.shape(), a.values(), false);
}

// Forward takes the hard values; gradient passes to the soft relaxation
// untouched (hard Gumbel-Softmax estimator).
template <class Real>
Tensor<Real> straight_through(Tensor<Real> soft, Tensor<Real> hard) {
  detail::check_same_shape(soft, hard, "straight_through");
  Tensor<Real> out = Tensor<Real>::from(soft.shape(), hard.values());
  if (detail::track(soft)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([soft, out]() mutable {
      if (!out.has_grad()) return;
      soft.accumulate_grad(out.grad_view().data(), out.numel());
    });
  }
  return out;
}

// step(w) = 1 for w >= 0, else 0. Straight-through backward with hard-tanh
// clipping: gradient passes where |w| <= 1, zeroed outside.
template <class Real>
Tensor<Real> step_ste(Tensor<Real> w) {
  Tensor<Real> out = Tensor<Real>::zeros(w.shape());
  const int64_t n = w.numel();
  const Real* pw = w.data();
  Real* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = pw[i] >= Real(0) ? Real(1) : Real(0);
  if (detail::track(w)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([w, out, n]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      const Real* pw = w.data();
      auto& gw = w.grad();
      for (int64_t i = 0; i < n; ++i)
        if (std::abs(static_cast<double>(pw[i])) <= 1.0) gw[static_cast<std::size_t>(i)] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops (all copying; backward maps gradients through the inverse index
// map).
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> reshape(Tensor<Real> a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
  Tensor<Real> out = Tensor<Real>::from(std::move(new_shape), a.values());
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out]() mutable {
      if (!out.has_grad()) return;
      a.accumulate_grad(out.grad_view().data(), out.numel());
    });
  }
  return out;
}

namespace detail {

inline std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

// dst[i] = src[map(i)] where map permutes the index digits.
template <class Real>
void permute_copy(const Real* src, Real* dst, const Shape& in_shape,
                  const std::vector<int>& axes, bool add_into) {
  const int r = static_cast<int>(in_shape.size());
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = in_shape[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
  const auto in_strides = strides_of(in_shape);
  const int64_t n = shape_numel(in_shape);
  std::vector<int64_t> out_idx(static_cast<std::size_t>(r), 0);
  for (int64_t o = 0; o < n; ++o) {
    int64_t src_off = 0;
    for (int i = 0; i < r; ++i)
      src_off += out_idx[static_cast<std::size_t>(i)] * in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    if (add_into)
      dst[src_off] += src[o];
    else
      dst[o] = src[src_off];
    for (int i = r - 1; i >= 0; --i) {
      if (++out_idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
      out_idx[static_cast<std::size_t>(i)] = 0;
    }
  }
}

}  // namespace detail

template <class Real>
Tensor<Real> permute(Tensor<Real> a, const std::vector<int>& axes) {
  const int r = a.rank();
  if (static_cast<int>(axes.size()) != r) throw DimensionError("permute: axes rank mismatch");
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = a.dim(axes[static_cast<std::size_t>(i)]);
  Tensor<Real> out = Tensor<Real>::zeros(out_shape);
  detail::permute_copy(a.data(), out.data(), a.shape(), axes, /*add_into=*/false);
  if (detail::track(a)) {
    out.set_requires_grad(true);
    Shape in_shape = a.shape();
    active_tape<Real>()->record([a, out, axes, in_shape]() mutable {
      if (!out.has_grad()) return;
      a.ensure_grad();
      // out.grad laid out in out order; scatter back through the same map.
      detail::permute_copy(out.grad_view().data(), a.grad().data(), in_shape, axes,
                           /*add_into=*/true);
    });
  }
  return out;
}

template <class Real>
Tensor<Real> transpose2d(Tensor<Real> a) {
  if (a.rank() != 2) throw DimensionError("transpose2d: need rank 2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

// Slice along axis 0.
template <class Real>
Tensor<Real> slice_rows(Tensor<Real> a, int64_t start, int64_t len) {
  if (a.rank() < 1 || start < 0 || len <= 0 || start + len > a.dim(0))
    throw DimensionError("slice_rows: bad range");
  const int64_t row = a.numel() / a.dim(0);
  Shape out_shape = a.shape();
  out_shape[0] = len;
  Tensor<Real> out = Tensor<Real>::zeros(out_shape);
  std::copy_n(a.data() + start * row, len * row, out.data());
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out, start, len, row]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      auto& ga = a.grad();
      for (int64_t i = 0; i < len * row; ++i) ga[static_cast<std::size_t>(start * row + i)] += g[i];
    });
  }
  return out;
}

// Slice along the last axis (tensor viewed as rows of its last extent).
template <class Real>
Tensor<Real> slice_cols(Tensor<Real> a, int64_t start, int64_t len) {
  if (a.rank() < 1) throw DimensionError("slice_cols: rank 0");
  const int64_t c = a.dim(a.rank() - 1);
  if (start < 0 || len <= 0 || start + len > c) throw DimensionError("slice_cols: bad range");
  const int64_t rows = a.numel() / c;
  Shape out_shape = a.shape();
  out_shape.back() = len;
  Tensor<Real> out = Tensor<Real>::zeros(out_shape);
  const Real* pa = a.data();
  Real* po = out.data();
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(pa + r * c + start, len, po + r * len);
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out, rows, c, start, len]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      auto& ga = a.grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < len; ++j) ga[static_cast<std::size_t>(r * c + start + j)] += g[r * len + j];
    });
  }
  return out;
}

// x[B,T,C] -> x[:, t, :] as [B,C].
template <class Real>
Tensor<Real> select_axis1(Tensor<Real> a, int64_t t) {
  if (a.rank() != 3) throw DimensionError("select_axis1: need rank 3");
  const int64_t B = a.dim(0), T = a.dim(1), C = a.dim(2);
  if (t < 0 || t >= T) throw DimensionError("select_axis1: index out of range");
  Tensor<Real> out = Tensor<Real>::zeros({B, C});
  const Real* pa = a.data();
  Real* po = out.data();
  for (int64_t b = 0; b < B; ++b) std::copy_n(pa + (b * T + t) * C, C, po + b * C);
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out, B, T, C, t]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      auto& ga = a.grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) ga[static_cast<std::size_t>((b * T + t) * C + c)] += g[b * C + c];
    });
  }
  return out;
}

// Prepend a shared token to every sequence: [B,T,C] + tok[C] -> [B,T+1,C].
template <class Real>
Tensor<Real> prepend_token(Tensor<Real> x, Tensor<Real> tok) {
  if (x.rank() != 3) throw DimensionError("prepend_token: need rank 3 input");
  const int64_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  if (tok.numel() != C) throw DimensionError("prepend_token: token length mismatch");
  Tensor<Real> out = Tensor<Real>::zeros({B, T + 1, C});
  const Real* px = x.data();
  const Real* pt = tok.data();
  Real* po = out.data();
  for (int64_t b = 0; b < B; ++b) {
    std::copy_n(pt, C, po + b * (T + 1) * C);
    std::copy_n(px + b * T * C, T * C, po + b * (T + 1) * C + C);
  }
  if (detail::track(x) || detail::track(tok)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([x, tok, out, B, T, C]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t i = 0; i < T * C; ++i)
            gx[static_cast<std::size_t>(b * T * C + i)] += g[b * (T + 1) * C + C + i];
      }
      if (tok.requires_grad()) {
        auto& gt = tok.grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c) gt[static_cast<std::size_t>(c)] += g[b * (T + 1) * C + c];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row-broadcast ops: x viewed as rows of length b.numel().
// ---------------------------------------------------------------------------

namespace detail {
template <class Real>
std::pair<int64_t, int64_t> rows_cols(const Tensor<Real>& x, const Tensor<Real>& b, const char* op) {
  const int64_t c = b.numel();
  if (c == 0 || x.numel() % c != 0 || x.dim(x.rank() - 1) != c)
    throw DimensionError(std::string(op) + ": last axis of " + shape_str(x.shape()) +
                         " must equal bias length " + std::to_string(c));
  return {x.numel() / c, c};
}
}  // namespace detail

template <class Real>
Tensor<Real> add_bias(Tensor<Real> x, Tensor<Real> b) {
  auto [rows, c] = detail::rows_cols(x, b, "add_bias");
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const Real* px = x.data();
  const Real* pb = b.data();
  Real* po = out.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) po[r * c + j] = px[r * c + j] + pb[j];
  if (detail::track(x) || detail::track(b)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([x, b, out, rows, c]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      if (x.requires_grad()) x.accumulate_grad(g, rows * c);
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (int64_t j = 0; j < c; ++j) {
          Real s = 0;
          for (int64_t r = 0; r < rows; ++r) s += g[r * c + j];
          gb[static_cast<std::size_t>(j)] += s;
        }
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mul_bias(Tensor<Real> x, Tensor<Real> b) {
  auto [rows, c] = detail::rows_cols(x, b, "mul_bias");
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const Real* px = x.data();
  const Real* pb = b.data();
  Real* po = out.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) po[r * c + j] = px[r * c + j] * pb[j];
  if (detail::track(x) || detail::track(b)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([x, b, out, rows, c]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      const Real* px = x.data();
      const Real* pb = b.data();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < c; ++j) gx[static_cast<std::size_t>(r * c + j)] += g[r * c + j] * pb[j];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (int64_t j = 0; j < c; ++j) {
          Real s = 0;
          for (int64_t r = 0; r < rows; ++r) s += g[r * c + j] * px[r * c + j];
          gb[static_cast<std::size_t>(j)] += s;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products.
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] (+)= A[m,k] * B[k,n]; each output row is owned by one thread and
// accumulated in ascending k, so the reduction order is fixed.
template <class Real>
void gemm_accum(const Real* a, const Real* b, Real* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (int64_t i = 0; i < m; ++i) {
    Real* crow = c + i * n;
    const Real* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const Real av = arow[kk];
      const Real* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += G[m,n] * B[k,n]^T
template <class Real>
void gemm_grad_a(const Real* g, const Real* b, Real* da, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (int64_t i = 0; i < m; ++i) {
    const Real* grow = g + i * n;
    Real* darow = da + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const Real* brow = b + kk * n;
      Real s = 0;
      for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      darow[kk] += s;
    }
  }
}

// dB[k,n] += A[m,k]^T * G[m,n]
template <class Real>
void gemm_grad_b(const Real* a, const Real* g, Real* db, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (int64_t kk = 0; kk < k; ++kk) {
    Real* dbrow = db + kk * n;
    for (int64_t i = 0; i < m; ++i) {
      const Real av = a[i * k + kk];
      const Real* grow = g + i * n;
      for (int64_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
    }
  }
}

}  // namespace detail

template <class Real>
Tensor<Real> matmul(Tensor<Real> a, Tensor<Real> b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: need rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimensionError("matmul: inner extents disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor<Real> out = Tensor<Real>::zeros({m, n});
  detail::gemm_accum(a.data(), b.data(), out.data(), m, k, n);
  if (detail::track(a) || detail::track(b)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      if (a.requires_grad()) {
        a.ensure_grad();
        detail::gemm_grad_a(g, b.data(), a.grad().data(), m, k, n);
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        detail::gemm_grad_b(a.data(), g, b.grad().data(), m, k, n);
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> bmm(Tensor<Real> a, Tensor<Real> b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const int64_t nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor<Real> out = Tensor<Real>::zeros({nb, m, n});
#pragma omp parallel for schedule(static) if (nb * m * k * n > detail::kParallelThreshold)
  for (int64_t bi = 0; bi < nb; ++bi) {
    const Real* pa = a.data() + bi * m * k;
    const Real* pb = b.data() + bi * k * n;
    Real* po = out.data() + bi * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t kk = 0; kk < k; ++kk) {
        const Real av = pa[i * k + kk];
        for (int64_t j = 0; j < n; ++j) po[i * n + j] += av * pb[kk * n + j];
      }
  }
  if (detail::track(a) || detail::track(b)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, b, out, nb, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      if (a.requires_grad()) {
        a.ensure_grad();
        Real* da = a.grad().data();
#pragma omp parallel for schedule(static) if (nb * m * k * n > detail::kParallelThreshold)
        for (int64_t bi = 0; bi < nb; ++bi)
          detail::gemm_grad_a(g + bi * m * n, b.data() + bi * k * n, da + bi * m * k, m, k, n);
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        Real* db = b.grad().data();
#pragma omp parallel for schedule(static) if (nb * m * k * n > detail::kParallelThreshold)
        for (int64_t bi = 0; bi < nb; ++bi)
          detail::gemm_grad_b(a.data() + bi * m * k, g + bi * m * n, db + bi * k * n, m, k, n);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and normalizations.
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> sum_all(Tensor<Real> a) {
  Real s = 0;
  const Real* pa = a.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) s += pa[i];
  Tensor<Real> out = Tensor<Real>::scalar(s);
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out, n]() mutable {
      if (!out.has_grad()) return;
      const Real g = out.grad_view()[0];
      auto& ga = a.grad();
      for (int64_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += g;
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mean_all(Tensor<Real> a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// Row sums: [..., M] -> [...] (drops the last axis).
template <class Real>
Tensor<Real> sum_last(Tensor<Real> a) {
  if (a.rank() < 1) throw DimensionError("sum_last: rank 0");
  const int64_t m = a.dim(a.rank() - 1);
  const int64_t rows = a.numel() / m;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor<Real> out = Tensor<Real>::zeros(out_shape);
  const Real* pa = a.data();
  Real* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    Real s = 0;
    for (int64_t j = 0; j < m; ++j) s += pa[r * m + j];
    po[r] = s;
  }
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out, rows, m]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      auto& ga = a.grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < m; ++j) ga[static_cast<std::size_t>(r * m + j)] += g[r];
    });
  }
  return out;
}

// Numerically stable softmax along `axis`.
template <class Real>
Tensor<Real> softmax(Tensor<Real> a, int axis) {
  const int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("softmax: bad axis");
  const int64_t an = a.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= a.dim(i);
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const Real* pa = a.data();
  Real* po = out.data();
#pragma omp parallel for schedule(static) collapse(2) if (outer * inner * an > detail::kParallelThreshold)
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * an * inner + in;
      Real mx = pa[base];
      for (int64_t j = 1; j < an; ++j) mx = std::max(mx, pa[base + j * inner]);
      Real denom = 0;
      for (int64_t j = 0; j < an; ++j) {
        const Real e = std::exp(pa[base + j * inner] - mx);
        po[base + j * inner] = e;
        denom += e;
      }
      const Real inv = Real(1) / denom;
      for (int64_t j = 0; j < an; ++j) po[base + j * inner] *= inv;
    }
  if (detail::track(a)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([a, out, outer, inner, an]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      const Real* y = out.data();
      a.ensure_grad();
      Real* ga = a.grad().data();
#pragma omp parallel for schedule(static) collapse(2) if (outer * inner * an > detail::kParallelThreshold)
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * an * inner + in;
          Real dot = 0;
          for (int64_t j = 0; j < an; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (int64_t j = 0; j < an; ++j)
            ga[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
        }
    });
  }
  return out;
}

// Layer normalization over the last axis (population variance), then affine.
template <class Real>
Tensor<Real> layernorm(Tensor<Real> x, Tensor<Real> gain, Tensor<Real> bias,
                       double eps = 1e-6) {
  if (eps <= 0) throw ValidationError("layernorm: eps must be positive");
  const int64_t c = x.dim(x.rank() - 1);
  if (gain.numel() != c || bias.numel() != c)
    throw DimensionError("layernorm: gain/bias length must match last axis");
  const int64_t rows = x.numel() / c;
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  // xhat retained for backward.
  auto xhat = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(rows * c));
  auto inv_sigma = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(rows));
  const Real* px = x.data();
  const Real* pg = gain.data();
  const Real* pb = bias.data();
  Real* po = out.data();
#pragma omp parallel for schedule(static) if (rows * c > detail::kParallelThreshold)
  for (int64_t r = 0; r < rows; ++r) {
    const Real* row = px + r * c;
    Real mean = 0;
    for (int64_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<Real>(c);
    Real var = 0;
    for (int64_t j = 0; j < c; ++j) {
      const Real d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<Real>(c);
    const Real inv = Real(1) / std::sqrt(var + static_cast<Real>(eps));
    (*inv_sigma)[static_cast<std::size_t>(r)] = inv;
    for (int64_t j = 0; j < c; ++j) {
      const Real xh = (row[j] - mean) * inv;
      (*xhat)[static_cast<std::size_t>(r * c + j)] = xh;
      po[r * c + j] = xh * pg[j] + pb[j];
    }
  }
  if (detail::track(x) || detail::track(gain) || detail::track(bias)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([x, gain, bias, out, xhat, inv_sigma, rows, c]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      const Real* pg = gain.data();
      if (gain.requires_grad()) {
        auto& gg = gain.grad();
        for (int64_t j = 0; j < c; ++j) {
          Real s = 0;
          for (int64_t r = 0; r < rows; ++r) s += g[r * c + j] * (*xhat)[static_cast<std::size_t>(r * c + j)];
          gg[static_cast<std::size_t>(j)] += s;
        }
      }
      if (bias.requires_grad()) {
        auto& gb = bias.grad();
        for (int64_t j = 0; j < c; ++j) {
          Real s = 0;
          for (int64_t r = 0; r < rows; ++r) s += g[r * c + j];
          gb[static_cast<std::size_t>(j)] += s;
        }
      }
      if (x.requires_grad()) {
        x.ensure_grad();
        Real* gx = x.grad().data();
#pragma omp parallel for schedule(static) if (rows * c > detail::kParallelThreshold)
        for (int64_t r = 0; r < rows; ++r) {
          Real mean_gy = 0, mean_gyx = 0;
          for (int64_t j = 0; j < c; ++j) {
            const Real gy = g[r * c + j] * pg[j];
            mean_gy += gy;
            mean_gyx += gy * (*xhat)[static_cast<std::size_t>(r * c + j)];
          }
          mean_gy /= static_cast<Real>(c);
          mean_gyx /= static_cast<Real>(c);
          const Real inv = (*inv_sigma)[static_cast<std::size_t>(r)];
          for (int64_t j = 0; j < c; ++j) {
            const Real gy = g[r * c + j] * pg[j];
            const Real xh = (*xhat)[static_cast<std::size_t>(r * c + j)];
            gx[r * c + j] += (gy - mean_gy - xh * mean_gyx) * inv;
          }
        }
      }
    });
  }
  return out;
}

// Softmax cross-entropy against soft label rows, averaged over the batch.
// Targets carry no gradient.
template <class Real>
Tensor<Real> cross_entropy(Tensor<Real> logits, Tensor<Real> targets) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [B,K]");
  detail::check_same_shape(logits, targets, "cross_entropy");
  const int64_t B = logits.dim(0), K = logits.dim(1);
  const Real* pl = logits.data();
  const Real* pt = targets.data();
  for (int64_t b = 0; b < B; ++b) {
    Real s = 0;
    for (int64_t k = 0; k < K; ++k) s += pt[b * K + k];
    if (std::abs(static_cast<double>(s) - 1.0) > 1e-4)
      throw ValidationError("cross_entropy: target row " + std::to_string(b) +
                            " sums to " + std::to_string(static_cast<double>(s)));
  }
  // Retain softmax probabilities for backward.
  auto probs = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(B * K));
  double loss = 0;
  for (int64_t b = 0; b < B; ++b) {
    const Real* row = pl + b * K;
    Real mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double denom = 0;
    for (int64_t k = 0; k < K; ++k) denom += std::exp(static_cast<double>(row[k] - mx));
    const double log_denom = std::log(denom);
    for (int64_t k = 0; k < K; ++k) {
      const double logp = static_cast<double>(row[k] - mx) - log_denom;
      (*probs)[static_cast<std::size_t>(b * K + k)] = static_cast<Real>(std::exp(logp));
      loss -= static_cast<double>(pt[b * K + k]) * logp;
    }
  }
  Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(loss / static_cast<double>(B)));
  if (detail::track(logits)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([logits, targets, out, probs, B, K]() mutable {
      if (!out.has_grad()) return;
      const Real g = out.grad_view()[0];
      const Real* pt = targets.data();
      auto& gl = logits.grad();
      const Real invb = Real(1) / static_cast<Real>(B);
      for (int64_t i = 0; i < B * K; ++i)
        gl[static_cast<std::size_t>(i)] += g * invb * ((*probs)[static_cast<std::size_t>(i)] - pt[i]);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch-embedding building blocks.
// ---------------------------------------------------------------------------

// Sum z-by-z blocks of each K-by-K kernel column: [K*K, C] -> [(K/z)^2, C].
// Used to push a nearest-neighbor input zoom into the kernels instead of the
// data (embedding a z-zoomed patch equals embedding the original patch with
// block-summed kernels).
template <class Real>
Tensor<Real> blocksum_kernels(Tensor<Real> theta, int K, int z) {
  if (z <= 0 || K % z != 0) throw DimensionError("blocksum_kernels: zoom must divide K");
  if (theta.rank() != 2 || theta.dim(0) != static_cast<int64_t>(K) * K)
    throw DimensionError("blocksum_kernels: expected [K*K, C]");
  const int64_t C = theta.dim(1);
  const int kr = K / z;
  Tensor<Real> out = Tensor<Real>::zeros({static_cast<int64_t>(kr) * kr, C});
  const Real* pt = theta.data();
  Real* po = out.data();
  for (int u = 0; u < kr; ++u)
    for (int v = 0; v < kr; ++v) {
      Real* orow = po + (static_cast<int64_t>(u) * kr + v) * C;
      for (int a = u * z; a < (u + 1) * z; ++a)
        for (int b = v * z; b < (v + 1) * z; ++b) {
          const Real* trow = pt + (static_cast<int64_t>(a) * K + b) * C;
          for (int64_t j = 0; j < C; ++j) orow[j] += trow[j];
        }
    }
  if (detail::track(theta)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([theta, out, K, z, C, kr]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      auto& gt = theta.grad();
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) {
          const Real* grow = g + (static_cast<int64_t>(a / z) * kr + b / z) * C;
          for (int64_t j = 0; j < C; ++j)
            gt[static_cast<std::size_t>((static_cast<int64_t>(a) * K + b) * C + j)] += grow[j];
        }
    });
  }
  return out;
}

// Assemble the effective dense embedding matrix from spatial kernels and
// spectral weights: E[(p*Ch + ch), j] = theta[p, j] * V[j, ch].
// A patch row (pixel-major, channel-minor) times E gives one token.
template <class Real>
Tensor<Real> outer_embed(Tensor<Real> theta, Tensor<Real> V) {
  if (theta.rank() != 2 || V.rank() != 2 || theta.dim(1) != V.dim(0))
    throw DimensionError("outer_embed: incompatible shapes " + shape_str(theta.shape()) +
                         " and " + shape_str(V.shape()));
  const int64_t P = theta.dim(0), C = theta.dim(1), Ch = V.dim(1);
  Tensor<Real> out = Tensor<Real>::zeros({P * Ch, C});
  const Real* pt = theta.data();
  const Real* pv = V.data();
  Real* po = out.data();
#pragma omp parallel for schedule(static) if (P * Ch * C > detail::kParallelThreshold)
  for (int64_t p = 0; p < P; ++p)
    for (int64_t ch = 0; ch < Ch; ++ch) {
      Real* orow = po + (p * Ch + ch) * C;
      const Real* trow = pt + p * C;
      for (int64_t j = 0; j < C; ++j) orow[j] = trow[j] * pv[j * Ch + ch];
    }
  if (detail::track(theta) || detail::track(V)) {
    out.set_requires_grad(true);
    active_tape<Real>()->record([theta, V, out, P, C, Ch]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad_view().data();
      const Real* pt = theta.data();
      const Real* pv = V.data();
      if (theta.requires_grad()) {
        theta.ensure_grad();
        Real* gt = theta.grad().data();
#pragma omp parallel for schedule(static) if (P * Ch * C > detail::kParallelThreshold)
        for (int64_t p = 0; p < P; ++p)
          for (int64_t ch = 0; ch < Ch; ++ch) {
            const Real* grow = g + (p * Ch + ch) * C;
            Real* trow = gt + p * C;
            for (int64_t j = 0; j < C; ++j) trow[j] += grow[j] * pv[j * Ch + ch];
          }
      }
      if (V.requires_grad()) {
        V.ensure_grad();
        Real* gv = V.grad().data();
#pragma omp parallel for schedule(static) if (P * Ch * C > detail::kParallelThreshold)
        for (int64_t j = 0; j < C; ++j)
          for (int64_t p = 0; p < P; ++p) {
            const Real tv = pt[p * C + j];
            for (int64_t ch = 0; ch < Ch; ++ch) gv[j * Ch + ch] += g[(p * Ch + ch) * C + j] * tv;
          }
      }
    });
  }
  return out;
}

}  // namespace lumvit::ops
