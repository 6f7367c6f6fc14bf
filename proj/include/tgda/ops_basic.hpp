#pragma once

#include <atomic>
#include <cmath>
#include <cstring>

#include "tgda/tape.hpp"
#include "tgda/tensor.hpp"

namespace tgda::ops {

// Opt-in NaN/Inf screening after every forward op (config: debug.check_finite).
inline std::atomic<bool>& finite_checks() {
  static std::atomic<bool> enabled{false};
  return enabled;
}

template <typename T>
void debug_validate(const Tensor<T>& t, const char* op) {
  if (!finite_checks().load(std::memory_order_relaxed)) return;
  if (!t.all_finite()) fail(ErrorKind::kNumeric, std::string(op) + ": non-finite value in output");
}

constexpr int64_t kParallelCutoff = 1 << 14;

namespace detail {

template <typename T, typename F>
void for_each(int64_t n, F&& f) {
  if (n >= kParallelCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) f(i);
  } else {
    for (int64_t i = 0; i < n; ++i) f(i);
  }
}

template <typename T>
bool any_grad(const Tensor<T>& a) {
  return a.requires_grad();
}
template <typename T, typename... R>
bool any_grad(const Tensor<T>& a, const R&... rest) {
  return a.requires_grad() || any_grad(rest...);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

template <typename T, typename FwdF, typename BwdF>
Tensor<T> binary_elementwise(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, FwdF fwd,
                             BwdF bwd, const char* name) {
  check(a.same_shape(b), ErrorKind::kDimension,
        std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  detail::for_each<T>(a.numel(), [&](int64_t i) { po[i] = fwd(pa[i], pb[i]); });
  debug_validate(out, name);
  if (detail::any_grad(a, b)) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> ga = a, gb = b, go = out;
      tape->record([ga, gb, go, bwd]() mutable {
        const T* dy = go.grad();
        const T* xa = ga.data();
        const T* xb = gb.data();
        T* da = ga.requires_grad() ? ga.grad() : nullptr;
        T* db = gb.requires_grad() ? gb.grad() : nullptr;
        detail::for_each<T>(go.numel(), [&](int64_t i) { bwd(i, dy[i], xa[i], xb[i], da, db); });
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise(
      tape, a, b, [](T x, T y) { return x + y; },
      [](int64_t i, T dy, T, T, T* da, T* db) {
        if (da) da[i] += dy;
        if (db) db[i] += dy;
      },
      "add");
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise(
      tape, a, b, [](T x, T y) { return x - y; },
      [](int64_t i, T dy, T, T, T* da, T* db) {
        if (da) da[i] += dy;
        if (db) db[i] -= dy;
      },
      "sub");
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise(
      tape, a, b, [](T x, T y) { return x * y; },
      [](int64_t i, T dy, T x, T y, T* da, T* db) {
        if (da) da[i] += dy * y;
        if (db) db[i] += dy * x;
      },
      "mul");
}

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

template <typename T, typename FwdF, typename BwdF>
Tensor<T> unary_elementwise(Tape<T>* tape, const Tensor<T>& x, FwdF fwd, BwdF bwd,
                            const char* name) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  detail::for_each<T>(x.numel(), [&](int64_t i) { po[i] = fwd(px[i]); });
  debug_validate(out, name);
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      tape->record([gx, go, bwd]() mutable {
        const T* dy = go.grad();
        const T* xv = gx.data();
        const T* yv = go.data();
        T* dx = gx.grad();
        detail::for_each<T>(go.numel(), [&](int64_t i) { dx[i] += dy[i] * bwd(xv[i], yv[i]); });
      });
    }
  }
  return out;
}

// y = scale * x + shift
template <typename T>
Tensor<T> affine_scalar(Tape<T>* tape, const Tensor<T>& x, T scale, T shift = T(0)) {
  return unary_elementwise(
      tape, x, [scale, shift](T v) { return scale * v + shift; },
      [scale](T, T) { return scale; }, "affine_scalar");
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  return unary_elementwise(
      tape, x, [](T v) { return v > T(0) ? v : T(0); },
      [](T xv, T) { return xv > T(0) ? T(1) : T(0); }, "relu");
}

template <typename T>
Tensor<T> gelu(Tape<T>* tape, const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.7071067811865475244);
  constexpr T inv_sqrt2pi = T(0.3989422804014326779);
  return unary_elementwise(
      tape, x, [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [=](T xv, T) {
        T cdf = T(0.5) * (T(1) + std::erf(xv * inv_sqrt2));
        return cdf + xv * inv_sqrt2pi * std::exp(T(-0.5) * xv * xv);
      },
      "gelu");
}

template <typename T>
Tensor<T> log_e(Tape<T>* tape, const Tensor<T>& x) {
  return unary_elementwise(
      tape, x, [](T v) { return std::log(v); }, [](T xv, T) { return T(1) / xv; }, "log");
}

template <typename T>
Tensor<T> sqrt_op(Tape<T>* tape, const Tensor<T>& x) {
  return unary_elementwise(
      tape, x, [](T v) { return std::sqrt(v); },
      [](T, T yv) { return T(0.5) / yv; }, "sqrt");
}

// sign(v) * sqrt(|v|); the derivative is clamped near zero.
template <typename T>
Tensor<T> signed_sqrt(Tape<T>* tape, const Tensor<T>& x) {
  constexpr T eps = T(1e-12);
  return unary_elementwise(
      tape, x, [](T v) { return v >= T(0) ? std::sqrt(v) : -std::sqrt(-v); },
      [=](T xv, T) {
        T a = std::abs(xv);
        return T(0.5) / std::sqrt(a > eps ? a : eps);
      },
      "signed_sqrt");
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(Shape{1});
  const T* px = x.data();
  T acc = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
  out.data()[0] = acc;
  debug_validate(out, "sum");
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      tape->record([gx, go]() mutable {
        const T dy = go.grad()[0];
        T* dx = gx.grad();
        detail::for_each<T>(gx.numel(), [&](int64_t i) { dx[i] += dy; });
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> s = sum_all(tape, x);
  return affine_scalar(tape, s, T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// softmax family (last axis)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_temperature(Tape<T>* tape, const Tensor<T>& logits, T tau) {
  check(tau > T(0), ErrorKind::kParameter, "softmax_temperature: tau must be positive");
  check(logits.ndim() >= 1, ErrorKind::kDimension, "softmax_temperature: rank-0 input");
  const int64_t c = logits.shape().back();
  const int64_t rows = logits.numel() / c;
  Tensor<T> out(logits.shape());
  const T* px = logits.data();
  T* po = out.data();
  detail::for_each<T>(rows, [&](int64_t r) {
    const T* in = px + r * c;
    T* y = po + r * c;
    T mx = in[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    T denom = T(0);
    for (int64_t j = 0; j < c; ++j) {
      y[j] = std::exp((in[j] - mx) / tau);
      denom += y[j];
    }
    const T inv = T(1) / denom;
    for (int64_t j = 0; j < c; ++j) y[j] *= inv;
  });
  debug_validate(out, "softmax_temperature");
  if (logits.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = logits, go = out;
      tape->record([gx, go, tau, rows, c]() mutable {
        const T* dy = go.grad();
        const T* y = go.data();
        T* dx = gx.grad();
        detail::for_each<T>(rows, [&](int64_t r) {
          const T* yr = y + r * c;
          const T* dyr = dy + r * c;
          T* dxr = dx + r * c;
          T dot = T(0);
          for (int64_t j = 0; j < c; ++j) dot += dyr[j] * yr[j];
          for (int64_t j = 0; j < c; ++j) dxr[j] += yr[j] * (dyr[j] - dot) / tau;
        });
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax(Tape<T>* tape, const Tensor<T>& logits) {
  check(logits.ndim() >= 1, ErrorKind::kDimension, "log_softmax: rank-0 input");
  const int64_t c = logits.shape().back();
  const int64_t rows = logits.numel() / c;
  Tensor<T> out(logits.shape());
  const T* px = logits.data();
  T* po = out.data();
  detail::for_each<T>(rows, [&](int64_t r) {
    const T* in = px + r * c;
    T* y = po + r * c;
    T mx = in[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    T denom = T(0);
    for (int64_t j = 0; j < c; ++j) denom += std::exp(in[j] - mx);
    const T lse = mx + std::log(denom);
    for (int64_t j = 0; j < c; ++j) y[j] = in[j] - lse;
  });
  debug_validate(out, "log_softmax");
  if (logits.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = logits, go = out;
      tape->record([gx, go, rows, c]() mutable {
        const T* dy = go.grad();
        const T* y = go.data();
        T* dx = gx.grad();
        detail::for_each<T>(rows, [&](int64_t r) {
          const T* yr = y + r * c;
          const T* dyr = dy + r * c;
          T* dxr = dx + r * c;
          T s = T(0);
          for (int64_t j = 0; j < c; ++j) s += dyr[j];
          for (int64_t j = 0; j < c; ++j) dxr[j] += dyr[j] - std::exp(yr[j]) * s;
        });
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& x, Shape new_shape) {
  check(numel_of(new_shape) == x.numel(), ErrorKind::kDimension,
        "reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) + " changes element count");
  Tensor<T> out(std::move(new_shape));
  std::memcpy(out.data(), x.data(), sizeof(T) * static_cast<size_t>(x.numel()));
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      tape->record([gx, go]() mutable {
        const T* dy = go.grad();
        T* dx = gx.grad();
        detail::for_each<T>(gx.numel(), [&](int64_t i) { dx[i] += dy[i]; });
      });
    }
  }
  return out;
}

namespace detail {
inline std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// out[idx] = in[permuted idx]; mapping from output flat index to input flat index.
template <typename T>
void permute_copy(const T* in, T* out, const Shape& out_shape,
                  const std::vector<int64_t>& in_stride_for_out_axis) {
  const int nd = static_cast<int>(out_shape.size());
  const int64_t n = numel_of(out_shape);
  const auto out_strides = strides_of(out_shape);
  for_each<T>(n, [&](int64_t o) {
    int64_t rem = o;
    int64_t src = 0;
    for (int d = 0; d < nd; ++d) {
      const int64_t q = rem / out_strides[static_cast<size_t>(d)];
      rem -= q * out_strides[static_cast<size_t>(d)];
      src += q * in_stride_for_out_axis[static_cast<size_t>(d)];
    }
    out[o] = in[src];
  });
}
}  // namespace detail

template <typename T>
Tensor<T> permute(Tape<T>* tape, const Tensor<T>& x, const std::vector<int>& perm) {
  check(static_cast<int>(perm.size()) == x.ndim(), ErrorKind::kDimension,
        "permute: perm rank mismatch");
  Shape out_shape(perm.size());
  auto in_strides = detail::strides_of(x.shape());
  std::vector<int64_t> gather(perm.size());
  std::vector<bool> seen(perm.size(), false);
  for (size_t d = 0; d < perm.size(); ++d) {
    const int p = perm[d];
    check(p >= 0 && p < x.ndim() && !seen[static_cast<size_t>(p)], ErrorKind::kDimension,
          "permute: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
    out_shape[d] = x.shape()[static_cast<size_t>(p)];
    gather[d] = in_strides[static_cast<size_t>(p)];
  }
  Tensor<T> out(out_shape);
  detail::permute_copy(x.data(), out.data(), out_shape, gather);
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      // inverse permutation scatters gradients back
      std::vector<int> inv(perm.size());
      for (size_t d = 0; d < perm.size(); ++d) inv[static_cast<size_t>(perm[d])] = static_cast<int>(d);
      Tensor<T> gx = x, go = out;
      tape->record([gx, go, inv]() mutable {
        auto go_strides = detail::strides_of(go.shape());
        std::vector<int64_t> gather_back(inv.size());
        Shape in_shape = gx.shape();
        for (size_t d = 0; d < inv.size(); ++d)
          gather_back[d] = go_strides[static_cast<size_t>(inv[d])];
        const T* dy = go.grad();
        T* dx = gx.grad();
        const auto in_strides2 = detail::strides_of(in_shape);
        const int nd = static_cast<int>(in_shape.size());
        detail::for_each<T>(gx.numel(), [&](int64_t o) {
          int64_t rem = o;
          int64_t src = 0;
          for (int d = 0; d < nd; ++d) {
            const int64_t q = rem / in_strides2[static_cast<size_t>(d)];
            rem -= q * in_strides2[static_cast<size_t>(d)];
            src += q * gather_back[static_cast<size_t>(d)];
          }
          dx[o] += dy[src];
        });
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat2(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, int axis) {
  check(a.ndim() == b.ndim(), ErrorKind::kDimension, "concat: rank mismatch");
  check(axis >= 0 && axis < a.ndim(), ErrorKind::kDimension, "concat: bad axis");
  for (int d = 0; d < a.ndim(); ++d)
    if (d != axis)
      check(a.shape()[static_cast<size_t>(d)] == b.shape()[static_cast<size_t>(d)],
            ErrorKind::kDimension, "concat: shape mismatch off the concat axis");
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] += b.shape()[static_cast<size_t>(axis)];
  Tensor<T> out(out_shape);

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.shape()[static_cast<size_t>(d)];
  for (int d = axis + 1; d < a.ndim(); ++d) inner *= a.shape()[static_cast<size_t>(d)];
  const int64_t ablk = a.shape()[static_cast<size_t>(axis)] * inner;
  const int64_t bblk = b.shape()[static_cast<size_t>(axis)] * inner;
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int64_t g = 0; g < outer; ++g) {
    std::memcpy(po + g * (ablk + bblk), pa + g * ablk, sizeof(T) * static_cast<size_t>(ablk));
    std::memcpy(po + g * (ablk + bblk) + ablk, pb + g * bblk, sizeof(T) * static_cast<size_t>(bblk));
  }
  if (detail::any_grad(a, b)) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> ga = a, gb = b, go = out;
      tape->record([ga, gb, go, outer, ablk, bblk]() mutable {
        const T* dy = go.grad();
        T* da = ga.requires_grad() ? ga.grad() : nullptr;
        T* db = gb.requires_grad() ? gb.grad() : nullptr;
        for (int64_t g = 0; g < outer; ++g) {
          if (da)
            for (int64_t i = 0; i < ablk; ++i) da[g * ablk + i] += dy[g * (ablk + bblk) + i];
          if (db)
            for (int64_t i = 0; i < bblk; ++i) db[g * bblk + i] += dy[g * (ablk + bblk) + ablk + i];
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice(Tape<T>* tape, const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  check(axis >= 0 && axis < x.ndim(), ErrorKind::kDimension, "slice: bad axis");
  const int64_t extent = x.shape()[static_cast<size_t>(axis)];
  check(start >= 0 && len >= 1 && start + len <= extent, ErrorKind::kDimension,
        "slice: out of range");
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor<T> out(out_shape);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.shape()[static_cast<size_t>(d)];
  for (int d = axis + 1; d < x.ndim(); ++d) inner *= x.shape()[static_cast<size_t>(d)];
  const T* px = x.data();
  T* po = out.data();
  for (int64_t g = 0; g < outer; ++g)
    std::memcpy(po + g * len * inner, px + (g * extent + start) * inner,
                sizeof(T) * static_cast<size_t>(len * inner));
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      tape->record([gx, go, outer, inner, extent, start, len]() mutable {
        const T* dy = go.grad();
        T* dx = gx.grad();
        for (int64_t g = 0; g < outer; ++g)
          for (int64_t i = 0; i < len * inner; ++i)
            dx[(g * extent + start) * inner + i] += dy[g * len * inner + i];
      });
    }
  }
  return out;
}

// [R,C] -> [n,R,C]; gradient sums over the broadcast axis.
template <typename T>
Tensor<T> expand_rows(Tape<T>* tape, const Tensor<T>& x, int64_t n) {
  check(x.ndim() == 2, ErrorKind::kDimension, "expand_rows: expects a 2-d tensor");
  Shape out_shape{n, x.shape()[0], x.shape()[1]};
  Tensor<T> out(out_shape);
  const int64_t blk = x.numel();
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * blk, x.data(), sizeof(T) * static_cast<size_t>(blk));
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      tape->record([gx, go, n, blk]() mutable {
        const T* dy = go.grad();
        T* dx = gx.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < blk; ++j) dx[j] += dy[i * blk + j];
      });
    }
  }
  return out;
}

// x: [N, T, C], rows: [T, C] broadcast-added over N.
template <typename T>
Tensor<T> add_rows(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& rows) {
  check(x.ndim() == 3 && rows.ndim() == 2 && x.shape()[1] == rows.shape()[0] &&
            x.shape()[2] == rows.shape()[1],
        ErrorKind::kDimension, "add_rows: shape mismatch");
  Tensor<T> out(x.shape());
  const int64_t n = x.shape()[0];
  const int64_t blk = rows.numel();
  const T* px = x.data();
  const T* pr = rows.data();
  T* po = out.data();
  detail::for_each<T>(n, [&](int64_t i) {
    for (int64_t j = 0; j < blk; ++j) po[i * blk + j] = px[i * blk + j] + pr[j];
  });
  if (detail::any_grad(x, rows)) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, gr = rows, go = out;
      tape->record([gx, gr, go, n, blk]() mutable {
        const T* dy = go.grad();
        if (gx.requires_grad()) {
          T* dx = gx.grad();
          detail::for_each<T>(n * blk, [&](int64_t i) { dx[i] += dy[i]; });
        }
        if (gr.requires_grad()) {
          T* dr = gr.grad();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < blk; ++j) dr[j] += dy[i * blk + j];
        }
      });
    }
  }
  return out;
}

// Per-channel scaling along the last axis: y[..., c] = x[..., c] * gamma[c].
template <typename T>
Tensor<T> scale_channels(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma) {
  check(gamma.ndim() == 1 && gamma.shape()[0] == x.shape().back(), ErrorKind::kDimension,
        "scale_channels: gamma must match the last axis");
  const int64_t c = gamma.shape()[0];
  const int64_t rows = x.numel() / c;
  Tensor<T> out(x.shape());
  const T* px = x.data();
  const T* pg = gamma.data();
  T* po = out.data();
  detail::for_each<T>(rows, [&](int64_t r) {
    for (int64_t j = 0; j < c; ++j) po[r * c + j] = px[r * c + j] * pg[j];
  });
  if (detail::any_grad(x, gamma)) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, gg = gamma, go = out;
      tape->record([gx, gg, go, rows, c]() mutable {
        const T* dy = go.grad();
        if (gx.requires_grad()) {
          const T* pg2 = gg.data();
          T* dx = gx.grad();
          detail::for_each<T>(rows, [&](int64_t r) {
            for (int64_t j = 0; j < c; ++j) dx[r * c + j] += dy[r * c + j] * pg2[j];
          });
        }
        if (gg.requires_grad()) {
          const T* px2 = gx.data();
          T* dg = gg.grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) dg[j] += dy[r * c + j] * px2[r * c + j];
        }
      });
    }
  }
  return out;
}

// Per-sample scalar multiply: y[i, ...] = x[i, ...] * s[i]. The scale vector
// is a constant (stochastic-depth mask), no gradient flows into it.
template <typename T>
Tensor<T> scale_rows(Tape<T>* tape, const Tensor<T>& x, const std::vector<T>& s) {
  check(x.ndim() >= 1 && static_cast<int64_t>(s.size()) == x.shape()[0], ErrorKind::kDimension,
        "scale_rows: scale count must match axis 0");
  Tensor<T> out(x.shape());
  const int64_t n = x.shape()[0];
  const int64_t blk = x.numel() / n;
  const T* px = x.data();
  T* po = out.data();
  detail::for_each<T>(n, [&](int64_t i) {
    const T f = s[static_cast<size_t>(i)];
    for (int64_t j = 0; j < blk; ++j) po[i * blk + j] = px[i * blk + j] * f;
  });
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      std::vector<T> sc = s;
      tape->record([gx, go, sc, n, blk]() mutable {
        const T* dy = go.grad();
        T* dx = gx.grad();
        detail::for_each<T>(n, [&](int64_t i) {
          const T f = sc[static_cast<size_t>(i)];
          for (int64_t j = 0; j < blk; ++j) dx[i * blk + j] += dy[i * blk + j] * f;
        });
      });
    }
  }
  return out;
}

// Row-wise L2 normalization with a zero-vector guard: a zero row stays zero.
template <typename T>
Tensor<T> l2_normalize_rows(Tape<T>* tape, const Tensor<T>& x) {
  check(x.ndim() == 2, ErrorKind::kDimension, "l2_normalize_rows: expects [N, D]");
  const int64_t n = x.shape()[0];
  const int64_t d = x.shape()[1];
  Tensor<T> out(x.shape());
  std::vector<T> norms(static_cast<size_t>(n));
  const T* px = x.data();
  T* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    T ss = T(0);
    for (int64_t j = 0; j < d; ++j) ss += px[i * d + j] * px[i * d + j];
    const T nm = std::sqrt(ss);
    norms[static_cast<size_t>(i)] = nm;
    if (nm == T(0)) {
      for (int64_t j = 0; j < d; ++j) po[i * d + j] = T(0);
    } else {
      for (int64_t j = 0; j < d; ++j) po[i * d + j] = px[i * d + j] / nm;
    }
  }
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      tape->record([gx, go, norms, n, d]() mutable {
        const T* dy = go.grad();
        const T* y = go.data();
        T* dx = gx.grad();
        for (int64_t i = 0; i < n; ++i) {
          const T nm = norms[static_cast<size_t>(i)];
          if (nm == T(0)) continue;
          T dot = T(0);
          for (int64_t j = 0; j < d; ++j) dot += dy[i * d + j] * y[i * d + j];
          for (int64_t j = 0; j < d; ++j) dx[i * d + j] += (dy[i * d + j] - y[i * d + j] * dot) / nm;
        }
      });
    }
  }
  return out;
}

// Mean over a token range: x[N, T, C] -> [N, C] averaging tokens
// [start, start+len). Registers are excluded by passing the patch range.
template <typename T>
Tensor<T> token_mean(Tape<T>* tape, const Tensor<T>& x, int64_t start, int64_t len) {
  check(x.ndim() == 3, ErrorKind::kDimension, "token_mean: expects [N, T, C]");
  const int64_t n = x.shape()[0], t = x.shape()[1], c = x.shape()[2];
  check(start >= 0 && len >= 1 && start + len <= t, ErrorKind::kDimension,
        "token_mean: token range out of bounds");
  Tensor<T> out(Shape{n, c});
  const T* px = x.data();
  T* po = out.data();
  const T inv = T(1) / static_cast<T>(len);
  detail::for_each<T>(n, [&](int64_t i) {
    for (int64_t j = 0; j < c; ++j) {
      T acc = T(0);
      for (int64_t k = start; k < start + len; ++k) acc += px[(i * t + k) * c + j];
      po[i * c + j] = acc * inv;
    }
  });
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      tape->record([gx, go, n, t, c, start, len, inv]() mutable {
        const T* dy = go.grad();
        T* dx = gx.grad();
        detail::for_each<T>(n, [&](int64_t i) {
          for (int64_t k = start; k < start + len; ++k)
            for (int64_t j = 0; j < c; ++j) dx[(i * t + k) * c + j] += dy[i * c + j] * inv;
        });
      });
    }
  }
  return out;
}

}  // namespace tgda::ops
