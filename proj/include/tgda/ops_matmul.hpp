#pragma once

#include "tgda/blas.hpp"
#include "tgda/ops_basic.hpp"

namespace tgda::ops {

// C[M,N] = A[M,K] @ B[K,N]
template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.ndim() == 2 && b.ndim() == 2, ErrorKind::kDimension, "matmul: expects 2-d tensors");
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  check(b.shape()[0] == k, ErrorKind::kDimension,
        "matmul: inner dims " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  Tensor<T> out(Shape{m, n});
  blas::gemm<T>(false, false, m, n, k, T(1), a.data(), k, b.data(), n, T(0), out.data(), n);
  debug_validate(out, "matmul");
  if (detail::any_grad(a, b)) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> ga = a, gb = b, go = out;
      tape->record([ga, gb, go, m, n, k]() mutable {
        const T* dy = go.grad();
        if (ga.requires_grad()) {
          // dA += dY @ B^T
          Tensor<T> tmp(Shape{m, k});
          blas::gemm<T>(false, true, m, k, n, T(1), dy, n, gb.data(), n, T(0), tmp.data(), k);
          T* da = ga.grad();
          const T* pt = tmp.data();
          detail::for_each<T>(m * k, [&](int64_t i) { da[i] += pt[i]; });
        }
        if (gb.requires_grad()) {
          // dB += A^T @ dY
          Tensor<T> tmp(Shape{k, n});
          blas::gemm<T>(true, false, k, n, m, T(1), ga.data(), k, dy, n, T(0), tmp.data(), n);
          T* db = gb.grad();
          const T* pt = tmp.data();
          detail::for_each<T>(k * n, [&](int64_t i) { db[i] += pt[i]; });
        }
      });
    }
  }
  return out;
}

// y[N,out] = x[N,in] @ w^T + b. Tokens flatten to rows first.
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check(x.ndim() >= 1 && w.ndim() == 2, ErrorKind::kDimension, "linear: bad ranks");
  const int64_t in = w.shape()[1], out_f = w.shape()[0];
  check(x.shape().back() == in, ErrorKind::kDimension,
        "linear: input features " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const bool has_bias = b.defined();
  if (has_bias)
    check(b.ndim() == 1 && b.shape()[0] == out_f, ErrorKind::kDimension, "linear: bias shape");
  const int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Tensor<T> out(out_shape);
  blas::gemm<T>(false, true, rows, out_f, in, T(1), x.data(), in, w.data(), in, T(0), out.data(),
                out_f);
  if (has_bias) {
    T* po = out.data();
    const T* pb = b.data();
    detail::for_each<T>(rows, [&](int64_t r) {
      for (int64_t j = 0; j < out_f; ++j) po[r * out_f + j] += pb[j];
    });
  }
  debug_validate(out, "linear");
  const bool rg = has_bias ? detail::any_grad(x, w, b) : detail::any_grad(x, w);
  if (rg) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, gw = w, gb = b, go = out;
      tape->record([gx, gw, gb, go, rows, in, out_f, has_bias]() mutable {
        const T* dy = go.grad();
        if (gx.requires_grad()) {
          // dX += dY @ W
          Tensor<T> tmp(Shape{rows, in});
          blas::gemm<T>(false, false, rows, in, out_f, T(1), dy, out_f, gw.data(), in, T(0),
                        tmp.data(), in);
          T* dx = gx.grad();
          const T* pt = tmp.data();
          detail::for_each<T>(rows * in, [&](int64_t i) { dx[i] += pt[i]; });
        }
        if (gw.requires_grad()) {
          // dW += dY^T @ X
          Tensor<T> tmp(Shape{out_f, in});
          blas::gemm<T>(true, false, out_f, in, rows, T(1), dy, out_f, gx.data(), in, T(0),
                        tmp.data(), in);
          T* dw = gw.grad();
          const T* pt = tmp.data();
          detail::for_each<T>(out_f * in, [&](int64_t i) { dw[i] += pt[i]; });
        }
        if (has_bias && gb.requires_grad()) {
          T* db = gb.grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < out_f; ++j) db[j] += dy[r * out_f + j];
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w) {
  return linear(tape, x, w, Tensor<T>());
}

// Batched matmul: [B,M,K] @ [B,K,N] -> [B,M,N]; slices run in parallel.
template <typename T>
Tensor<T> bmm(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.ndim() == 3 && b.ndim() == 3 && a.shape()[0] == b.shape()[0] &&
            a.shape()[2] == b.shape()[1],
        ErrorKind::kDimension,
        "bmm: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  const int64_t bs = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  Tensor<T> out(Shape{bs, m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < bs; ++i)
    blas::detail::gemm_raw(false, false, m, n, k, T(1), pa + i * m * k, k, pb + i * k * n, n, T(0),
                           po + i * m * n, n);
  debug_validate(out, "bmm");
  if (detail::any_grad(a, b)) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> ga = a, gb = b, go = out;
      tape->record([ga, gb, go, bs, m, n, k]() mutable {
        const T* dy = go.grad();
        if (ga.requires_grad()) {
          Tensor<T> tmp(Shape{bs, m, k});
          T* pt = tmp.data();
          const T* pb2 = gb.data();
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < bs; ++i)
            blas::detail::gemm_raw(false, true, m, k, n, T(1), dy + i * m * n, n, pb2 + i * k * n,
                                   n, T(0), pt + i * m * k, k);
          T* da = ga.grad();
          detail::for_each<T>(bs * m * k, [&](int64_t i) { da[i] += pt[i]; });
        }
        if (gb.requires_grad()) {
          Tensor<T> tmp(Shape{bs, k, n});
          T* pt = tmp.data();
          const T* pa2 = ga.data();
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < bs; ++i)
            blas::detail::gemm_raw(true, false, k, n, m, T(1), pa2 + i * m * k, k, dy + i * m * n,
                                   n, T(0), pt + i * k * n, n);
          T* db = gb.grad();
          detail::for_each<T>(bs * k * n, [&](int64_t i) { db[i] += pt[i]; });
        }
      });
    }
  }
  return out;
}

}  // namespace tgda::ops
