#pragma once

#include <cstring>

#include "tgda/blas.hpp"
#include "tgda/ops_basic.hpp"

namespace tgda::ops {

namespace detail {

// Reusable per-thread scratch; conv is driven from the training thread, so
// buffers grow once to the largest layer and stay.
template <typename T>
std::vector<T>& scratch(int slot) {
  static thread_local std::vector<T> bufs[4];
  return bufs[slot];
}

struct ConvGeom {
  int64_t n, ci, h, w;      // input
  int64_t co, kh, kw;       // kernel
  int64_t stride, pad;
  int64_t oh, ow;           // output
  int64_t ikk() const { return ci * kh * kw; }
  int64_t ohw() const { return oh * ow; }
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, int64_t pad) {
  check(x.ndim() == 4, ErrorKind::kDimension, "conv2d: input must be NCHW");
  check(w.ndim() == 4, ErrorKind::kDimension, "conv2d: weight must be OIKhKw");
  check(stride >= 1, ErrorKind::kParameter, "conv2d: stride must be >= 1");
  check(pad >= 0, ErrorKind::kParameter, "conv2d: padding must be >= 0");
  ConvGeom g;
  g.n = x.shape()[0]; g.ci = x.shape()[1]; g.h = x.shape()[2]; g.w = x.shape()[3];
  g.co = w.shape()[0]; g.kh = w.shape()[2]; g.kw = w.shape()[3];
  g.stride = stride; g.pad = pad;
  check(w.shape()[1] == g.ci, ErrorKind::kDimension,
        "conv2d: input channels " + std::to_string(g.ci) + " vs weight " +
            std::to_string(w.shape()[1]));
  const int64_t ch = g.h + 2 * pad - g.kh;
  const int64_t cw = g.w + 2 * pad - g.kw;
  check(ch >= 0 && cw >= 0, ErrorKind::kGeometry, "conv2d: kernel larger than padded input");
  check(ch % stride == 0 && cw % stride == 0, ErrorKind::kGeometry,
        "conv2d: non-integer output extent (H+2p-K not divisible by stride)");
  g.oh = ch / stride + 1;
  g.ow = cw / stride + 1;
  return g;
}

// Single-sample patch matrix col[(ci*kh+r)*kw+s][oh*ow + ow_], written as
// streaming runs of ow.
template <typename T>
void im2col_sample(const T* xn, const ConvGeom& g, T* col) {
  for (int64_t ci = 0; ci < g.ci; ++ci) {
    for (int64_t r = 0; r < g.kh; ++r) {
      for (int64_t s = 0; s < g.kw; ++s) {
        T* dst = col + ((ci * g.kh + r) * g.kw + s) * g.ohw();
        for (int64_t oh = 0; oh < g.oh; ++oh) {
          const int64_t ih = oh * g.stride - g.pad + r;
          T* d = dst + oh * g.ow;
          if (ih < 0 || ih >= g.h) {
            for (int64_t ow = 0; ow < g.ow; ++ow) d[ow] = T(0);
            continue;
          }
          const T* src_row = xn + (ci * g.h + ih) * g.w;
          if (g.stride == 1) {
            const int64_t iw0 = -g.pad + s;
            const int64_t lo = std::min(g.ow, std::max<int64_t>(0, -iw0));
            const int64_t hi = std::max(lo, std::min<int64_t>(g.ow, g.w - iw0));
            for (int64_t ow = 0; ow < lo; ++ow) d[ow] = T(0);
            for (int64_t ow = lo; ow < hi; ++ow) d[ow] = src_row[iw0 + ow];
            for (int64_t ow = hi; ow < g.ow; ++ow) d[ow] = T(0);
          } else {
            for (int64_t ow = 0; ow < g.ow; ++ow) {
              const int64_t iw = ow * g.stride - g.pad + s;
              d[ow] = (iw >= 0 && iw < g.w) ? src_row[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

// col[(ci*kh+r)*kw+s][n*ohw + oh*ow + ow_] = x padded patch; zero outside.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int64_t nhw = g.n * g.ohw();
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < g.n; ++n) {
    const T* xn = x + n * g.ci * g.h * g.w;
    for (int64_t ci = 0; ci < g.ci; ++ci) {
      for (int64_t r = 0; r < g.kh; ++r) {
        for (int64_t s = 0; s < g.kw; ++s) {
          const int64_t row = (ci * g.kh + r) * g.kw + s;
          T* dst = col + row * nhw + n * g.ohw();
          for (int64_t oh = 0; oh < g.oh; ++oh) {
            const int64_t ih = oh * g.stride - g.pad + r;
            T* d = dst + oh * g.ow;
            if (ih < 0 || ih >= g.h) {
              for (int64_t ow = 0; ow < g.ow; ++ow) d[ow] = T(0);
              continue;
            }
            const T* src_row = xn + (ci * g.h + ih) * g.w;
            if (g.stride == 1) {
              const int64_t iw0 = -g.pad + s;
              const int64_t lo = std::min(g.ow, std::max<int64_t>(0, -iw0));
              const int64_t hi = std::max(lo, std::min<int64_t>(g.ow, g.w - iw0));
              for (int64_t ow = 0; ow < lo; ++ow) d[ow] = T(0);
              for (int64_t ow = lo; ow < hi; ++ow) d[ow] = src_row[iw0 + ow];
              for (int64_t ow = hi; ow < g.ow; ++ow) d[ow] = T(0);
            } else {
              for (int64_t ow = 0; ow < g.ow; ++ow) {
                const int64_t iw = ow * g.stride - g.pad + s;
                d[ow] = (iw >= 0 && iw < g.w) ? src_row[iw] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_sample_add(const T* col, const ConvGeom& g, T* dxn) {
  for (int64_t ci = 0; ci < g.ci; ++ci) {
    for (int64_t r = 0; r < g.kh; ++r) {
      for (int64_t s = 0; s < g.kw; ++s) {
        const T* src = col + ((ci * g.kh + r) * g.kw + s) * g.ohw();
        for (int64_t oh = 0; oh < g.oh; ++oh) {
          const int64_t ih = oh * g.stride - g.pad + r;
          if (ih < 0 || ih >= g.h) continue;
          T* dst_row = dxn + (ci * g.h + ih) * g.w;
          const T* c = src + oh * g.ow;
          if (g.stride == 1) {
            const int64_t iw0 = -g.pad + s;
            const int64_t lo = std::min(g.ow, std::max<int64_t>(0, -iw0));
            const int64_t hi = std::max(lo, std::min<int64_t>(g.ow, g.w - iw0));
            for (int64_t ow = lo; ow < hi; ++ow) dst_row[iw0 + ow] += c[ow];
          } else {
            for (int64_t ow = 0; ow < g.ow; ++ow) {
              const int64_t iw = ow * g.stride - g.pad + s;
              if (iw >= 0 && iw < g.w) dst_row[iw] += c[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const int64_t nhw = g.n * g.ohw();
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < g.n; ++n) {
    T* xn = dx + n * g.ci * g.h * g.w;
    for (int64_t ci = 0; ci < g.ci; ++ci) {
      for (int64_t r = 0; r < g.kh; ++r) {
        for (int64_t s = 0; s < g.kw; ++s) {
          const int64_t row = (ci * g.kh + r) * g.kw + s;
          const T* src = col + row * nhw + n * g.ohw();
          for (int64_t oh = 0; oh < g.oh; ++oh) {
            const int64_t ih = oh * g.stride - g.pad + r;
            if (ih < 0 || ih >= g.h) continue;
            T* dst_row = xn + (ci * g.h + ih) * g.w;
            const T* c = src + oh * g.ow;
            for (int64_t ow = 0; ow < g.ow; ++ow) {
              const int64_t iw = ow * g.stride - g.pad + s;
              if (iw >= 0 && iw < g.w) dst_row[iw] += c[ow];
            }
          }
        }
      }
    }
  }
}

// Early layers (large spatial output) run one GEMM per sample with streaming
// column buffers, landing directly in NCHW; late layers (small spatial
// output, wide kernels) share one batched GEMM so the weight matrix is packed
// once. The crossover depends only on the geometry.
inline bool per_sample_conv(int64_t ohw) { return ohw >= 64; }

constexpr int64_t kDwChunks = 16;  // fixed reduction chunks for weight grads

}  // namespace detail

// Direct 2-d convolution, NCHW x OIKhKw -> NOH'W'. Output extents must be
// exact; stride-2 halving layers pre-pad with zero_pad2d.
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int64_t stride, int64_t pad) {
  const auto g = detail::conv_geometry(x, w, stride, pad);
  if (bias.defined())
    check(bias.ndim() == 1 && bias.shape()[0] == g.co, ErrorKind::kDimension,
          "conv2d: bias must be [O]");
  const int64_t nhw = g.n * g.ohw();
  const bool trivial_col = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;

  Tensor<T> out(Shape{g.n, g.co, g.oh, g.ow});
  const T* pb = bias.defined() ? bias.data() : nullptr;
  if (detail::per_sample_conv(g.ohw()) || trivial_col) {
    const T* px = x.data();
    T* po = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < g.n; ++n) {
      const T* col;
      if (trivial_col) {
        col = px + n * g.ci * g.h * g.w;  // 1x1 stride-1: the input itself
      } else {
        auto& buf = detail::scratch<T>(0);
        buf.resize(static_cast<size_t>(g.ikk() * g.ohw()));
        detail::im2col_sample(px + n * g.ci * g.h * g.w, g, buf.data());
        col = buf.data();
      }
      T* yn = po + n * g.co * g.ohw();
      blas::detail::gemm_raw(false, false, g.co, g.ohw(), g.ikk(), T(1), w.data(), g.ikk(), col,
                             g.ohw(), T(0), yn, g.ohw());
      if (pb)
        for (int64_t o = 0; o < g.co; ++o)
          for (int64_t i = 0; i < g.ohw(); ++i) yn[o * g.ohw() + i] += pb[o];
    }
  } else {
    auto& col_buf = detail::scratch<T>(0);
    col_buf.resize(static_cast<size_t>(g.ikk() * nhw));
    detail::im2col(x.data(), g, col_buf.data());
    auto& yt_buf = detail::scratch<T>(1);
    yt_buf.resize(static_cast<size_t>(g.co * nhw));
    blas::gemm<T>(false, false, g.co, nhw, g.ikk(), T(1), w.data(), g.ikk(), col_buf.data(), nhw,
                  T(0), yt_buf.data(), nhw);
    T* po = out.data();
    const T* yt = yt_buf.data();
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < g.n; ++n) {
      for (int64_t o = 0; o < g.co; ++o) {
        const T* src = yt + o * nhw + n * g.ohw();
        T* dst = po + (n * g.co + o) * g.ohw();
        const T b = pb ? pb[o] : T(0);
        for (int64_t i = 0; i < g.ohw(); ++i) dst[i] = src[i] + b;
      }
    }
  }
  debug_validate(out, "conv2d");

  const bool rg = bias.defined() ? detail::any_grad(x, w, bias) : detail::any_grad(x, w);
  if (rg) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, gw = w, gb = bias, go = out;
      tape->record([gx, gw, gb, go, g, nhw, trivial_col]() mutable {
        const T* dy = go.grad();
        if (gb.defined() && gb.requires_grad()) {
          T* db = gb.grad();
#pragma omp parallel for schedule(static)
          for (int64_t o = 0; o < g.co; ++o) {
            T acc = T(0);
            for (int64_t n = 0; n < g.n; ++n) {
              const T* src = dy + (n * g.co + o) * g.ohw();
              for (int64_t i = 0; i < g.ohw(); ++i) acc += src[i];
            }
            db[o] += acc;
          }
        }
        if (detail::per_sample_conv(g.ohw()) || trivial_col) {
          const T* px = gx.data();
          if (gw.requires_grad()) {
            // fixed-chunk sample reduction keeps the accumulation order
            // independent of the thread count
            const int64_t wsz = g.co * g.ikk();
            const int64_t chunks = std::min<int64_t>(detail::kDwChunks, g.n);
            auto partial = std::make_unique<T[]>(static_cast<size_t>(chunks * wsz));
            std::fill_n(partial.get(), chunks * wsz, T(0));
#pragma omp parallel for schedule(static)
            for (int64_t c = 0; c < chunks; ++c) {
              T* dwp = partial.get() + c * wsz;
              const int64_t lo = c * g.n / chunks, hi = (c + 1) * g.n / chunks;
              for (int64_t n = lo; n < hi; ++n) {
                const T* col;
                if (trivial_col) {
                  col = px + n * g.ci * g.h * g.w;
                } else {
                  auto& buf = detail::scratch<T>(0);
                  buf.resize(static_cast<size_t>(g.ikk() * g.ohw()));
                  detail::im2col_sample(px + n * g.ci * g.h * g.w, g, buf.data());
                  col = buf.data();
                }
                blas::detail::gemm_raw(false, true, g.co, g.ikk(), g.ohw(), T(1),
                                       dy + n * g.co * g.ohw(), g.ohw(), col, g.ohw(), T(1), dwp,
                                       g.ikk());
              }
            }
            T* dw = gw.grad();
            for (int64_t c = 0; c < chunks; ++c) {
              const T* dwp = partial.get() + c * wsz;
              for (int64_t i = 0; i < wsz; ++i) dw[i] += dwp[i];
            }
          }
          if (gx.requires_grad()) {
            T* dxp = gx.grad();
#pragma omp parallel for schedule(static)
            for (int64_t n = 0; n < g.n; ++n) {
              if (trivial_col) {
                // dX_n += W^T @ dY_n directly
                blas::detail::gemm_raw(true, false, g.ci, g.ohw(), g.co, T(1), gw.data(), g.ikk(),
                                       dy + n * g.co * g.ohw(), g.ohw(), T(1),
                                       dxp + n * g.ci * g.h * g.w, g.ohw());
              } else {
                auto& buf = detail::scratch<T>(1);
                buf.resize(static_cast<size_t>(g.ikk() * g.ohw()));
                blas::detail::gemm_raw(true, false, g.ikk(), g.ohw(), g.co, T(1), gw.data(),
                                       g.ikk(), dy + n * g.co * g.ohw(), g.ohw(), T(0), buf.data(),
                                       g.ohw());
                detail::col2im_sample_add(buf.data(), g, dxp + n * g.ci * g.h * g.w);
              }
            }
          }
          return;
        }
        // batched path: dyt[o][n*ohw] from the NCHW gradient
        auto& dyt_buf = detail::scratch<T>(1);
        dyt_buf.resize(static_cast<size_t>(g.co * nhw));
        {
          T* dyt = dyt_buf.data();
#pragma omp parallel for schedule(static)
          for (int64_t n = 0; n < g.n; ++n)
            for (int64_t o = 0; o < g.co; ++o)
              std::memcpy(dyt + o * nhw + n * g.ohw(), dy + (n * g.co + o) * g.ohw(),
                          sizeof(T) * static_cast<size_t>(g.ohw()));
        }
        const T* dyt = dyt_buf.data();
        if (gw.requires_grad()) {
          auto& col_buf2 = detail::scratch<T>(0);
          col_buf2.resize(static_cast<size_t>(g.ikk() * nhw));
          detail::im2col(gx.data(), g, col_buf2.data());
          auto& dw_buf = detail::scratch<T>(2);
          dw_buf.resize(static_cast<size_t>(g.co * g.ikk()));
          blas::gemm<T>(false, true, g.co, g.ikk(), nhw, T(1), dyt, nhw, col_buf2.data(), nhw,
                        T(0), dw_buf.data(), g.ikk());
          T* dw = gw.grad();
          const T* t = dw_buf.data();
          detail::for_each<T>(g.co * g.ikk(), [&](int64_t i) { dw[i] += t[i]; });
        }
        if (gx.requires_grad()) {
          auto& dcol_buf = detail::scratch<T>(3);
          dcol_buf.resize(static_cast<size_t>(g.ikk() * nhw));
          blas::gemm<T>(true, false, g.ikk(), nhw, g.co, T(1), gw.data(), g.ikk(), dyt, nhw, T(0),
                        dcol_buf.data(), nhw);
          detail::col2im_add(dcol_buf.data(), g, gx.grad());
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, int64_t stride,
                 int64_t pad) {
  return conv2d(tape, x, w, Tensor<T>(), stride, pad);
}

// Constant zero padding with independent per-side amounts (asymmetric SAME
// padding for stride-2 halving).
template <typename T>
Tensor<T> zero_pad2d(Tape<T>* tape, const Tensor<T>& x, int64_t top, int64_t bottom, int64_t left,
                     int64_t right) {
  check(x.ndim() == 4, ErrorKind::kDimension, "zero_pad2d: input must be NCHW");
  check(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, ErrorKind::kParameter,
        "zero_pad2d: negative pad");
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int64_t ho = h + top + bottom, wo = w + left + right;
  Tensor<T> out(Shape{n, c, ho, wo});
  const T* px = x.data();
  T* po = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < n * c; ++p) {
    const T* src = px + p * h * w;
    T* dst = po + p * ho * wo;
    for (int64_t i = 0; i < h; ++i)
      std::memcpy(dst + (i + top) * wo + left, src + i * w, sizeof(T) * static_cast<size_t>(w));
  }
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      tape->record([gx, go, n, c, h, w, ho, wo, top, left]() mutable {
        const T* dy = go.grad();
        T* dx = gx.grad();
#pragma omp parallel for schedule(static)
        for (int64_t p = 0; p < n * c; ++p) {
          const T* src = dy + p * ho * wo;
          T* dst = dx + p * h * w;
          for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) dst[i * w + j] += src[(i + top) * wo + left + j];
        }
      });
    }
  }
  return out;
}

// Crop the bottom/right edge; paired with stride-2 1x1 projections.
template <typename T>
Tensor<T> crop2d(Tape<T>* tape, const Tensor<T>& x, int64_t new_h, int64_t new_w) {
  check(x.ndim() == 4, ErrorKind::kDimension, "crop2d: input must be NCHW");
  const int64_t h = x.shape()[2], w = x.shape()[3];
  check(new_h >= 1 && new_h <= h && new_w >= 1 && new_w <= w, ErrorKind::kGeometry,
        "crop2d: crop larger than input");
  Tensor<T> a = slice(tape, x, 2, 0, new_h);
  return slice(tape, a, 3, 0, new_w);
}

template <typename T>
Tensor<T> max_pool2d(Tape<T>* tape, const Tensor<T>& x, int64_t kernel, int64_t stride) {
  check(x.ndim() == 4, ErrorKind::kDimension, "max_pool2d: input must be NCHW");
  check(kernel >= 1 && stride >= 1, ErrorKind::kParameter, "max_pool2d: bad kernel/stride");
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  check((h - kernel) % stride == 0 && (w - kernel) % stride == 0 && h >= kernel && w >= kernel,
        ErrorKind::kGeometry, "max_pool2d: non-integer output extent");
  const int64_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor<T> out(Shape{n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(n * c * oh * ow));
  const T* px = x.data();
  T* po = out.data();
  int32_t* am = argmax->data();
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < n * c; ++p) {
    const T* plane = px + p * h * w;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) {
        int64_t best = (i * stride) * w + (j * stride);
        T bv = plane[best];
        for (int64_t r = 0; r < kernel; ++r)
          for (int64_t s = 0; s < kernel; ++s) {
            const int64_t idx = (i * stride + r) * w + (j * stride + s);
            if (plane[idx] > bv) {
              bv = plane[idx];
              best = idx;
            }
          }
        po[(p * oh + i) * ow + j] = bv;
        am[(p * oh + i) * ow + j] = static_cast<int32_t>(best);
      }
    }
  }
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      tape->record([gx, go, argmax, n, c, h, w, oh, ow]() mutable {
        const T* dy = go.grad();
        T* dx = gx.grad();
        const int32_t* am2 = argmax->data();
#pragma omp parallel for schedule(static)
        for (int64_t p = 0; p < n * c; ++p)
          for (int64_t i = 0; i < oh * ow; ++i)
            dx[p * h * w + am2[p * oh * ow + i]] += dy[p * oh * ow + i];
      });
    }
  }
  return out;
}

// Global average pool over the spatial axes: [N,C,H,W] -> [N,C].
template <typename T>
Tensor<T> gap2d(Tape<T>* tape, const Tensor<T>& x) {
  check(x.ndim() == 4, ErrorKind::kDimension, "gap2d: input must be NCHW");
  const int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor<T> out(Shape{n, c});
  const T* px = x.data();
  T* po = out.data();
  const T inv = T(1) / static_cast<T>(hw);
  detail::for_each<T>(n * c, [&](int64_t p) {
    T acc = T(0);
    for (int64_t i = 0; i < hw; ++i) acc += px[p * hw + i];
    po[p] = acc * inv;
  });
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      tape->record([gx, go, n, c, hw, inv]() mutable {
        const T* dy = go.grad();
        T* dx = gx.grad();
        detail::for_each<T>(n * c, [&](int64_t p) {
          const T g2 = dy[p] * inv;
          for (int64_t i = 0; i < hw; ++i) dx[p * hw + i] += g2;
        });
      });
    }
  }
  return out;
}

namespace detail {
struct LerpCoef {
  int64_t i0, i1;
  double w0, w1;
};
// align-corners=false: s = (d + 0.5) * in/out - 0.5, clamped.
inline std::vector<LerpCoef> resize_coefs(int64_t in, int64_t out) {
  std::vector<LerpCoef> cs(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t d = 0; d < out; ++d) {
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    if (s > static_cast<double>(in - 1)) s = static_cast<double>(in - 1);
    const auto i0 = static_cast<int64_t>(s);
    const int64_t i1 = std::min(i0 + 1, in - 1);
    const double f = s - static_cast<double>(i0);
    cs[static_cast<size_t>(d)] = {i0, i1, 1.0 - f, f};
  }
  return cs;
}
}  // namespace detail

// Bilinear interpolation to (out_h, out_w); identical size is a bit-exact copy.
template <typename T>
Tensor<T> bilinear_resize(Tape<T>* tape, const Tensor<T>& x, int64_t out_h, int64_t out_w) {
  check(x.ndim() == 4, ErrorKind::kDimension, "bilinear_resize: input must be NCHW");
  check(out_h >= 1 && out_w >= 1, ErrorKind::kParameter, "bilinear_resize: bad output size");
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (out_h == h && out_w == w) {
    Tensor<T> out(x.shape());
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
  const auto ch = detail::resize_coefs(h, out_h);
  const auto cw = detail::resize_coefs(w, out_w);
  Tensor<T> out(Shape{n, c, out_h, out_w});
  const T* px = x.data();
  T* po = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < n * c; ++p) {
    const T* plane = px + p * h * w;
    T* dst = po + p * out_h * out_w;
    for (int64_t i = 0; i < out_h; ++i) {
      const auto& rh = ch[static_cast<size_t>(i)];
      for (int64_t j = 0; j < out_w; ++j) {
        const auto& rw = cw[static_cast<size_t>(j)];
        const double v = rh.w0 * (rw.w0 * plane[rh.i0 * w + rw.i0] + rw.w1 * plane[rh.i0 * w + rw.i1]) +
                         rh.w1 * (rw.w0 * plane[rh.i1 * w + rw.i0] + rw.w1 * plane[rh.i1 * w + rw.i1]);
        dst[i * out_w + j] = static_cast<T>(v);
      }
    }
  }
  if (x.requires_grad()) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, go = out;
      tape->record([gx, go, ch, cw, n, c, h, w, out_h, out_w]() mutable {
        const T* dy = go.grad();
        T* dx = gx.grad();
#pragma omp parallel for schedule(static)
        for (int64_t p = 0; p < n * c; ++p) {
          const T* src = dy + p * out_h * out_w;
          T* dst = dx + p * h * w;
          for (int64_t i = 0; i < out_h; ++i) {
            const auto& rh = ch[static_cast<size_t>(i)];
            for (int64_t j = 0; j < out_w; ++j) {
              const auto& rw = cw[static_cast<size_t>(j)];
              const T g = src[i * out_w + j];
              dst[rh.i0 * w + rw.i0] += static_cast<T>(rh.w0 * rw.w0) * g;
              dst[rh.i0 * w + rw.i1] += static_cast<T>(rh.w0 * rw.w1) * g;
              dst[rh.i1 * w + rw.i0] += static_cast<T>(rh.w1 * rw.w0) * g;
              dst[rh.i1 * w + rw.i1] += static_cast<T>(rh.w1 * rw.w1) * g;
            }
          }
        }
      });
    }
  }
  return out;
}

}  // namespace tgda::ops
