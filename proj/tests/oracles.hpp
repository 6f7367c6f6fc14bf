#pragma once

// Test-only reference implementations. These are deliberately written as
// plain nested loops over raw buffers, independent of the library's compute
// paths, and serve as the oracles the op tests compare against.

#include <cmath>
#include <vector>

#include "tgda/tensor.hpp"

namespace oracle {

using tgda::Shape;
using tgda::Tensor;

// Direct six-loop convolution, NCHW / OIKhKw.
template <typename T>
Tensor<T> conv2d_ref(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& bias,
                     int64_t stride, int64_t pad) {
  const int64_t n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], ww = x.shape()[3];
  const int64_t co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (ww + 2 * pad - kw) / stride + 1;
  Tensor<T> out(Shape{n, co, oh, ow});
  for (int64_t in = 0; in < n; ++in)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          T acc = bias.empty() ? T(0) : bias[static_cast<size_t>(o)];
          for (int64_t c = 0; c < ci; ++c)
            for (int64_t r = 0; r < kh; ++r)
              for (int64_t s = 0; s < kw; ++s) {
                const int64_t ih = i * stride - pad + r;
                const int64_t iw = j * stride - pad + s;
                if (ih < 0 || ih >= h || iw < 0 || iw >= ww) continue;
                acc += x.at(((in * ci + c) * h + ih) * ww + iw) *
                       w.at(((o * ci + c) * kh + r) * kw + s);
              }
          out.at(((in * co + o) * oh + i) * ow + j) = acc;
        }
  return out;
}

// Scalar bilinear interpolation, align-corners=false.
template <typename T>
T bilinear_sample_ref(const T* plane, int64_t h, int64_t w, double sy, double sx) {
  if (sy < 0) sy = 0;
  if (sy > h - 1) sy = static_cast<double>(h - 1);
  if (sx < 0) sx = 0;
  if (sx > w - 1) sx = static_cast<double>(w - 1);
  const auto y0 = static_cast<int64_t>(sy);
  const auto x0 = static_cast<int64_t>(sx);
  const int64_t y1 = std::min(y0 + 1, h - 1);
  const int64_t x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - static_cast<double>(y0);
  const double fx = sx - static_cast<double>(x0);
  return static_cast<T>((1 - fy) * ((1 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1]) +
                        fy * ((1 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1]));
}

template <typename T>
Tensor<T> bilinear_resize_ref(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  Tensor<T> out(Shape{n, c, out_h, out_w});
  const double sh = static_cast<double>(h) / static_cast<double>(out_h);
  const double sw = static_cast<double>(w) / static_cast<double>(out_w);
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t i = 0; i < out_h; ++i)
      for (int64_t j = 0; j < out_w; ++j)
        out.at((p * out_h + i) * out_w + j) = bilinear_sample_ref(
            x.data() + p * h * w, h, w, (i + 0.5) * sh - 0.5, (j + 0.5) * sw - 0.5);
  return out;
}

// Bilinear attention pooling: f_k = (1/HW) sum_hw A_k(hw) * F(:,hw), maps
// concatenated, then signed sqrt and L2 normalization over the full vector.
template <typename T>
Tensor<T> attention_pool_ref(const Tensor<T>& features, const Tensor<T>& maps) {
  const int64_t n = features.shape()[0], c = features.shape()[1];
  const int64_t hw = features.shape()[2] * features.shape()[3];
  const int64_t m = maps.shape()[1];
  Tensor<T> out(Shape{n, m * c});
  for (int64_t in = 0; in < n; ++in) {
    std::vector<T> v(static_cast<size_t>(m * c), T(0));
    for (int64_t k = 0; k < m; ++k)
      for (int64_t ch = 0; ch < c; ++ch) {
        T acc = T(0);
        for (int64_t i = 0; i < hw; ++i)
          acc += maps.at((in * m + k) * hw + i) * features.at((in * c + ch) * hw + i);
        v[static_cast<size_t>(k * c + ch)] = acc / static_cast<T>(hw);
      }
    T norm = T(0);
    for (auto& e : v) {
      e = e >= T(0) ? std::sqrt(e) : -std::sqrt(-e);
      norm += e * e;
    }
    norm = std::sqrt(norm);
    for (int64_t j = 0; j < m * c; ++j)
      out.at(in * m * c + j) = norm > T(0) ? v[static_cast<size_t>(j)] / norm : T(0);
  }
  return out;
}

}  // namespace oracle
