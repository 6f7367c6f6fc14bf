#pragma once

#include "tgda/ops_basic.hpp"

namespace tgda::ops {

enum class BnMode { kTrain, kEval };

namespace detail {

// Channel addressing for the two supported layouts:
//  - NCHW: channel axis 1, statistics over (N, H, W)
//  - [N,T,C] / [N,C]: channel last, statistics over leading axes
struct BnLayout {
  int64_t channels;
  int64_t stat_count;   // elements per channel
  bool channel_last;
  int64_t outer;        // NCHW: N; channel-last: rows
  int64_t inner;        // NCHW: H*W; channel-last: 1
};

template <typename T>
BnLayout bn_layout(const Tensor<T>& x) {
  BnLayout l{};
  if (x.ndim() == 4) {
    l.channels = x.shape()[1];
    l.outer = x.shape()[0];
    l.inner = x.shape()[2] * x.shape()[3];
    l.stat_count = l.outer * l.inner;
    l.channel_last = false;
  } else if (x.ndim() == 3 || x.ndim() == 2) {
    l.channels = x.shape().back();
    l.outer = x.numel() / l.channels;
    l.inner = 1;
    l.stat_count = l.outer;
    l.channel_last = true;
  } else {
    fail(ErrorKind::kDimension, "batch_norm: rank must be 2, 3 or 4");
  }
  return l;
}

}  // namespace detail

// BatchNorm with running statistics. Train mode normalizes with batch
// statistics and updates running stats in place via EMA (running stats are
// buffers, not tape citizens); eval mode is a per-channel affine map.
template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                     BnMode mode, T momentum, T eps) {
  const auto l = detail::bn_layout(x);
  check(gamma.ndim() == 1 && gamma.shape()[0] == l.channels, ErrorKind::kDimension,
        "batch_norm: gamma must be [C]");
  check(beta.ndim() == 1 && beta.shape()[0] == l.channels, ErrorKind::kDimension,
        "batch_norm: beta must be [C]");
  check(running_mean.shape() == gamma.shape() && running_var.shape() == gamma.shape(),
        ErrorKind::kDimension, "batch_norm: running stats must be [C]");
  check(eps > T(0), ErrorKind::kParameter, "batch_norm: eps must be positive");

  const bool train = mode == BnMode::kTrain;
  if (train)
    check(l.stat_count >= 2, ErrorKind::kNumeric,
          "batch_norm: train mode needs >= 2 statistic elements per channel");

  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(l.channels));
  auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(l.channels));

  const T* px = x.data();
  if (train) {
    T* rm = running_mean.data();
    T* rv = running_var.data();
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < l.channels; ++c) {
      T sum = T(0), sq = T(0);
      if (l.channel_last) {
        for (int64_t r = 0; r < l.outer; ++r) {
          const T v = px[r * l.channels + c];
          sum += v;
          sq += v * v;
        }
      } else {
        for (int64_t n = 0; n < l.outer; ++n) {
          const T* p = px + (n * l.channels + c) * l.inner;
          for (int64_t i = 0; i < l.inner; ++i) {
            sum += p[i];
            sq += p[i] * p[i];
          }
        }
      }
      const T m = sum / static_cast<T>(l.stat_count);
      T var = sq / static_cast<T>(l.stat_count) - m * m;
      if (var < T(0)) var = T(0);
      (*mean)[static_cast<size_t>(c)] = m;
      (*invstd)[static_cast<size_t>(c)] = T(1) / std::sqrt(var + eps);
      const T unbiased = var * static_cast<T>(l.stat_count) / static_cast<T>(l.stat_count - 1);
      rm[c] = (T(1) - momentum) * rm[c] + momentum * m;
      rv[c] = (T(1) - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    const T* rm = running_mean.data();
    const T* rv = running_var.data();
    for (int64_t c = 0; c < l.channels; ++c) {
      (*mean)[static_cast<size_t>(c)] = rm[c];
      const T v = rv[c] < T(0) ? T(0) : rv[c];
      (*invstd)[static_cast<size_t>(c)] = T(1) / std::sqrt(v + eps);
    }
  }

  Tensor<T> out(x.shape());
  T* po = out.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  if (l.channel_last) {
    detail::for_each<T>(l.outer, [&](int64_t r) {
      const T* in = px + r * l.channels;
      T* y = po + r * l.channels;
      for (int64_t c = 0; c < l.channels; ++c)
        y[c] = pg[c] * (in[c] - (*mean)[static_cast<size_t>(c)]) * (*invstd)[static_cast<size_t>(c)] + pb[c];
    });
  } else {
#pragma omp parallel for schedule(static) collapse(2)
    for (int64_t n = 0; n < l.outer; ++n)
      for (int64_t c = 0; c < l.channels; ++c) {
        const T* in = px + (n * l.channels + c) * l.inner;
        T* y = po + (n * l.channels + c) * l.inner;
        const T m = (*mean)[static_cast<size_t>(c)];
        const T is = (*invstd)[static_cast<size_t>(c)];
        const T g = pg[c], b = pb[c];
        for (int64_t i = 0; i < l.inner; ++i) y[i] = g * (in[i] - m) * is + b;
      }
  }
  debug_validate(out, "batch_norm");

  if (detail::any_grad(x, gamma, beta)) {
    out.set_requires_grad(true);
    if (tape) {
      Tensor<T> gx = x, gg = gamma, gb = beta, go = out;
      tape->record([gx, gg, gb, go, mean, invstd, l, train]() mutable {
        const T* dy = go.grad();
        const T* px2 = gx.data();
        const T* pg2 = gg.data();
        T* dgamma = gg.requires_grad() ? gg.grad() : nullptr;
        T* dbeta = gb.requires_grad() ? gb.grad() : nullptr;
        T* dx = gx.requires_grad() ? gx.grad() : nullptr;
#pragma omp parallel for schedule(static)
        for (int64_t c = 0; c < l.channels; ++c) {
          const T m = (*mean)[static_cast<size_t>(c)];
          const T is = (*invstd)[static_cast<size_t>(c)];
          T sum_dy = T(0), sum_dy_xhat = T(0);
          auto visit = [&](auto&& fn) {
            if (l.channel_last) {
              for (int64_t r = 0; r < l.outer; ++r) fn(r * l.channels + c);
            } else {
              for (int64_t n = 0; n < l.outer; ++n) {
                const int64_t base = (n * l.channels + c) * l.inner;
                for (int64_t i = 0; i < l.inner; ++i) fn(base + i);
              }
            }
          };
          visit([&](int64_t idx) {
            sum_dy += dy[idx];
            sum_dy_xhat += dy[idx] * (px2[idx] - m) * is;
          });
          if (dgamma) dgamma[c] += sum_dy_xhat;
          if (dbeta) dbeta[c] += sum_dy;
          if (dx) {
            const T g = pg2[c];
            if (train) {
              const T inv_m = T(1) / static_cast<T>(l.stat_count);
              visit([&](int64_t idx) {
                const T xhat = (px2[idx] - m) * is;
                dx[idx] += g * is * (dy[idx] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
              });
            } else {
              visit([&](int64_t idx) { dx[idx] += g * is * dy[idx]; });
            }
          }
        }
      });
    }
  }
  return out;
}

}  // namespace tgda::ops
