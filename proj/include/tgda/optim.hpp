#pragma once

#include "tgda/models.hpp"

namespace tgda::optim {

// Cosine decay with linear warmup (AdamW recipe) or step decay at 60%/80%
// (SGD recipe). Rates are computed per optimizer step.
struct Schedule {
  enum class Kind { kCosine, kStep } kind = Kind::kCosine;
  double base_lr = 1e-3;
  int64_t warmup_steps = 0;
  int64_t total_steps = 1;

  double lr_at(int64_t step) const {
    if (warmup_steps > 0 && step < warmup_steps)
      return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    if (kind == Kind::kCosine) {
      const double t = static_cast<double>(step - warmup_steps) /
                       static_cast<double>(std::max<int64_t>(1, total_steps - warmup_steps));
      return 0.5 * base_lr * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, t)));
    }
    const double frac = static_cast<double>(step) / static_cast<double>(std::max<int64_t>(1, total_steps));
    if (frac >= 0.8) return base_lr * 0.01;
    if (frac >= 0.6) return base_lr * 0.1;
    return base_lr;
  }
};

// Decoupled weight decay; decay applies to rank>=2 tensors only (kernels and
// projection matrices, not biases/norm affines).
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.05)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  template <typename T>
  void step(models::Model<T>& model, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    size_t slot = 0;
    model.visit_params([&](const std::string&, Tensor<T>& p) {
      if (slot >= m_.size()) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
      }
      auto& m = m_[slot];
      auto& v = v_[slot];
      ++slot;
      if (!p.has_grad()) return;
      const T* g = p.grad();
      T* w = p.data();
      const bool decay = p.ndim() >= 2;
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[static_cast<size_t>(i)] = beta1_ * m[static_cast<size_t>(i)] + (1.0 - beta1_) * gi;
        v[static_cast<size_t>(i)] = beta2_ * v[static_cast<size_t>(i)] + (1.0 - beta2_) * gi * gi;
        const double mhat = m[static_cast<size_t>(i)] / bc1;
        const double vhat = v[static_cast<size_t>(i)] / bc2;
        double upd = mhat / (std::sqrt(vhat) + eps_);
        if (decay) upd += weight_decay_ * static_cast<double>(w[i]);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * upd);
      }
    });
  }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

class Sgd {
 public:
  Sgd(double momentum = 0.9, double weight_decay = 5e-4)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  template <typename T>
  void step(models::Model<T>& model, double lr) {
    size_t slot = 0;
    model.visit_params([&](const std::string&, Tensor<T>& p) {
      if (slot >= vel_.size()) vel_.emplace_back(p.numel(), 0.0);
      auto& v = vel_[slot];
      ++slot;
      if (!p.has_grad()) return;
      const T* g = p.grad();
      T* w = p.data();
      const bool decay = p.ndim() >= 2;
      for (int64_t i = 0; i < p.numel(); ++i) {
        double gi = static_cast<double>(g[i]);
        if (decay) gi += weight_decay_ * static_cast<double>(w[i]);
        v[static_cast<size_t>(i)] = momentum_ * v[static_cast<size_t>(i)] + gi;
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * v[static_cast<size_t>(i)]);
      }
    });
  }

 private:
  double momentum_, weight_decay_;
  std::vector<std::vector<double>> vel_;
};

}  // namespace tgda::optim
