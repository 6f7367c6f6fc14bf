#pragma once

#include <vector>

#include "tgda/ops.hpp"

namespace tgda::distill {

struct LossWeights {
  double alpha = 1.0;
  double beta = 10.0;
  double tau = 7.0;
  double label_smoothing_eps = 0.1;
  bool kd_tau_squared = true;  // scale KD by tau^2 (standard formulation)

  void validate() const {
    check(alpha >= 0.0 && beta >= 0.0, ErrorKind::kConfig, "loss weights must be non-negative");
    check(alpha + beta > 0.0, ErrorKind::kConfig, "alpha + beta must be positive");
    check(tau > 0.0, ErrorKind::kParameter, "tau must be positive");
    check(label_smoothing_eps >= 0.0 && label_smoothing_eps < 1.0, ErrorKind::kConfig,
          "label smoothing eps must lie in [0, 1)");
  }
};

// Smoothed cross-entropy: target = (1-eps)*onehot + eps/C, averaged over the
// batch. Differentiable w.r.t. logits.
template <typename T>
Tensor<T> ce_label_smoothing(Tape<T>* tape, const Tensor<T>& logits, const std::vector<int>& labels,
                             T eps) {
  check(logits.ndim() == 2, ErrorKind::kDimension, "ce_label_smoothing: logits must be [N, C]");
  const int64_t n = logits.shape()[0], c = logits.shape()[1];
  check(static_cast<int64_t>(labels.size()) == n, ErrorKind::kDimension,
        "ce_label_smoothing: label count mismatch");
  check(eps >= T(0) && eps < T(1), ErrorKind::kParameter, "ce_label_smoothing: eps in [0,1)");
  Tensor<T> target(Shape{n, c}, eps / static_cast<T>(c));
  for (int64_t i = 0; i < n; ++i) {
    const int lbl = labels[static_cast<size_t>(i)];
    check(lbl >= 0 && lbl < c, ErrorKind::kDimension,
          "ce_label_smoothing: label " + std::to_string(lbl) + " out of range [0," +
              std::to_string(c) + ")");
    target.at(i * c + lbl) += T(1) - eps;
  }
  Tensor<T> ls = ops::log_softmax(tape, logits);
  Tensor<T> weighted = ops::mul(tape, ls, target);
  Tensor<T> s = ops::sum_all(tape, weighted);
  return ops::affine_scalar(tape, s, -T(1) / static_cast<T>(n));
}

// tau^2 * mean_batch KL( softmax(teacher/tau) || softmax(student/tau) ).
// Teacher logits are constants: no gradient path exists toward them.
template <typename T>
Tensor<T> kd_loss(Tape<T>* tape, const Tensor<T>& student_logits, const Tensor<T>& teacher_logits,
                  T tau, bool tau_squared = true) {
  check(tau > T(0), ErrorKind::kParameter, "kd_loss: tau must be positive");
  check(student_logits.ndim() == 2 && student_logits.same_shape(teacher_logits),
        ErrorKind::kDimension, "kd_loss: logit shapes must match [N, C]");
  const int64_t n = student_logits.shape()[0], c = student_logits.shape()[1];

  // teacher side: plain values, off-tape
  Tensor<T> teacher_const = teacher_logits.clone_values();
  Tensor<T> p_t = ops::softmax_temperature<T>(nullptr, teacher_const, tau);
  T entropy_term = T(0);  // sum over rows of sum_j p_t log p_t
  for (int64_t i = 0; i < n * c; ++i) {
    const T p = p_t.at(i);
    if (p > T(0)) entropy_term += p * std::log(p);
  }

  Tensor<T> scaled = ops::affine_scalar(tape, student_logits, T(1) / tau);
  Tensor<T> ls = ops::log_softmax(tape, scaled);
  Tensor<T> cross = ops::mul(tape, ls, p_t);
  Tensor<T> s = ops::sum_all(tape, cross);
  const T w = (tau_squared ? tau * tau : T(1)) / static_cast<T>(n);
  // KL = entropy_term - cross, averaged and scaled
  return ops::affine_scalar(tape, s, -w, w * entropy_term);
}

template <typename T>
struct TotalLoss {
  Tensor<T> total;
  double ce = 0.0;
  double kd_org = 0.0;
  double kd_aug = 0.0;
};

// L = alpha * CE(student_org, labels) + beta * [KD(org pair) + KD(aug pair)].
// CE supervision applies to original images only.
template <typename T>
TotalLoss<T> tgda_total_loss(Tape<T>* tape, const Tensor<T>& student_logits_org,
                             const Tensor<T>& student_logits_aug,
                             const Tensor<T>& teacher_logits_org,
                             const Tensor<T>& teacher_logits_aug, const std::vector<int>& labels,
                             const LossWeights& w) {
  w.validate();
  check(student_logits_org.same_shape(student_logits_aug) &&
            student_logits_org.same_shape(teacher_logits_org) &&
            student_logits_org.same_shape(teacher_logits_aug),
        ErrorKind::kDimension, "tgda_total_loss: all logits must share [N, C]");
  TotalLoss<T> out;
  Tensor<T> ce = ce_label_smoothing(tape, student_logits_org, labels,
                                    static_cast<T>(w.label_smoothing_eps));
  Tensor<T> kd_o = kd_loss(tape, student_logits_org, teacher_logits_org, static_cast<T>(w.tau),
                           w.kd_tau_squared);
  Tensor<T> kd_a = kd_loss(tape, student_logits_aug, teacher_logits_aug, static_cast<T>(w.tau),
                           w.kd_tau_squared);
  out.ce = static_cast<double>(ce.at(0));
  out.kd_org = static_cast<double>(kd_o.at(0));
  out.kd_aug = static_cast<double>(kd_a.at(0));
  Tensor<T> kd_sum = ops::add(tape, kd_o, kd_a);
  Tensor<T> lhs = ops::affine_scalar(tape, ce, static_cast<T>(w.alpha));
  Tensor<T> rhs = ops::affine_scalar(tape, kd_sum, static_cast<T>(w.beta));
  out.total = ops::add(tape, lhs, rhs);
  return out;
}

}  // namespace tgda::distill
