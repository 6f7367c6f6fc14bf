#pragma once

#include <functional>

#include "tgda/ops.hpp"

namespace tgda {

// Central-difference gradient verification. The closure maps the given inputs
// to a scalar; it is invoked once per recording with a fresh tape and twice
// per element for the numeric estimate. f64 inputs with eps ~1e-5 keep the
// difference noise below the 1e-5 gate.
//
// Returns max over all elements of |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double grad_check(
    const std::function<Tensor<double>(Tape<double>*, std::vector<Tensor<double>>&)>& closure,
    std::vector<Tensor<double>> inputs, double eps = 1e-5) {
  for (auto& t : inputs) t.set_requires_grad(true);

  Tape<double> tape;
  Tensor<double> loss = closure(&tape, inputs);
  check(loss.numel() == 1, ErrorKind::kContract, "grad_check: closure must return a scalar");
  tape.backward(loss);

  double max_rel = 0.0;
  for (auto& t : inputs) {
    const double* analytic = t.grad();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double saved = t.at(i);
      t.at(i) = saved + eps;
      const double f_plus = closure(nullptr, inputs).at(0);
      t.at(i) = saved - eps;
      const double f_minus = closure(nullptr, inputs).at(0);
      t.at(i) = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace tgda
