#pragma once

#include "tgda/models.hpp"

namespace tgda::fold {

struct FoldReport {
  double max_abs_logit_dev = 0.0;
  int64_t norm_ops_before = 0;
  int64_t norm_ops_after = 0;
  int64_t flops_before = 0;
  int64_t flops_after = 0;
};

// Builds the preset twice with identical seeds, drives both through a few
// train-mode batches so the BN running statistics are non-trivial, folds one
// copy, and compares eval-mode logits on fresh random inputs.
template <typename T>
FoldReport fold_check(const std::string& preset, int64_t classes, int64_t input_size,
                      uint64_t seed, int warm_batches = 3, int64_t eval_inputs = 64) {
  auto reference = models::build_model<T>(preset, classes, input_size, seed);
  auto folded = models::build_model<T>(preset, classes, input_size, seed);

  const Shape batch_shape{4, 3, input_size, input_size};
  for (int b = 0; b < warm_batches; ++b) {
    RngStream data_rng(seed + 1000 + static_cast<uint64_t>(b));
    Tensor<T> x = Tensor<T>::randn(batch_shape, data_rng, T(0.5));
    RngStream sd1(seed + 2000 + static_cast<uint64_t>(b));
    RngStream sd2 = sd1;
    reference->mode = models::Mode::kTrain;
    folded->mode = models::Mode::kTrain;
    reference->forward(nullptr, x, &sd1);
    folded->forward(nullptr, x, &sd2);
  }

  const Shape probe_shape{1, 3, input_size, input_size};
  FoldReport rep;
  rep.norm_ops_before = reference->cost(probe_shape).norm_ops;
  rep.flops_before = reference->cost(probe_shape).flops;

  folded->fold_batchnorm();
  rep.norm_ops_after = folded->cost(probe_shape).norm_ops;
  rep.flops_after = folded->cost(probe_shape).flops;

  reference->mode = models::Mode::kEval;
  folded->mode = models::Mode::kEval;
  RngStream probe_rng(seed + 31337);
  for (int64_t i = 0; i < eval_inputs; ++i) {
    Tensor<T> x = Tensor<T>::randn(probe_shape, probe_rng, T(0.5));
    Tensor<T> a = reference->forward(nullptr, x);
    Tensor<T> b = folded->forward(nullptr, x);
    for (int64_t j = 0; j < a.numel(); ++j)
      rep.max_abs_logit_dev =
          std::max(rep.max_abs_logit_dev, std::abs(static_cast<double>(a.at(j) - b.at(j))));
  }
  return rep;
}

}  // namespace tgda::fold
