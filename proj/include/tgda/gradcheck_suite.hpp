#pragma once

#include <string>
#include <vector>

#include "tgda/distill.hpp"
#include "tgda/grad_check.hpp"
#include "tgda/rng.hpp"

namespace tgda {

struct GradCheckResult {
  std::string name;
  double max_rel_err;
  bool pass;
};

// Every differentiable primitive plus the losses, checked in f64 against
// central differences. Shapes are small; the whole suite runs in seconds.
inline std::vector<GradCheckResult> run_gradcheck_suite(double tol = 1e-5, uint64_t seed = 7) {
  using Td = Tensor<double>;
  using TapeD = Tape<double>;
  std::vector<GradCheckResult> results;
  RngStream root(seed);

  auto randn = [&](Shape s, double scale = 1.0) {
    RngStream r = root.derive(fnv1a(s.data(), s.size() * sizeof(int64_t)), results.size());
    return Td::randn(std::move(s), r, scale);
  };
  auto run = [&](const std::string& name, std::vector<Td> inputs,
                 std::function<Td(TapeD*, std::vector<Td>&)> closure) {
    const double err = grad_check(closure, std::move(inputs));
    results.push_back({name, err, err < tol});
  };

  // elementwise / unary
  run("add", {randn({3, 4}), randn({3, 4})}, [](TapeD* t, std::vector<Td>& in) {
    return ops::sum_all(t, ops::add(t, in[0], in[1]));
  });
  run("sub", {randn({3, 4}), randn({3, 4})}, [](TapeD* t, std::vector<Td>& in) {
    return ops::sum_all(t, ops::mul(t, ops::sub(t, in[0], in[1]), in[1]));
  });
  run("mul", {randn({5, 3}), randn({5, 3})}, [](TapeD* t, std::vector<Td>& in) {
    return ops::sum_all(t, ops::mul(t, in[0], in[1]));
  });
  run("affine_scalar", {randn({4, 4})}, [](TapeD* t, std::vector<Td>& in) {
    return ops::mean_all(t, ops::affine_scalar(t, in[0], 2.5, -0.75));
  });
  run("relu", {randn({6, 5})}, [](TapeD* t, std::vector<Td>& in) {
    return ops::sum_all(t, ops::relu(t, in[0]));
  });
  run("gelu", {randn({6, 5})}, [](TapeD* t, std::vector<Td>& in) {
    return ops::sum_all(t, ops::gelu(t, in[0]));
  });
  {
    RngStream r = root.derive(101);
    Td pos = Td::rand_uniform({4, 4}, r, 0.5, 3.0);
    run("log", {pos}, [](TapeD* t, std::vector<Td>& in) {
      return ops::sum_all(t, ops::log_e(t, in[0]));
    });
    Td pos2 = Td::rand_uniform({4, 4}, r, 0.5, 3.0);
    run("sqrt", {pos2}, [](TapeD* t, std::vector<Td>& in) {
      return ops::sum_all(t, ops::sqrt_op(t, in[0]));
    });
    // signed_sqrt is non-smooth at 0; sample away from it
    Td away = Td::rand_uniform({4, 4}, r, 0.3, 2.0);
    for (int64_t i = 0; i < away.numel(); ++i)
      if (i % 2) away.at(i) = -away.at(i);
    run("signed_sqrt", {away}, [](TapeD* t, std::vector<Td>& in) {
      return ops::sum_all(t, ops::signed_sqrt(t, in[0]));
    });
  }
  run("sum", {randn({7})}, [](TapeD* t, std::vector<Td>& in) { return ops::sum_all(t, in[0]); });
  run("mean", {randn({3, 5})}, [](TapeD* t, std::vector<Td>& in) {
    return ops::mean_all(t, in[0]);
  });

  // softmax family
  run("softmax_temperature", {randn({4, 6})}, [](TapeD* t, std::vector<Td>& in) {
    Td probs = ops::softmax_temperature(t, in[0], 3.0);
    Td sq = ops::mul(t, probs, probs);
    return ops::sum_all(t, sq);
  });
  run("log_softmax", {randn({4, 6})}, [](TapeD* t, std::vector<Td>& in) {
    Td ls = ops::log_softmax(t, in[0]);
    Td sq = ops::mul(t, ls, ls);
    return ops::mean_all(t, sq);
  });

  // shape ops
  run("reshape_permute", {randn({2, 3, 4})}, [](TapeD* t, std::vector<Td>& in) {
    Td p = ops::permute(t, in[0], {2, 0, 1});
    Td r = ops::reshape(t, p, {4, 6});
    Td sq = ops::mul(t, r, r);
    return ops::sum_all(t, sq);
  });
  run("concat_slice", {randn({2, 3}), randn({2, 2})}, [](TapeD* t, std::vector<Td>& in) {
    Td c = ops::concat2(t, in[0], in[1], 1);
    Td s = ops::slice(t, c, 1, 1, 3);
    Td sq = ops::mul(t, s, s);
    return ops::sum_all(t, sq);
  });
  run("expand_rows", {randn({3, 4})}, [](TapeD* t, std::vector<Td>& in) {
    Td e = ops::expand_rows(t, in[0], 5);
    Td sq = ops::mul(t, e, e);
    return ops::sum_all(t, sq);
  });
  run("add_rows", {randn({2, 3, 4}), randn({3, 4})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::add_rows(t, in[0], in[1]);
    Td sq = ops::mul(t, y, y);
    return ops::sum_all(t, sq);
  });
  run("scale_channels", {randn({2, 3, 4}), randn({4})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::scale_channels(t, in[0], in[1]);
    Td sq = ops::mul(t, y, y);
    return ops::sum_all(t, sq);
  });
  run("scale_rows", {randn({3, 4})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::scale_rows(t, in[0], {0.5, 2.0, 1.25});
    Td sq = ops::mul(t, y, y);
    return ops::sum_all(t, sq);
  });
  run("l2_normalize_rows", {randn({3, 5})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::l2_normalize_rows(t, in[0]);
    Td w = ops::affine_scalar(t, y, 1.0, 0.3);
    Td sq = ops::mul(t, w, w);
    return ops::sum_all(t, sq);
  });
  run("token_mean", {randn({2, 5, 3})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::token_mean(t, in[0], 1, 3);
    Td sq = ops::mul(t, y, y);
    return ops::sum_all(t, sq);
  });

  // matmul family
  run("matmul", {randn({3, 4}), randn({4, 5})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::matmul(t, in[0], in[1]);
    Td sq = ops::mul(t, y, y);
    return ops::sum_all(t, sq);
  });
  run("linear", {randn({3, 4}), randn({5, 4}), randn({5})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::linear(t, in[0], in[1], in[2]);
    Td sq = ops::mul(t, y, y);
    return ops::sum_all(t, sq);
  });
  run("bmm", {randn({2, 3, 4}), randn({2, 4, 5})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::bmm(t, in[0], in[1]);
    Td sq = ops::mul(t, y, y);
    return ops::sum_all(t, sq);
  });

  // conv / pool / resize
  run("conv2d", {randn({2, 3, 5, 5}), randn({4, 3, 3, 3}), randn({4})},
      [](TapeD* t, std::vector<Td>& in) {
        Td y = ops::conv2d(t, in[0], in[1], in[2], 2, 1);
        Td sq = ops::mul(t, y, y);
        return ops::sum_all(t, sq);
      });
  run("conv2d_sum", {randn({1, 2, 4, 4}), randn({3, 2, 3, 3})},
      [](TapeD* t, std::vector<Td>& in) {
        return ops::sum_all(t, ops::conv2d(t, in[0], in[1], 1, 0));
      });
  run("zero_pad2d", {randn({2, 2, 3, 3})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::zero_pad2d(t, in[0], 0, 1, 0, 1);
    Td sq = ops::mul(t, y, y);
    return ops::sum_all(t, sq);
  });
  run("max_pool2d", {randn({2, 3, 6, 6})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::max_pool2d(t, in[0], 2, 2);
    Td sq = ops::mul(t, y, y);
    return ops::sum_all(t, sq);
  });
  run("gap2d", {randn({2, 3, 4, 4})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::gap2d(t, in[0]);
    Td sq = ops::mul(t, y, y);
    return ops::sum_all(t, sq);
  });
  run("bilinear_resize", {randn({1, 2, 3, 3})}, [](TapeD* t, std::vector<Td>& in) {
    Td y = ops::bilinear_resize(t, in[0], 5, 7);
    Td sq = ops::mul(t, y, y);
    return ops::sum_all(t, sq);
  });

  // batch_norm, both layouts and both modes
  {
    auto bn_closure = [](ops::BnMode mode) {
      return [mode](TapeD* t, std::vector<Td>& in) {
        Td rm(Shape{3}, std::vector<double>{0.1, -0.2, 0.3});
        Td rv(Shape{3}, std::vector<double>{1.1, 0.9, 1.3});
        Td y = ops::batch_norm(t, in[0], in[1], in[2], rm, rv, mode, 0.1, 1e-5);
        Td sq = ops::mul(t, y, y);
        return ops::sum_all(t, sq);
      };
    };
    run("batch_norm_nchw_train", {randn({2, 3, 4, 4}), randn({3}), randn({3})},
        bn_closure(ops::BnMode::kTrain));
    run("batch_norm_nchw_eval", {randn({2, 3, 4, 4}), randn({3}), randn({3})},
        bn_closure(ops::BnMode::kEval));
    run("batch_norm_tokens_train", {randn({2, 5, 3}), randn({3}), randn({3})},
        bn_closure(ops::BnMode::kTrain));
    run("batch_norm_rows_train", {randn({6, 3}), randn({3}), randn({3})},
        bn_closure(ops::BnMode::kTrain));
  }

  // losses
  {
    std::vector<int> labels{1, 0, 3};
    run("ce_label_smoothing", {randn({3, 4}, 2.0)}, [labels](TapeD* t, std::vector<Td>& in) {
      return distill::ce_label_smoothing(t, in[0], labels, 0.1);
    });
    Td teacher = randn({3, 4}, 2.0);
    run("kd_loss_tau1", {randn({3, 4}, 2.0)}, [teacher](TapeD* t, std::vector<Td>& in) {
      return distill::kd_loss(t, in[0], teacher, 1.0);
    });
    run("kd_loss_tau7", {randn({3, 4}, 2.0)}, [teacher](TapeD* t, std::vector<Td>& in) {
      return distill::kd_loss(t, in[0], teacher, 7.0);
    });
    Td t_org = randn({3, 4}, 2.0);
    Td t_aug = randn({3, 4}, 2.0);
    run("tgda_total_loss", {randn({3, 4}, 2.0), randn({3, 4}, 2.0)},
        [labels, t_org, t_aug](TapeD* t, std::vector<Td>& in) {
          distill::LossWeights w;
          w.alpha = 1.0;
          w.beta = 10.0;
          w.tau = 7.0;
          w.label_smoothing_eps = 0.1;
          return distill::tgda_total_loss(t, in[0], in[1], t_org, t_aug, labels, w).total;
        });
  }

  return results;
}

}  // namespace tgda
