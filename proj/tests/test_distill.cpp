#include <catch2/catch_amalgamated.hpp>

#include "tgda/distill.hpp"

using namespace tgda;
using namespace tgda::distill;
using Catch::Approx;

TEST_CASE("cross entropy with label smoothing") {
  SECTION("uniform logits, eps 0: loss is ln C") {
    TensorD logits(Shape{3, 7}, 0.42);
    TensorD loss = ce_label_smoothing<double>(nullptr, logits, {0, 3, 6}, 0.0);
    REQUIRE(loss.at(0) == Approx(std::log(7.0)).margin(1e-12));
  }
  SECTION("confident correct prediction drives the loss to zero") {
    TensorD logits = TensorD::zeros({2, 4});
    logits.at(0 * 4 + 1) = 1e6;
    logits.at(1 * 4 + 2) = 1e6;
    TensorD loss = ce_label_smoothing<double>(nullptr, logits, {1, 2}, 0.0);
    REQUIRE(loss.at(0) < 1e-9);
  }
  SECTION("eps 0.1, C=4, logits [1,2,3,4], label 2 matches the scalar oracle") {
    TensorD logits(Shape{1, 4}, std::vector<double>{1, 2, 3, 4});
    TensorD loss = ce_label_smoothing<double>(nullptr, logits, {2}, 0.1);
    // oracle: target = 0.9*onehot(2) + 0.025; loss = -sum target*log_softmax
    double lse = 0;
    for (double v : {1.0, 2.0, 3.0, 4.0}) lse += std::exp(v - 4.0);
    lse = 4.0 + std::log(lse);
    double want = 0;
    const double logits_arr[4] = {1, 2, 3, 4};
    for (int j = 0; j < 4; ++j) {
      const double target = (j == 2 ? 0.9 : 0.0) + 0.1 / 4.0;
      want -= target * (logits_arr[j] - lse);
    }
    REQUIRE(loss.at(0) == Approx(want).margin(1e-12));
  }
  SECTION("out-of-range label is an error") {
    TensorD logits = TensorD::zeros({1, 4});
    REQUIRE_THROWS_AS(ce_label_smoothing<double>(nullptr, logits, {4}, 0.0), Error);
  }
}

TEST_CASE("kd loss") {
  RngStream rng(1);
  SECTION("identical logits give zero for any tau") {
    for (double tau : {1.0, 4.0, 7.0}) {
      for (int rep = 0; rep < 100; ++rep) {
        TensorD x = TensorD::randn({2, 6}, rng, 3.0);
        TensorD loss = kd_loss<double>(nullptr, x, x, tau);
        REQUIRE(std::abs(loss.at(0)) < 1e-9);
      }
    }
  }
  SECTION("per-row constant shifts leave the loss at zero") {
    TensorD t = TensorD::randn({3, 5}, rng, 2.0);
    TensorD s = t.clone_values();
    for (int64_t r = 0; r < 3; ++r)
      for (int64_t j = 0; j < 5; ++j) s.at(r * 5 + j) += 10.0 * static_cast<double>(r + 1);
    TensorD loss = kd_loss<double>(nullptr, s, t, 3.0);
    REQUIRE(std::abs(loss.at(0)) < 1e-9);
  }
  SECTION("worked example: teacher [0, ln3], student [0,0], tau 1") {
    TensorD teacher(Shape{1, 2}, std::vector<double>{0.0, std::log(3.0)});
    TensorD student = TensorD::zeros({1, 2});
    TensorD loss = kd_loss<double>(nullptr, student, teacher, 1.0);
    const double want = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
    REQUIRE(loss.at(0) == Approx(want).margin(1e-12));
    REQUIRE(loss.at(0) == Approx(0.1308).margin(1e-3));
  }
  SECTION("kd is non-negative on random pairs") {
    for (int rep = 0; rep < 200; ++rep) {
      TensorD s = TensorD::randn({2, 4}, rng, 2.0);
      TensorD t = TensorD::randn({2, 4}, rng, 2.0);
      TensorD loss = kd_loss<double>(nullptr, s, t, 7.0);
      REQUIRE(loss.at(0) > -1e-12);
    }
  }
  SECTION("tau^2 scaling toggle") {
    TensorD s = TensorD::randn({2, 4}, rng);
    TensorD t = TensorD::randn({2, 4}, rng);
    TensorD a = kd_loss<double>(nullptr, s, t, 2.0, true);
    TensorD b = kd_loss<double>(nullptr, s, t, 2.0, false);
    REQUIRE(a.at(0) == Approx(4.0 * b.at(0)).margin(1e-12));
  }
  SECTION("tau <= 0 is a parameter error") {
    TensorD x = TensorD::zeros({1, 2});
    REQUIRE_THROWS_AS(kd_loss<double>(nullptr, x, x, 0.0), Error);
  }
}

TEST_CASE("tgda total loss") {
  RngStream rng(2);
  TensorD s_org = TensorD::randn({3, 5}, rng, 2.0);
  TensorD s_aug = TensorD::randn({3, 5}, rng, 2.0);
  TensorD t_org = TensorD::randn({3, 5}, rng, 2.0);
  TensorD t_aug = TensorD::randn({3, 5}, rng, 2.0);
  const std::vector<int> labels{0, 2, 4};

  SECTION("beta 0 reduces to the pure CE term") {
    LossWeights w;
    w.alpha = 1.0;
    w.beta = 0.0;
    w.label_smoothing_eps = 0.1;
    auto out = tgda_total_loss<double>(nullptr, s_org, s_aug, t_org, t_aug, labels, w);
    TensorD ce = ce_label_smoothing<double>(nullptr, s_org, labels, 0.1);
    REQUIRE(out.total.at(0) == Approx(ce.at(0)).margin(1e-12));
  }
  SECTION("alpha 0 with a perfectly mimicking student gives zero") {
    LossWeights w;
    w.alpha = 0.0;
    w.beta = 10.0;
    auto out = tgda_total_loss<double>(nullptr, t_org, t_aug, t_org, t_aug, labels, w);
    REQUIRE(std::abs(out.total.at(0)) < 1e-9);
  }
  SECTION("total equals the weighted sum of component oracles") {
    LossWeights w;
    w.alpha = 1.0;
    w.beta = 10.0;
    w.tau = 7.0;
    w.label_smoothing_eps = 0.1;
    auto out = tgda_total_loss<double>(nullptr, s_org, s_aug, t_org, t_aug, labels, w);
    TensorD ce = ce_label_smoothing<double>(nullptr, s_org, labels, 0.1);
    TensorD kd_o = kd_loss<double>(nullptr, s_org, t_org, 7.0);
    TensorD kd_a = kd_loss<double>(nullptr, s_aug, t_aug, 7.0);
    const double want = 1.0 * ce.at(0) + 10.0 * (kd_o.at(0) + kd_a.at(0));
    REQUIRE(out.total.at(0) == Approx(want).margin(1e-9));
    REQUIRE(out.ce == Approx(ce.at(0)));
    REQUIRE(out.kd_org == Approx(kd_o.at(0)));
    REQUIRE(out.kd_aug == Approx(kd_a.at(0)));
  }
  SECTION("loss is linear in (alpha, beta)") {
    LossWeights w1, w2;
    w1.alpha = 0.7;
    w1.beta = 3.0;
    w2.alpha = 1.4;
    w2.beta = 6.0;
    auto a = tgda_total_loss<double>(nullptr, s_org, s_aug, t_org, t_aug, labels, w1);
    auto b = tgda_total_loss<double>(nullptr, s_org, s_aug, t_org, t_aug, labels, w2);
    REQUIRE(b.total.at(0) == Approx(2.0 * a.total.at(0)).margin(1e-9));
  }
  SECTION("weights must satisfy alpha + beta > 0") {
    LossWeights w;
    w.alpha = 0.0;
    w.beta = 0.0;
    REQUIRE_THROWS_AS(tgda_total_loss<double>(nullptr, s_org, s_aug, t_org, t_aug, labels, w),
                      Error);
  }
}
