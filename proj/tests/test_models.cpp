#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "tgda/models.hpp"

using namespace tgda;
using namespace tgda::models;
using Catch::Approx;

TEST_CASE("lrnet stage resolution schedule at 128") {
  auto cfg = lrnet18_config(100, 128);
  LrNet<float> net(cfg, 1);
  net.mode = Mode::kEval;
  RngStream rng(2);
  TensorF x = TensorF::randn({1, 3, 128, 128}, rng);
  std::vector<Shape> shapes;
  TensorF logits = net.forward_probed(nullptr, x, nullptr, &shapes);
  REQUIRE(logits.shape() == Shape{1, 100});
  // stem + five stages
  REQUIRE(shapes.size() == 6);
  const std::vector<int64_t> want_hw{64, 64, 32, 16, 8, 4};
  for (size_t i = 0; i < shapes.size(); ++i) {
    REQUIRE(shapes[i][2] == want_hw[i]);
    REQUIRE(shapes[i][3] == want_hw[i]);
  }
}

TEST_CASE("lrnet schedule holds for other divisible sizes") {
  auto cfg = lrnet18_config(10, 64);
  LrNet<float> net(cfg, 1);
  net.mode = Mode::kEval;
  RngStream rng(3);
  TensorF x = TensorF::randn({2, 3, 64, 64}, rng);
  std::vector<Shape> shapes;
  net.forward_probed(nullptr, x, nullptr, &shapes);
  const std::vector<int64_t> want_hw{32, 32, 16, 8, 4, 2};
  for (size_t i = 0; i < shapes.size(); ++i) REQUIRE(shapes[i][2] == want_hw[i]);
}

namespace {
// analytic parameter-count formula, layer by layer
int64_t conv_params(int64_t ci, int64_t co, int64_t k, bool bias) {
  return co * ci * k * k + (bias ? co : 0);
}
int64_t bn_params(int64_t c) { return 2 * c; }
int64_t block_params(int64_t ci, int64_t co, bool proj) {
  int64_t p = conv_params(ci, co, 3, false) + bn_params(co) + conv_params(co, co, 3, false) +
              bn_params(co);
  if (proj) p += conv_params(ci, co, 1, false) + bn_params(co);
  return p;
}
}  // namespace

TEST_CASE("lrnet18 parameter count matches the analytic formula") {
  auto cfg = lrnet18_config(100, 128);
  LrNet<float> net(cfg, 1);
  int64_t want = conv_params(3, 32, 7, false) + bn_params(32);
  const std::vector<int64_t> w{32, 64, 128, 256, 512};
  const std::vector<int64_t> b{1, 2, 2, 2, 2};
  int64_t in = 32;
  for (size_t s = 0; s < 5; ++s) {
    for (int64_t i = 0; i < b[s]; ++i) {
      const bool proj = i == 0 && (in != w[s] || (s > 0));
      want += block_params(in, w[s], proj);
      in = w[s];
    }
  }
  want += 512 * 100 + 100;  // classifier
  REQUIRE(count_params(net) == want);
}

TEST_CASE("lrnet18 has fewer parameters than the reference resnet18") {
  LrNet<float> lr(lrnet18_config(100, 128), 1);
  ResNetRef<float> rn(100, 128, 1);
  REQUIRE(count_params(lr) < count_params(rn));
}

TEST_CASE("vitfs_t parameter count lands within 3% of 5.6M") {
  ViTFS<float> vit(vitfs_t_config(100, 64), 1);
  const auto params = static_cast<double>(count_params(vit));
  REQUIRE(params > 5.6e6 * 0.97);
  REQUIRE(params < 5.6e6 * 1.03);
}

TEST_CASE("vitfs has no learned positional or cls parameters") {
  ViTFS<float> vit(vitfs_t_config(10, 64), 1);
  REQUIRE(vit.num_patches() == 16);  // 64/16 grid -> 16 patches (+4 registers = 20 tokens)
  vit.visit_params([](const std::string& name, TensorF&) {
    REQUIRE(name.find("pos") == std::string::npos);
    REQUIRE(name.find("cls") == std::string::npos);
  });
}

TEST_CASE("zero layerscale suppresses every residual branch") {
  auto cfg = vitfs_t_config(10, 64);
  cfg.depth = 2;
  cfg.layerscale_init = 0.0;
  cfg.stochastic_depth_rate = 0.0;
  TransformerBlock<float> block(cfg.embed_dim, cfg.heads, cfg.mlp_ratio, 0.0, 0.0, RngStream(5));
  nn::Ctx<float> ctx{nullptr, Mode::kEval, nullptr};
  RngStream rng(6);
  TensorF x = TensorF::randn({2, 7, cfg.embed_dim}, rng);
  TensorF y = block.forward(ctx, x);
  for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(y.at(i) == x.at(i));
}

TEST_CASE("registers never contribute to pooling (structural)") {
  auto cfg = vitfs_t_config(10, 64);
  cfg.depth = 2;
  cfg.layerscale_init = 0.0;  // blocks act as identity, isolating the pooling path
  cfg.stochastic_depth_rate = 0.0;
  ViTFS<float> a(cfg, 11);
  ViTFS<float> b(cfg, 11);
  b.visit_params([](const std::string& name, TensorF& t) {
    if (name == "registers")
      for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = 1e6f;
  });
  a.mode = Mode::kEval;
  b.mode = Mode::kEval;
  RngStream rng(7);
  TensorF x = TensorF::randn({2, 3, 64, 64}, rng);
  TensorF ya = a.forward(nullptr, x);
  TensorF yb = b.forward(nullptr, x);
  for (int64_t i = 0; i < ya.numel(); ++i) REQUIRE(ya.at(i) == yb.at(i));
}

TEST_CASE("sinusoidal 2d position encoding") {
  SECTION("position zero gives sin=0 cos=1") {
    TensorD pe = sinusoidal_pos_enc_2d<double>(3, 3, 16);
    const int64_t q = 4;
    for (int64_t i = 0; i < q; ++i) {
      REQUIRE(pe.at(i) == 0.0);              // sin(x) at x=0
      REQUIRE(pe.at(q + i) == 1.0);          // cos(x)
      REQUIRE(pe.at(2 * q + i) == 0.0);      // sin(y)
      REQUIRE(pe.at(3 * q + i) == 1.0);      // cos(y)
    }
  }
  SECTION("all entries lie in [-1, 1]") {
    TensorD pe = sinusoidal_pos_enc_2d<double>(5, 7, 32);
    for (int64_t i = 0; i < pe.numel(); ++i) {
      REQUIRE(pe.at(i) <= 1.0);
      REQUIRE(pe.at(i) >= -1.0);
    }
  }
  SECTION("(2,2,8) matches the closed form") {
    TensorD pe = sinusoidal_pos_enc_2d<double>(2, 2, 8);
    const int64_t q = 2;
    for (int64_t y = 0; y < 2; ++y)
      for (int64_t x = 0; x < 2; ++x)
        for (int64_t i = 0; i < q; ++i) {
          const double f = std::pow(10000.0, -static_cast<double>(i) / q);
          const double* row = pe.data() + (y * 2 + x) * 8;
          REQUIRE(row[i] == Approx(std::sin(x * f)).margin(1e-12));
          REQUIRE(row[q + i] == Approx(std::cos(x * f)).margin(1e-12));
          REQUIRE(row[2 * q + i] == Approx(std::sin(y * f)).margin(1e-12));
          REQUIRE(row[3 * q + i] == Approx(std::cos(y * f)).margin(1e-12));
        }
  }
  SECTION("dim not divisible by 4 is a config error") {
    REQUIRE_THROWS_AS(sinusoidal_pos_enc_2d<double>(2, 2, 6), Error);
  }
}

TEST_CASE("residual_branch semantics") {
  RngStream rng(8);
  TensorD x = TensorD::randn({3, 4}, rng);
  TensorD br = TensorD::randn({3, 4}, rng);
  SECTION("drop 0, gamma 1 is a plain residual add") {
    TensorD gamma = TensorD::ones({4});
    TensorD y = residual_branch<double>(nullptr, x, br, gamma, 0.0, Mode::kTrain, &rng);
    for (int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.at(i) == Approx(x.at(i) + br.at(i)));
  }
  SECTION("gamma 0 returns x in both modes") {
    TensorD gamma = TensorD::zeros({4});
    TensorD y1 = residual_branch<double>(nullptr, x, br, gamma, 0.0, Mode::kEval, nullptr);
    TensorD y2 = residual_branch<double>(nullptr, x, br, gamma, 0.5, Mode::kTrain, &rng);
    for (int64_t i = 0; i < y1.numel(); ++i) {
      REQUIRE(y1.at(i) == x.at(i));
      REQUIRE(y2.at(i) == x.at(i));
    }
  }
  SECTION("stochastic depth preserves the expectation") {
    // scalar branch value 1; eval adds gamma*1 = 0.7; train samples b/(1-p)
    TensorD x0 = TensorD::zeros({1, 1});
    TensorD b1 = TensorD::ones({1, 1});
    TensorD gamma = TensorD::full({1}, 0.7);
    const int trials = 100000;
    double mean = 0.0;
    RngStream mc(9);
    for (int i = 0; i < trials; ++i) {
      TensorD y = residual_branch<double>(nullptr, x0, b1, gamma, 0.5, Mode::kTrain, &mc);
      mean += y.at(0);
    }
    mean /= trials;
    REQUIRE(std::abs(mean - 0.7) < 0.01 * 0.7 + 0.01);
  }
}

TEST_CASE("pam head") {
  SECTION("zero parameters yield all-zero maps") {
    PamHead<float> pam(4, 2, RngStream(10));
    pam.visit_params("", [](const std::string& name, TensorF& t) {
      if (name.find("conv.weight") != std::string::npos)
        for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = 0.0f;
    });
    nn::Ctx<float> ctx{nullptr, Mode::kEval, nullptr};
    RngStream rng(11);
    TensorF f = TensorF::randn({2, 4, 3, 3}, rng);
    TensorF maps = pam.forward(ctx, f);
    for (int64_t i = 0; i < maps.numel(); ++i) REQUIRE(maps.at(i) == 0.0f);
  }
  SECTION("single positive channel selection with identity normalization") {
    PamHead<float> pam(3, 1, RngStream(12));
    pam.visit_params("", [](const std::string& name, TensorF& t) {
      if (name.find("conv.weight") != std::string::npos) {
        for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = 0.0f;
        t.at(1) = 1.0f;  // select channel 1
      }
    });
    nn::Ctx<float> ctx{nullptr, Mode::kEval, nullptr};
    RngStream rng(13);
    TensorF f = TensorF::randn({1, 3, 4, 4}, rng);
    TensorF maps = pam.forward(ctx, f);
    for (int64_t i = 0; i < 16; ++i) {
      const float want = std::max(0.0f, f.at(16 + i) / std::sqrt(1.0f + 1e-5f));
      REQUIRE(maps.at(i) == Approx(want).margin(1e-6));
    }
  }
  SECTION("random params equal the explicit relu(bn(conv)) composition") {
    PamHead<float> pam(5, 3, RngStream(14));
    RngStream rng(15);
    TensorF f = TensorF::randn({2, 5, 3, 3}, rng);
    TensorF w, gamma, beta, rm, rv;
    pam.visit_params("", [&](const std::string& name, TensorF& t) {
      if (name.find("conv.weight") != std::string::npos) w = t;
      if (name.find("bn.gamma") != std::string::npos) gamma = t;
      if (name.find("bn.beta") != std::string::npos) beta = t;
    });
    pam.visit_buffers("", [&](const std::string& name, TensorF& t) {
      if (name.find("running_mean") != std::string::npos) rm = t;
      if (name.find("running_var") != std::string::npos) rv = t;
    });
    // randomize bn parameters so the composition is non-trivial
    for (int64_t i = 0; i < 3; ++i) {
      gamma.at(i) = 0.5f + 0.3f * static_cast<float>(i);
      beta.at(i) = -0.1f * static_cast<float>(i);
      rm.at(i) = 0.05f * static_cast<float>(i);
      rv.at(i) = 1.0f + 0.2f * static_cast<float>(i);
    }
    nn::Ctx<float> ctx{nullptr, Mode::kEval, nullptr};
    TensorF got = pam.forward(ctx, f);
    TensorF rm2 = rm.clone_values(), rv2 = rv.clone_values();
    TensorF conv = ops::conv2d<float>(nullptr, f, w, 1, 0);
    TensorF bn = ops::batch_norm<float>(nullptr, conv, gamma, beta, rm2, rv2, ops::BnMode::kEval,
                                        0.1f, 1e-5f);
    TensorF want = ops::relu<float>(nullptr, bn);
    for (int64_t i = 0; i < got.numel(); ++i)
      REQUIRE(got.at(i) == Approx(want.at(i)).margin(1e-6));
  }
}

TEST_CASE("bilinear attention pooling") {
  RngStream rng(16);
  SECTION("uniform single map reduces to global average pooling pre-normalization") {
    TensorF f = TensorF::randn({1, 3, 2, 2}, rng);
    TensorF maps = TensorF::ones({1, 1, 2, 2});
    TensorF got = bilinear_attention_pool<float>(nullptr, f, maps);
    // expected: signed sqrt of the channel means, then L2 normalized
    std::vector<float> v(3);
    float norm = 0;
    for (int64_t c = 0; c < 3; ++c) {
      float m = 0;
      for (int64_t i = 0; i < 4; ++i) m += f.at(c * 4 + i);
      m /= 4.0f;
      v[static_cast<size_t>(c)] = m >= 0 ? std::sqrt(m) : -std::sqrt(-m);
      norm += v[static_cast<size_t>(c)] * v[static_cast<size_t>(c)];
    }
    norm = std::sqrt(norm);
    for (int64_t c = 0; c < 3; ++c)
      REQUIRE(got.at(c) == Approx(v[static_cast<size_t>(c)] / norm).margin(1e-6));
  }
  SECTION("one-hot map picks a single location scaled by 1/(HW)") {
    TensorF f = TensorF::randn({1, 2, 2, 2}, rng);
    TensorF maps = TensorF::zeros({1, 1, 2, 2});
    maps.at(3) = 1.0f;  // location (1,1)
    TensorF got = bilinear_attention_pool<float>(nullptr, f, maps);
    std::vector<float> v(2);
    float norm = 0;
    for (int64_t c = 0; c < 2; ++c) {
      const float m = f.at(c * 4 + 3) / 4.0f;
      v[static_cast<size_t>(c)] = m >= 0 ? std::sqrt(m) : -std::sqrt(-m);
      norm += v[static_cast<size_t>(c)] * v[static_cast<size_t>(c)];
    }
    norm = std::sqrt(norm);
    for (int64_t c = 0; c < 2; ++c)
      REQUIRE(got.at(c) == Approx(v[static_cast<size_t>(c)] / norm).margin(1e-6));
  }
  SECTION("random input matches the nested-loop oracle") {
    TensorF f = TensorF::randn({1, 2, 2, 2}, rng);
    TensorF maps = TensorF::rand_uniform({1, 2, 2, 2}, rng);
    TensorF got = bilinear_attention_pool<float>(nullptr, f, maps);
    TensorF want = oracle::attention_pool_ref(f, maps);
    REQUIRE(got.shape() == want.shape());
    for (int64_t i = 0; i < got.numel(); ++i)
      REQUIRE(got.at(i) == Approx(want.at(i)).margin(1e-6));
  }
  SECTION("all-zero maps produce an exactly zero vector") {
    TensorF f = TensorF::randn({2, 3, 2, 2}, rng);
    TensorF maps = TensorF::zeros({2, 2, 2, 2});
    TensorF got = bilinear_attention_pool<float>(nullptr, f, maps);
    for (int64_t i = 0; i < got.numel(); ++i) REQUIRE(got.at(i) == 0.0f);
  }
}

TEST_CASE("teacher maps are always non-negative") {
  PamTeacher<float> teacher(lrnet18_config(10, 64), false, 8, 21, "teacher_pam_lrnet18");
  teacher.mode = Mode::kEval;
  RngStream rng(22);
  TensorF x = TensorF::randn({2, 3, 64, 64}, rng);
  auto out = teacher.forward_detail(nullptr, x);
  REQUIRE(out.maps.shape() == Shape{2, 8, 2, 2});
  for (int64_t i = 0; i < out.maps.numel(); ++i) REQUIRE(out.maps.at(i) >= 0.0f);
  REQUIRE(out.logits.shape() == Shape{2, 10});
}

TEST_CASE("parameter accounting basics") {
  nn::Linear<float> lin(10, 5, RngStream(23));
  nn::CostAccum acc;
  lin.cost({10}, acc);
  REQUIRE(acc.params == 55);

  nn::Conv2d<float> conv(3, 8, 3, 1, true, RngStream(24));
  nn::CostAccum acc2;
  Shape out = conv.cost({3, 8, 8}, acc2);
  REQUIRE(out == Shape{8, 8, 8});
  REQUIRE(acc2.flops == 2 * (3 * 3 * 3) * 8 * 8 * 8 + 8 * 8 * 8);
}

TEST_CASE("unknown layer kind fails accounting loudly") {
  struct Opaque : nn::Layer<float> {
    std::string kind() const override { return "opaque"; }
    TensorF forward(nn::Ctx<float>&, const TensorF& x) override { return x; }
  };
  Opaque layer;
  nn::CostAccum acc;
  REQUIRE_THROWS_AS(layer.cost({3, 4, 4}, acc), Error);
}

TEST_CASE("same seed builds identical models") {
  LrNet<float> a(lrnet18_config(10, 64), 77);
  LrNet<float> b(lrnet18_config(10, 64), 77);
  REQUIRE(a.param_checksum() == b.param_checksum());
  LrNet<float> c(lrnet18_config(10, 64), 78);
  REQUIRE(a.param_checksum() != c.param_checksum());
}

TEST_CASE("config invariants are enforced") {
  auto bad = lrnet18_config(10, 64);
  bad.stage_strides = {2, 2, 2, 2, 2};  // stem*strides != 32 and stage1 must not downsample
  REQUIRE_THROWS_AS(LrNet<float>(bad, 1), Error);
  auto bad2 = vitfs_t_config(10, 64);
  bad2.embed_dim = 190;  // not divisible by 4
  REQUIRE_THROWS_AS(ViTFS<float>(bad2, 1), Error);
  REQUIRE_THROWS_AS(models::build_model<float>("no_such_arch", 10, 64, 1), Error);
}
