#include <catch2/catch_amalgamated.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "oracles.hpp"
#include "tgda/ops.hpp"

using namespace tgda;
using Catch::Approx;

namespace {
RngStream test_rng(uint64_t tag) { return RngStream(0x5eed0000 + tag); }
}  // namespace

TEST_CASE("conv2d scalar scaling kernel") {
  TensorD x(Shape{1, 1, 3, 3}, 1.0);
  TensorD w(Shape{1, 1, 1, 1}, std::vector<double>{2.0});
  TensorD y = ops::conv2d<double>(nullptr, x, w, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  for (int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.at(i) == Approx(2.0));
}

TEST_CASE("conv2d identity-center kernel preserves input") {
  auto rng = test_rng(1);
  TensorD x = TensorD::randn({2, 3, 5, 5}, rng);
  TensorD w = TensorD::zeros({3, 3, 3, 3});
  for (int64_t o = 0; o < 3; ++o) w.at(((o * 3 + o) * 3 + 1) * 3 + 1) = 1.0;
  TensorD y = ops::conv2d<double>(nullptr, x, w, 1, 1);
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.at(i) == Approx(x.at(i)).margin(1e-12));
}

TEST_CASE("conv2d matches six-loop oracle") {
  auto rng = test_rng(2);
  TensorD x = TensorD::randn({2, 3, 5, 5}, rng);
  TensorD w = TensorD::randn({4, 3, 3, 3}, rng);
  TensorD b = TensorD::randn({4}, rng);
  TensorD got = ops::conv2d<double>(nullptr, x, w, b, 2, 1);
  TensorD want = oracle::conv2d_ref(x, w, b.vec(), 2, 1);
  REQUIRE(got.shape() == want.shape());
  for (int64_t i = 0; i < got.numel(); ++i)
    REQUIRE(std::abs(got.at(i) - want.at(i)) < 1e-6);
}

TEST_CASE("conv2d error paths") {
  TensorD x(Shape{1, 3, 5, 5}, 1.0);
  TensorD w_badchan(Shape{2, 4, 3, 3}, 1.0);
  REQUIRE_THROWS_AS(ops::conv2d<double>(nullptr, x, w_badchan, 1, 0), Error);
  TensorD w(Shape{2, 3, 3, 3}, 1.0);
  // (5 - 3) % 2 == 0 is fine; (5 + 2 - 3) % 2 == 0 fine; pick a bad one
  REQUIRE_THROWS_MATCHES(ops::conv2d<double>(nullptr, x, w, 3, 0), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.kind() == ErrorKind::kGeometry;
                         }));
}

TEST_CASE("batch_norm standardized input passes through") {
  // per-channel zero mean unit variance input, gamma=1 beta=0
  const int64_t n = 4, c = 2, h = 3, w = 3;
  TensorD x(Shape{n, c, h, w});
  auto rng = test_rng(3);
  for (int64_t ch = 0; ch < c; ++ch) {
    std::vector<double> vals;
    for (int64_t i = 0; i < n * h * w; ++i) vals.push_back(rng.normal());
    double mean = 0, var = 0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(vals.size());
    const double is = 1.0 / std::sqrt(var);
    size_t idx = 0;
    for (int64_t in = 0; in < n; ++in)
      for (int64_t i = 0; i < h * w; ++i)
        x.at((in * c + ch) * h * w + i) = (vals[idx++] - mean) * is;
  }
  TensorD gamma(Shape{c}, 1.0), beta(Shape{c}, 0.0);
  TensorD rm(Shape{c}, 0.0), rv(Shape{c}, 1.0);
  TensorD y = ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, ops::BnMode::kTrain, 0.1,
                                      1e-5);
  for (int64_t i = 0; i < y.numel(); ++i)
    REQUIRE(std::abs(y.at(i) - x.at(i)) < 1e-4);  // eps-induced shrink only
}

TEST_CASE("batch_norm eval closed form") {
  TensorD x(Shape{1, 1}, std::vector<double>{5.0});
  TensorD gamma(Shape{1}, std::vector<double>{2.0});
  TensorD beta(Shape{1}, std::vector<double>{3.0});
  TensorD rm(Shape{1}, std::vector<double>{1.0});
  TensorD rv(Shape{1}, std::vector<double>{4.0});
  TensorD y =
      ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, ops::BnMode::kEval, 0.1, 1e-5);
  REQUIRE(y.at(0) == Approx(7.0).margin(1e-4));
}

TEST_CASE("batch_norm eval is affine: collinear inputs stay collinear") {
  auto rng = test_rng(4);
  TensorD x1 = TensorD::randn({2, 3, 4, 4}, rng);
  TensorD x3 = TensorD::randn({2, 3, 4, 4}, rng);
  TensorD x2(x1.shape());
  for (int64_t i = 0; i < x1.numel(); ++i) x2.at(i) = 0.5 * (x1.at(i) + x3.at(i));
  TensorD gamma = TensorD::randn({3}, rng);
  TensorD beta = TensorD::randn({3}, rng);
  TensorD rm = TensorD::randn({3}, rng);
  TensorD rv(Shape{3}, std::vector<double>{0.5, 1.5, 2.5});
  auto run = [&](const TensorD& x) {
    TensorD m = rm.clone_values(), v = rv.clone_values();
    return ops::batch_norm<double>(nullptr, x, gamma, beta, m, v, ops::BnMode::kEval, 0.1, 1e-5);
  };
  TensorD y1 = run(x1), y2 = run(x2), y3 = run(x3);
  for (int64_t i = 0; i < y1.numel(); ++i)
    REQUIRE(std::abs(y2.at(i) - 0.5 * (y1.at(i) + y3.at(i))) < 1e-12);
}

TEST_CASE("batch_norm train updates running stats and rejects degenerate batches") {
  TensorD x(Shape{1, 1, 1, 1}, std::vector<double>{2.0});
  TensorD gamma(Shape{1}, 1.0), beta(Shape{1}, 0.0), rm(Shape{1}, 0.0), rv(Shape{1}, 1.0);
  REQUIRE_THROWS_AS(
      ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, ops::BnMode::kTrain, 0.1, 1e-5),
      Error);

  TensorD x2(Shape{2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
  ops::batch_norm<double>(nullptr, x2, gamma, beta, rm, rv, ops::BnMode::kTrain, 0.1, 1e-5);
  REQUIRE(rm.at(0) == Approx(0.9 * 0.0 + 0.1 * 2.0));
  REQUIRE(rv.at(0) == Approx(0.9 * 1.0 + 0.1 * 2.0));  // unbiased var = 2
}

TEST_CASE("softmax_temperature examples") {
  SECTION("uniform logits give uniform probabilities") {
    TensorD x(Shape{2, 5}, 1.7);
    TensorD y = ops::softmax_temperature<double>(nullptr, x, 4.0);
    for (int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.at(i) == Approx(0.2));
  }
  SECTION("[0, ln 3] at tau 1 gives [0.25, 0.75]") {
    TensorD x(Shape{1, 2}, std::vector<double>{0.0, std::log(3.0)});
    TensorD y = ops::softmax_temperature<double>(nullptr, x, 1.0);
    REQUIRE(y.at(0) == Approx(0.25).margin(1e-12));
    REQUIRE(y.at(1) == Approx(0.75).margin(1e-12));
  }
  SECTION("large tau tends to uniform") {
    TensorD x(Shape{1, 2}, std::vector<double>{0.0, 10.0});
    TensorD y = ops::softmax_temperature<double>(nullptr, x, 1e6);
    REQUIRE(std::abs(y.at(0) - 0.5) < 1e-5);
    REQUIRE(std::abs(y.at(1) - 0.5) < 1e-5);
  }
  SECTION("rows sum to one for random logits") {
    auto rng = test_rng(5);
    TensorD x = TensorD::randn({37, 11}, rng, 5.0);
    TensorD y = ops::softmax_temperature<double>(nullptr, x, 7.0);
    for (int64_t r = 0; r < 37; ++r) {
      double s = 0;
      for (int64_t j = 0; j < 11; ++j) s += y.at(r * 11 + j);
      REQUIRE(std::abs(s - 1.0) < 1e-6);
    }
  }
  SECTION("tau <= 0 is a parameter error") {
    TensorD x(Shape{1, 2}, 0.0);
    REQUIRE_THROWS_AS(ops::softmax_temperature<double>(nullptr, x, 0.0), Error);
  }
}

TEST_CASE("bilinear_resize examples") {
  SECTION("identity resize is bit-equal") {
    auto rng = test_rng(6);
    TensorF x = TensorF::randn({2, 3, 7, 5}, rng);
    TensorF y = ops::bilinear_resize<float>(nullptr, x, 7, 5);
    for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(y.at(i) == x.at(i));
  }
  SECTION("2x2 to 4x4 matches scalar reference") {
    TensorD x(Shape{1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
    TensorD y = ops::bilinear_resize<double>(nullptr, x, 4, 4);
    TensorD want = oracle::bilinear_resize_ref(x, 4, 4);
    for (int64_t i = 0; i < y.numel(); ++i)
      REQUIRE(std::abs(y.at(i) - want.at(i)) < 1e-6);
  }
  SECTION("constant image stays constant at any size") {
    TensorD x(Shape{1, 2, 3, 3}, 0.37);
    TensorD y = ops::bilinear_resize<double>(nullptr, x, 9, 4);
    for (int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.at(i) == Approx(0.37));
  }
  SECTION("random resize matches scalar reference") {
    auto rng = test_rng(7);
    TensorD x = TensorD::randn({2, 2, 5, 7}, rng);
    TensorD y = ops::bilinear_resize<double>(nullptr, x, 11, 4);
    TensorD want = oracle::bilinear_resize_ref(x, 11, 4);
    for (int64_t i = 0; i < y.numel(); ++i)
      REQUIRE(std::abs(y.at(i) - want.at(i)) < 1e-9);
  }
}

TEST_CASE("max_pool2d matches naive reference") {
  auto rng = test_rng(8);
  TensorD x = TensorD::randn({2, 3, 6, 6}, rng);
  TensorD y = ops::max_pool2d<double>(nullptr, x, 2, 2);
  REQUIRE(y.shape() == Shape{2, 3, 3, 3});
  for (int64_t p = 0; p < 6; ++p)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 3; ++j) {
        double best = -1e300;
        for (int64_t r = 0; r < 2; ++r)
          for (int64_t s = 0; s < 2; ++s)
            best = std::max(best, x.at((p * 6 + 2 * i + r) * 6 + 2 * j + s));
        REQUIRE(y.at((p * 3 + i) * 3 + j) == Approx(best));
      }
}

TEST_CASE("shape ops round trip") {
  auto rng = test_rng(9);
  TensorD x = TensorD::randn({2, 3, 4}, rng);
  TensorD p = ops::permute<double>(nullptr, x, {1, 2, 0});
  REQUIRE(p.shape() == Shape{3, 4, 2});
  REQUIRE(p.at((0 * 4 + 1) * 2 + 1) == x.at((1 * 3 + 0) * 4 + 1));
  TensorD back = ops::permute<double>(nullptr, p, {2, 0, 1});
  for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(back.at(i) == x.at(i));

  TensorD a = TensorD::randn({2, 2}, rng);
  TensorD b = TensorD::randn({2, 3}, rng);
  TensorD c = ops::concat2<double>(nullptr, a, b, 1);
  REQUIRE(c.shape() == Shape{2, 5});
  TensorD sa = ops::slice<double>(nullptr, c, 1, 0, 2);
  TensorD sb = ops::slice<double>(nullptr, c, 1, 2, 3);
  for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(sa.at(i) == a.at(i));
  for (int64_t i = 0; i < b.numel(); ++i) REQUIRE(sb.at(i) == b.at(i));
}

TEST_CASE("gemm determinism across thread counts") {
  auto rng = test_rng(10);
  TensorF a = TensorF::randn({64, 288}, rng);
  TensorF b = TensorF::randn({288, 2048}, rng);
#ifdef _OPENMP
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
#endif
  TensorF c1 = ops::matmul<float>(nullptr, a, b);
#ifdef _OPENMP
  omp_set_num_threads(2);
#endif
  TensorF c2 = ops::matmul<float>(nullptr, a, b);
  TensorF c3 = ops::matmul<float>(nullptr, a, b);
#ifdef _OPENMP
  omp_set_num_threads(saved);
#endif
  for (int64_t i = 0; i < c1.numel(); ++i) {
    REQUIRE(c1.at(i) == c2.at(i));
    REQUIRE(c2.at(i) == c3.at(i));
  }
}

TEST_CASE("conv2d determinism across thread counts") {
  auto rng = test_rng(11);
  TensorF x = TensorF::randn({4, 8, 16, 16}, rng);
  TensorF w = TensorF::randn({16, 8, 3, 3}, rng);
#ifdef _OPENMP
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
#endif
  TensorF y1 = ops::conv2d<float>(nullptr, x, w, 1, 1);
#ifdef _OPENMP
  omp_set_num_threads(2);
#endif
  TensorF y2 = ops::conv2d<float>(nullptr, x, w, 1, 1);
#ifdef _OPENMP
  omp_set_num_threads(saved);
#endif
  for (int64_t i = 0; i < y1.numel(); ++i) REQUIRE(y1.at(i) == y2.at(i));
}

TEST_CASE("finite-check debug mode flags NaN") {
  ops::finite_checks() = true;
  TensorD x(Shape{2}, std::vector<double>{1.0, -1.0});
  REQUIRE_THROWS_AS(ops::log_e<double>(nullptr, x), Error);
  ops::finite_checks() = false;
  TensorD y = ops::log_e<double>(nullptr, x);
  REQUIRE(std::isnan(y.at(1)));
}
