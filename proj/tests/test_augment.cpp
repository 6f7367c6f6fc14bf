#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "tgda/augment.hpp"

using namespace tgda;
using namespace tgda::augment;
using Catch::Approx;

namespace {

// independent mask-and-scan bounding box on the reference-upsampled map
struct RefBox {
  int64_t top, left, height, width;
  bool empty;
};
RefBox bbox_ref(const Tensor<float>& norm_map, int64_t h, int64_t w, double theta) {
  Tensor<float> m4(Shape{1, 1, norm_map.shape()[0], norm_map.shape()[1]}, norm_map.vec());
  Tensor<float> up = oracle::bilinear_resize_ref(m4, h, w);
  int64_t top = h, bottom = -1, left = w, right = -1;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      if (up.at(y * w + x) >= static_cast<float>(theta)) {
        top = std::min(top, y);
        bottom = std::max(bottom, y);
        left = std::min(left, x);
        right = std::max(right, x);
      }
  if (bottom < 0) return {0, 0, h, w, true};
  return {top, left, bottom - top + 1, right - left + 1, false};
}

}  // namespace

TEST_CASE("select_attention_map degenerate and constant cases") {
  RngStream rng(1);
  SECTION("all-zero map is never selected when a positive one exists") {
    Tensor<float> maps = Tensor<float>::zeros({2, 3, 3});
    for (int64_t i = 0; i < 9; ++i) maps.at(9 + i) = 1.0f + static_cast<float>(i);
    for (int rep = 0; rep < 50; ++rep) {
      auto [idx, norm] = select_attention_map(maps, rng);
      REQUIRE(idx == 1);
    }
  }
  SECTION("constant positive map normalizes to zero") {
    Tensor<float> maps = Tensor<float>::full({1, 4, 4}, 2.5f);
    auto [idx, norm] = select_attention_map(maps, rng);
    REQUIRE(idx == 0);
    for (int64_t i = 0; i < norm.numel(); ++i) REQUIRE(norm.at(i) == 0.0f);
  }
  SECTION("selection frequencies follow spatial means") {
    Tensor<float> maps(Shape{3, 2, 2});
    for (int64_t k = 0; k < 3; ++k)
      for (int64_t i = 0; i < 4; ++i) maps.at(k * 4 + i) = static_cast<float>(k + 1);
    std::array<int, 3> counts{0, 0, 0};
    const int trials = 100000;
    for (int t = 0; t < trials; ++t) {
      auto [idx, norm] = select_attention_map(maps, rng);
      counts[static_cast<size_t>(idx)]++;
    }
    for (int k = 0; k < 3; ++k) {
      const double freq = static_cast<double>(counts[static_cast<size_t>(k)]) / trials;
      REQUIRE(std::abs(freq - (k + 1) / 6.0) < 0.02);
    }
  }
}

TEST_CASE("attention_crop examples") {
  RngStream rng(2);
  SECTION("point mass: box contains the argmax pixel") {
    Tensor<float> map = Tensor<float>::zeros({5, 5});
    map.at(2 * 5 + 2) = 1.0f;
    img::Image image = Tensor<float>::rand_uniform({3, 20, 20}, rng);
    auto [aug, box] = attention_crop(image, map, 0.5);
    REQUIRE(aug.shape() == image.shape());
    // upsampled argmax lands at the center of the image
    Tensor<float> m4(Shape{1, 1, 5, 5}, map.vec());
    Tensor<float> up = oracle::bilinear_resize_ref(m4, 20, 20);
    int64_t best = 0;
    for (int64_t i = 1; i < up.numel(); ++i)
      if (up.at(i) > up.at(best)) best = i;
    const int64_t by = best / 20, bx = best % 20;
    REQUIRE(by >= box.top);
    REQUIRE(by < box.top + box.height);
    REQUIRE(bx >= box.left);
    REQUIRE(bx < box.left + box.width);
  }
  SECTION("saturated map: full-image box and bilinear identity") {
    Tensor<float> map = Tensor<float>::ones({4, 4});
    img::Image image = Tensor<float>::rand_uniform({3, 16, 16}, rng);
    auto [aug, box] = attention_crop(image, map, 0.5);
    REQUIRE(box.top == 0);
    REQUIRE(box.left == 0);
    REQUIRE(box.height == 16);
    REQUIRE(box.width == 16);
    for (int64_t i = 0; i < image.numel(); ++i) REQUIRE(aug.at(i) == image.at(i));
  }
  SECTION("2x2 high block on a 4x4 map matches the mask-and-scan oracle") {
    Tensor<float> map = Tensor<float>::zeros({4, 4});
    map.at(1 * 4 + 1) = 1.0f;
    map.at(1 * 4 + 2) = 1.0f;
    map.at(2 * 4 + 1) = 1.0f;
    map.at(2 * 4 + 2) = 1.0f;
    img::Image image = Tensor<float>::rand_uniform({3, 16, 16}, rng);
    auto [aug, box] = attention_crop(image, map, 0.5);
    RefBox want = bbox_ref(map, 16, 16, 0.5);
    REQUIRE(box.top == want.top);
    REQUIRE(box.left == want.left);
    REQUIRE(box.height == want.height);
    REQUIRE(box.width == want.width);
  }
  SECTION("1000 random maps match the oracle and contain the argmax") {
    for (int rep = 0; rep < 1000; ++rep) {
      Tensor<float> map = Tensor<float>::rand_uniform({4, 4}, rng);
      // min-max normalize like select_attention_map would
      float lo = map.at(0), hi = map.at(0);
      for (int64_t i = 0; i < 16; ++i) {
        lo = std::min(lo, map.at(i));
        hi = std::max(hi, map.at(i));
      }
      for (int64_t i = 0; i < 16; ++i) map.at(i) = (map.at(i) - lo) / std::max(hi - lo, 1e-9f);
      img::Image image = Tensor<float>::rand_uniform({3, 12, 12}, rng);
      const double theta = rng.uniform(0.4, 0.6);
      auto [aug, box] = attention_crop(image, map, theta);
      RefBox want = bbox_ref(map, 12, 12, theta);
      REQUIRE(box.top == want.top);
      REQUIRE(box.left == want.left);
      REQUIRE(box.height == want.height);
      REQUIRE(box.width == want.width);
      REQUIRE(aug.shape() == image.shape());
      if (!want.empty) {
        Tensor<float> m4(Shape{1, 1, 4, 4}, map.vec());
        Tensor<float> up = oracle::bilinear_resize_ref(m4, 12, 12);
        int64_t best = 0;
        for (int64_t i = 1; i < up.numel(); ++i)
          if (up.at(i) > up.at(best)) best = i;
        const int64_t by = best / 12, bx = best % 12;
        REQUIRE(by >= box.top);
        REQUIRE(by < box.top + box.height);
        REQUIRE(bx >= box.left);
        REQUIRE(bx < box.left + box.width);
      }
    }
  }
}

TEST_CASE("attention_drop examples") {
  RngStream rng(3);
  SECTION("all-zero map leaves the image untouched") {
    Tensor<float> map = Tensor<float>::zeros({4, 4});
    img::Image image = Tensor<float>::rand_uniform({3, 8, 8}, rng);
    img::Image out = attention_drop(image, map, 0.3);
    for (int64_t i = 0; i < image.numel(); ++i) REQUIRE(out.at(i) == image.at(i));
  }
  SECTION("all-one map zeroes everything") {
    Tensor<float> map = Tensor<float>::ones({4, 4});
    img::Image image = Tensor<float>::rand_uniform({3, 8, 8}, rng);
    img::Image out = attention_drop(image, map, 0.3);
    for (int64_t i = 0; i < out.numel(); ++i) REQUIRE(out.at(i) == 0.0f);
  }
  SECTION("random map equals the elementwise oracle exactly, and zero count equals mask size") {
    for (int rep = 0; rep < 50; ++rep) {
      Tensor<float> map = Tensor<float>::rand_uniform({5, 5}, rng);
      img::Image image = Tensor<float>::rand_uniform({3, 10, 10}, rng, 0.01f, 1.0f);
      const double theta = rng.uniform(0.2, 0.5);
      img::Image out = attention_drop(image, map, theta);
      Tensor<float> m4(Shape{1, 1, 5, 5}, map.vec());
      Tensor<float> up = oracle::bilinear_resize_ref(m4, 10, 10);
      int64_t mask_card = 0, zeroed = 0;
      for (int64_t y = 0; y < 10; ++y)
        for (int64_t x = 0; x < 10; ++x) {
          const bool masked = up.at(y * 10 + x) >= static_cast<float>(theta);
          if (masked) ++mask_card;
          bool all_zero = true;
          for (int64_t c = 0; c < 3; ++c) {
            const float want = masked ? 0.0f : image.at((c * 10 + y) * 10 + x);
            REQUIRE(out.at((c * 10 + y) * 10 + x) == want);
            if (out.at((c * 10 + y) * 10 + x) != 0.0f) all_zero = false;
          }
          if (all_zero) ++zeroed;
        }
      REQUIRE(zeroed == mask_card);  // image has no pre-existing zeros
    }
  }
}

TEST_CASE("standard augmentation stack") {
  StandardAugmentConfig cfg;
  const std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  const std::array<float, 3> stddev{0.25f, 0.25f, 0.25f};
  RngStream rng(4);
  img::Image image = Tensor<float>::rand_uniform({3, 32, 32}, rng);

  SECTION("eval policy is deterministic") {
    RngStream r1(9), r2(9);
    img::Image a = standard_augment(image, Policy::kEval, 24, mean, stddev, cfg, r1);
    img::Image b = standard_augment(image, Policy::kEval, 24, mean, stddev, cfg, r2);
    for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(a.at(i) == b.at(i));
  }
  SECTION("train policy is reproducible under the same stream") {
    RngStream r1(10), r2(10);
    img::Image a = standard_augment(image, Policy::kTrain, 24, mean, stddev, cfg, r1);
    img::Image b = standard_augment(image, Policy::kTrain, 24, mean, stddev, cfg, r2);
    for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(a.at(i) == b.at(i));
  }
  SECTION("identity op returns the input") {
    RngStream r(11);
    img::Image out = augment::detail::apply_trivial_op(image, "identity", 0.77, cfg, r);
    for (int64_t i = 0; i < image.numel(); ++i) REQUIRE(out.at(i) == image.at(i));
  }
  SECTION("every geometric/photometric op is identity at zero strength") {
    for (const auto& op : trivial_augment_default_ops()) {
      RngStream r(12);
      img::Image out = augment::detail::apply_trivial_op(image, op, 0.0, cfg, r);
      for (int64_t i = 0; i < image.numel(); ++i) {
        INFO("op " << op << " index " << i);
        REQUIRE(out.at(i) == Approx(image.at(i)).margin(1e-6));
      }
    }
  }
  SECTION("undersized input is a geometry error") {
    RngStream r(13);
    img::Image small = Tensor<float>::rand_uniform({3, 16, 16}, r);
    REQUIRE_THROWS_AS(standard_augment(small, Policy::kTrain, 24, mean, stddev, cfg, r), Error);
  }
  SECTION("unknown trivial op is a config error") {
    RngStream r(14);
    REQUIRE_THROWS_AS(augment::detail::apply_trivial_op(image, "posterize", 0.5, cfg, r), Error);
  }
}

TEST_CASE("make_attention_view alternation produces both kinds reproducibly") {
  RngStream rng(5);
  img::Image image = Tensor<float>::rand_uniform({3, 16, 16}, rng);
  Tensor<float> maps = Tensor<float>::rand_uniform({4, 2, 2}, rng);
  AttentionAugConfig cfg;
  RngStream r1(20), r2(20);
  auto a = make_attention_view(image, maps, AugKind::kCrop, cfg, r1);
  auto b = make_attention_view(image, maps, AugKind::kCrop, cfg, r2);
  REQUIRE(a.map_index == b.map_index);
  for (int64_t i = 0; i < a.augmented.numel(); ++i)
    REQUIRE(a.augmented.at(i) == b.augmented.at(i));
  REQUIRE(a.box.has_value());
  auto d = make_attention_view(image, maps, AugKind::kDrop, cfg, r1);
  REQUIRE(!d.box.has_value());
  REQUIRE(d.augmented.shape() == image.shape());
}
