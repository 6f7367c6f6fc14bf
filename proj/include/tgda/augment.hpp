#pragma once

#include <optional>

#include "tgda/image.hpp"
#include "tgda/ops.hpp"

namespace tgda::augment {

using img::Image;

struct CropBox {
  int64_t top = 0, left = 0, height = 0, width = 0;
};

enum class AugKind { kCrop, kDrop };

struct AugmentedPair {
  Image original;
  Image augmented;
  AugKind kind = AugKind::kCrop;
  std::optional<CropBox> box;
  int map_index = -1;
};

// Per-sample thresholds; the paper's lineage leaves these open, so they are
// sampled per image for augmentation diversity.
struct AttentionAugConfig {
  double theta_crop_lo = 0.4, theta_crop_hi = 0.6;
  double theta_drop_lo = 0.2, theta_drop_hi = 0.5;
};

// index ~ P(k) ∝ spatial mean of map k (uniform when all means vanish);
// the returned map is min-max normalized to [0,1], all-constant maps
// normalize to zero.
inline std::pair<int, Tensor<float>> select_attention_map(const Tensor<float>& maps,
                                                          RngStream& rng) {
  check(maps.ndim() == 3, ErrorKind::kDimension, "select_attention_map: expects [M,H,W]");
  const int64_t m = maps.shape()[0];
  const int64_t hw = maps.shape()[1] * maps.shape()[2];
  std::vector<double> means(static_cast<size_t>(m), 0.0);
  double total = 0.0;
  for (int64_t k = 0; k < m; ++k) {
    double acc = 0;
    for (int64_t i = 0; i < hw; ++i) acc += maps.at(k * hw + i);
    means[static_cast<size_t>(k)] = acc / static_cast<double>(hw);
    total += means[static_cast<size_t>(k)];
  }
  int64_t pick = 0;
  if (total <= 0.0) {
    pick = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(m)));
  } else {
    double u = rng.next_double() * total;
    for (int64_t k = 0; k < m; ++k) {
      u -= means[static_cast<size_t>(k)];
      if (u <= 0.0) {
        pick = k;
        break;
      }
      pick = k;  // numeric tail falls onto the last map
    }
  }
  Tensor<float> out(Shape{maps.shape()[1], maps.shape()[2]});
  float lo = maps.at(pick * hw), hi = lo;
  for (int64_t i = 0; i < hw; ++i) {
    const float v = maps.at(pick * hw + i);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi > lo) {
    const float inv = 1.0f / (hi - lo);
    for (int64_t i = 0; i < hw; ++i) out.at(i) = (maps.at(pick * hw + i) - lo) * inv;
  }  // else: all-constant map stays all zeros
  return {static_cast<int>(pick), out};
}

namespace detail {
inline Tensor<float> upsample_map(const Tensor<float>& map, int64_t h, int64_t w) {
  Tensor<float> m4(Shape{1, 1, map.shape()[0], map.shape()[1]}, map.vec());
  Tensor<float> up = ops::bilinear_resize<float>(nullptr, m4, h, w);
  return Tensor<float>(Shape{h, w}, up.vec());
}
}  // namespace detail

// Threshold the upsampled map at theta_c (inclusive), take the tight bounding
// box of the mask (full image when empty), crop, and resize back.
inline std::pair<Image, CropBox> attention_crop(const Image& image, const Tensor<float>& norm_map,
                                                double theta_c) {
  check(theta_c > 0.0 && theta_c < 1.0, ErrorKind::kParameter,
        "attention_crop: theta_c must lie in (0,1)");
  check(image.ndim() == 3 && norm_map.ndim() == 2, ErrorKind::kDimension,
        "attention_crop: expects [C,H,W] image and [h,w] map");
  const int64_t h = image.shape()[1], w = image.shape()[2];
  Tensor<float> up = detail::upsample_map(norm_map, h, w);
  int64_t top = h, bottom = -1, left = w, right = -1;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      if (up.at(y * w + x) >= static_cast<float>(theta_c)) {
        top = std::min(top, y);
        bottom = std::max(bottom, y);
        left = std::min(left, x);
        right = std::max(right, x);
      }
  CropBox box;
  if (bottom < 0) {
    box = {0, 0, h, w};  // empty mask: full image
  } else {
    box = {top, left, bottom - top + 1, right - left + 1};
  }
  // crop then zoom back to the input size
  const int64_t c = image.shape()[0];
  Tensor<float> crop(Shape{1, c, box.height, box.width});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < box.height; ++y)
      for (int64_t x = 0; x < box.width; ++x)
        crop.at((ch * box.height + y) * box.width + x) =
            image.at((ch * h + box.top + y) * w + box.left + x);
  Tensor<float> resized = ops::bilinear_resize<float>(nullptr, crop, h, w);
  return {Image(Shape{c, h, w}, resized.vec()), box};
}

// Zero out every pixel whose upsampled attention reaches theta_d.
inline Image attention_drop(const Image& image, const Tensor<float>& norm_map, double theta_d) {
  check(theta_d > 0.0 && theta_d < 1.0, ErrorKind::kParameter,
        "attention_drop: theta_d must lie in (0,1)");
  check(image.ndim() == 3 && norm_map.ndim() == 2, ErrorKind::kDimension,
        "attention_drop: expects [C,H,W] image and [h,w] map");
  const int64_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  Tensor<float> up = detail::upsample_map(norm_map, h, w);
  Image out = image.clone_values();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      if (up.at(y * w + x) >= static_cast<float>(theta_d))
        for (int64_t ch = 0; ch < c; ++ch) out.at((ch * h + y) * w + x) = 0.0f;
  return out;
}

// One attention-guided view; crop and drop alternate across steps at fixed cost.
inline AugmentedPair make_attention_view(const Image& image, const Tensor<float>& sample_maps,
                                         AugKind kind, const AttentionAugConfig& cfg,
                                         RngStream& rng) {
  auto [idx, norm_map] = select_attention_map(sample_maps, rng);
  AugmentedPair pair;
  pair.original = image;
  pair.kind = kind;
  pair.map_index = idx;
  if (kind == AugKind::kCrop) {
    const double theta = rng.uniform(cfg.theta_crop_lo, cfg.theta_crop_hi);
    auto [aug, box] = attention_crop(image, norm_map, theta);
    pair.augmented = std::move(aug);
    pair.box = box;
  } else {
    const double theta = rng.uniform(cfg.theta_drop_lo, cfg.theta_drop_hi);
    pair.augmented = attention_drop(image, norm_map, theta);
  }
  return pair;
}

// ---------------------------------------------------------------------------
// generic from-scratch augmentation stack
// ---------------------------------------------------------------------------

enum class Policy { kTrain, kEval };

// TrivialAugment-style op set; color-inversion/posterize are excluded because
// they destroy fine-grained texture. Each op is identity at zero strength.
inline const std::vector<std::string>& trivial_augment_default_ops() {
  static const std::vector<std::string> ops = {
      "identity",    "rotate",      "shear_x",    "shear_y", "translate_x",
      "translate_y", "brightness",  "contrast",   "sharpness"};
  return ops;
}

struct StandardAugmentConfig {
  std::vector<std::string> trivial_ops = trivial_augment_default_ops();
  double crop_scale_lo = 0.5, crop_scale_hi = 1.0;
  double crop_ratio_lo = 3.0 / 4.0, crop_ratio_hi = 4.0 / 3.0;
  double rotate_max_deg = 30.0;
  double shear_max = 0.3;
  double translate_max_frac = 0.25;
  double color_max = 0.5;   // brightness/contrast factor = 1 ± u*color_max
  double blur_max = 0.7;    // sharpness proxy: blend toward 3x3 box blur
};

namespace detail {

inline Image random_resized_crop(const Image& src, int64_t target, double scale_lo,
                                 double scale_hi, double ratio_lo, double ratio_hi,
                                 RngStream& rng) {
  const int64_t h = src.shape()[1], w = src.shape()[2];
  const double area = static_cast<double>(h) * static_cast<double>(w);
  int64_t ch = h, cw = w, top = 0, left = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target_area = area * rng.uniform(scale_lo, scale_hi);
    const double log_ratio = rng.uniform(std::log(ratio_lo), std::log(ratio_hi));
    const double ratio = std::exp(log_ratio);
    const auto cand_w = static_cast<int64_t>(std::round(std::sqrt(target_area * ratio)));
    const auto cand_h = static_cast<int64_t>(std::round(std::sqrt(target_area / ratio)));
    if (cand_w < 1 || cand_h < 1 || cand_w > w || cand_h > h) continue;
    cw = cand_w;
    ch = cand_h;
    top = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(h - ch + 1)));
    left = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(w - cw + 1)));
    break;
  }
  const int64_t c = src.shape()[0];
  Tensor<float> crop(Shape{1, c, ch, cw});
  for (int64_t p = 0; p < c; ++p)
    for (int64_t y = 0; y < ch; ++y)
      for (int64_t x = 0; x < cw; ++x)
        crop.at((p * ch + y) * cw + x) = src.at((p * h + top + y) * w + left + x);
  Tensor<float> resized = ops::bilinear_resize<float>(nullptr, crop, target, target);
  return Image(Shape{c, target, target}, resized.vec());
}

inline Image hflip(const Image& src) {
  const int64_t c = src.shape()[0], h = src.shape()[1], w = src.shape()[2];
  Image out(src.shape());
  for (int64_t p = 0; p < c; ++p)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        out.at((p * h + y) * w + x) = src.at((p * h + y) * w + (w - 1 - x));
  return out;
}

inline Image apply_trivial_op(const Image& src, const std::string& op, double strength,
                              const StandardAugmentConfig& cfg, RngStream& rng) {
  const int64_t h = src.shape()[1], w = src.shape()[2];
  const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
  if (op == "identity") return src;
  if (op == "rotate") {
    const double rad = sign * strength * cfg.rotate_max_deg * M_PI / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    // inverse rotation
    return img::affine_bilinear(src, {c, s, -s, c}, 0.0, 0.0);
  }
  if (op == "shear_x") {
    const double k = sign * strength * cfg.shear_max;
    return img::affine_bilinear(src, {1.0, -k, 0.0, 1.0}, 0.0, 0.0);
  }
  if (op == "shear_y") {
    const double k = sign * strength * cfg.shear_max;
    return img::affine_bilinear(src, {1.0, 0.0, -k, 1.0}, 0.0, 0.0);
  }
  if (op == "translate_x") {
    const double d = sign * strength * cfg.translate_max_frac * static_cast<double>(w);
    return img::affine_bilinear(src, {1.0, 0.0, 0.0, 1.0}, d, 0.0);
  }
  if (op == "translate_y") {
    const double d = sign * strength * cfg.translate_max_frac * static_cast<double>(h);
    return img::affine_bilinear(src, {1.0, 0.0, 0.0, 1.0}, 0.0, d);
  }
  if (op == "brightness") {
    const double f = 1.0 + sign * strength * cfg.color_max;
    Image out = src.clone_values();
    for (int64_t i = 0; i < out.numel(); ++i)
      out.at(i) = std::clamp(static_cast<float>(out.at(i) * f), 0.0f, 1.0f);
    return out;
  }
  if (op == "contrast") {
    double mean = 0;
    for (int64_t i = 0; i < src.numel(); ++i) mean += src.at(i);
    mean /= static_cast<double>(src.numel());
    const double f = 1.0 + sign * strength * cfg.color_max;
    Image out = src.clone_values();
    for (int64_t i = 0; i < out.numel(); ++i)
      out.at(i) = std::clamp(static_cast<float>((src.at(i) - mean) * f + mean), 0.0f, 1.0f);
    return out;
  }
  if (op == "sharpness") {
    // blur blend; strength 0 keeps the source untouched
    if (strength == 0.0) return src;
    Image blurred = img::box_blur3(src);
    const double lam = strength * cfg.blur_max;
    Image out = src.clone_values();
    for (int64_t i = 0; i < out.numel(); ++i)
      out.at(i) = static_cast<float>((1.0 - lam) * src.at(i) + lam * blurred.at(i));
    return out;
  }
  fail(ErrorKind::kConfig, "unknown TrivialAugment op '" + op + "'");
}

}  // namespace detail

// Geometric + photometric train-time view (pre-standardization): random
// resized crop, horizontal flip, one uniformly drawn TrivialAugment op at a
// uniformly drawn strength. Eval: deterministic resize + center crop.
inline Image geometric_augment(const Image& image, Policy policy, int64_t target_size,
                               const StandardAugmentConfig& cfg, RngStream& rng) {
  const int64_t h = image.shape()[1], w = image.shape()[2];
  if (policy == Policy::kTrain) {
    check(h >= target_size && w >= target_size, ErrorKind::kGeometry,
          "standard_augment: image smaller than target size");
    Image out = detail::random_resized_crop(image, target_size, cfg.crop_scale_lo,
                                            cfg.crop_scale_hi, cfg.crop_ratio_lo,
                                            cfg.crop_ratio_hi, rng);
    if (rng.bernoulli(0.5)) out = detail::hflip(out);
    const auto pick = rng.next_below(cfg.trivial_ops.size());
    const double strength = rng.next_double();
    return detail::apply_trivial_op(out, cfg.trivial_ops[static_cast<size_t>(pick)], strength,
                                    cfg, rng);
  }
  // eval: resize the short side then center crop
  Image out = image;
  if (h != target_size || w != target_size) {
    const double scale = static_cast<double>(target_size) / static_cast<double>(std::min(h, w));
    const auto nh = std::max<int64_t>(target_size, static_cast<int64_t>(std::round(h * scale)));
    const auto nw = std::max<int64_t>(target_size, static_cast<int64_t>(std::round(w * scale)));
    Tensor<float> t4(Shape{1, 3, h, w}, image.vec());
    Tensor<float> r = ops::bilinear_resize<float>(nullptr, t4, nh, nw);
    const int64_t top = (nh - target_size) / 2, left = (nw - target_size) / 2;
    out = Image(Shape{3, target_size, target_size});
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < target_size; ++y)
        for (int64_t x = 0; x < target_size; ++x)
          out.at((c * target_size + y) * target_size + x) =
              r.at((c * nh + top + y) * nw + left + x);
  }
  return out;
}

inline Image standardize(const Image& image, const std::array<float, 3>& mean,
                         const std::array<float, 3>& stddev) {
  Image out = image.clone_values();
  const int64_t hw = out.shape()[1] * out.shape()[2];
  for (int64_t c = 0; c < 3; ++c) {
    const float m = mean[static_cast<size_t>(c)];
    const float s = stddev[static_cast<size_t>(c)] > 0 ? stddev[static_cast<size_t>(c)] : 1.0f;
    for (int64_t i = 0; i < hw; ++i) out.at(c * hw + i) = (out.at(c * hw + i) - m) / s;
  }
  return out;
}

// The full per-sample pipeline the spec names standard_augment: geometric
// view followed by per-channel standardization.
inline Image standard_augment(const Image& image, Policy policy, int64_t target_size,
                              const std::array<float, 3>& mean, const std::array<float, 3>& stddev,
                              const StandardAugmentConfig& cfg, RngStream& rng) {
  return standardize(geometric_augment(image, policy, target_size, cfg, rng), mean, stddev);
}

}  // namespace tgda::augment
