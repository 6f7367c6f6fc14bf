#pragma once

#include <array>
#include <optional>

#include "tgda/layers.hpp"

#include "json.hpp"

namespace tgda::models {

using nn::CostAccum;
using nn::Ctx;
using nn::Mode;

// ---------------------------------------------------------------------------
// free building blocks
// ---------------------------------------------------------------------------

// Fixed 2-d sinusoidal positions: first dim/2 channels encode x, last dim/2
// encode y; geometric frequencies with base 10000. Parameter-free.
template <typename T>
Tensor<T> sinusoidal_pos_enc_2d(int64_t h, int64_t w, int64_t dim) {
  check(dim % 4 == 0, ErrorKind::kConfig, "sinusoidal_pos_enc_2d: dim must be divisible by 4");
  const int64_t q = dim / 4;
  Tensor<T> out(Shape{h * w, dim});
  std::vector<double> freqs(static_cast<size_t>(q));
  for (int64_t i = 0; i < q; ++i)
    freqs[static_cast<size_t>(i)] = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(q));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      T* row = out.data() + (y * w + x) * dim;
      for (int64_t i = 0; i < q; ++i) {
        const double fx = static_cast<double>(x) * freqs[static_cast<size_t>(i)];
        const double fy = static_cast<double>(y) * freqs[static_cast<size_t>(i)];
        row[i] = static_cast<T>(std::sin(fx));
        row[q + i] = static_cast<T>(std::cos(fx));
        row[2 * q + i] = static_cast<T>(std::sin(fy));
        row[3 * q + i] = static_cast<T>(std::cos(fy));
      }
    }
  return out;
}

// x + b * (gamma ⊙ branch) with b ~ Bernoulli(1-p)/(1-p) per sample in train
// mode; the expectation (b == 1) in eval mode.
template <typename T>
Tensor<T> residual_branch(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& branch,
                          const Tensor<T>& layerscale_gamma, double drop_prob, Mode mode,
                          RngStream* rng) {
  check(drop_prob >= 0.0 && drop_prob < 1.0, ErrorKind::kParameter,
        "residual_branch: drop_prob must lie in [0, 1)");
  Tensor<T> scaled =
      layerscale_gamma.defined() ? ops::scale_channels(tape, branch, layerscale_gamma) : branch;
  if (mode == Mode::kTrain && drop_prob > 0.0) {
    check(rng != nullptr, ErrorKind::kContract, "residual_branch: train mode needs an rng stream");
    const int64_t n = x.shape()[0];
    std::vector<T> keep(static_cast<size_t>(n));
    const T inv = static_cast<T>(1.0 / (1.0 - drop_prob));
    for (int64_t i = 0; i < n; ++i)
      keep[static_cast<size_t>(i)] = rng->bernoulli(1.0 - drop_prob) ? inv : T(0);
    scaled = ops::scale_rows(tape, scaled, keep);
  }
  return ops::add(tape, x, scaled);
}

// Part-aware pooled vector: f_k = (1/HW) Σ_hw A_k(hw) F(:,hw), maps
// concatenated, then signed sqrt and L2 normalization.
template <typename T>
Tensor<T> bilinear_attention_pool(Tape<T>* tape, const Tensor<T>& features,
                                  const Tensor<T>& maps) {
  check(features.ndim() == 4 && maps.ndim() == 4, ErrorKind::kDimension,
        "bilinear_attention_pool: expects NCHW features and NMHW maps");
  check(features.shape()[0] == maps.shape()[0] && features.shape()[2] == maps.shape()[2] &&
            features.shape()[3] == maps.shape()[3],
        ErrorKind::kDimension, "bilinear_attention_pool: spatial dims must agree");
  const int64_t n = features.shape()[0], c = features.shape()[1];
  const int64_t hw = features.shape()[2] * features.shape()[3];
  const int64_t m = maps.shape()[1];
  Tensor<T> a = ops::reshape(tape, maps, {n, m, hw});
  Tensor<T> f = ops::reshape(tape, features, {n, c, hw});
  Tensor<T> ft = ops::permute(tape, f, {0, 2, 1});               // [n, hw, c]
  Tensor<T> parts = ops::bmm(tape, a, ft);                       // [n, m, c]
  Tensor<T> flat = ops::reshape(tape, parts, {n, m * c});
  Tensor<T> scaled = ops::affine_scalar(tape, flat, T(1) / static_cast<T>(hw));
  Tensor<T> root = ops::signed_sqrt(tape, scaled);
  return ops::l2_normalize_rows(tape, root);
}

// ---------------------------------------------------------------------------
// configs
// ---------------------------------------------------------------------------

struct LRNetConfig {
  std::array<int64_t, 5> stage_widths{32, 64, 128, 256, 512};
  std::array<int64_t, 5> stage_blocks{1, 2, 2, 2, 2};
  int64_t stem_stride = 2;
  std::array<int64_t, 5> stage_strides{1, 2, 2, 2, 2};
  int64_t stem_kernel = 7;
  int64_t num_classes = 10;
  int64_t input_size = 64;

  void validate() const {
    int64_t total = stem_stride;
    for (int64_t s : stage_strides) total *= s;
    check(total == 32, ErrorKind::kConfig, "lrnet: stem and stage strides must multiply to 32");
    check(stage_strides[0] == 1, ErrorKind::kConfig, "lrnet: stage 1 must preserve resolution");
    check(stem_stride == 2, ErrorKind::kConfig, "lrnet: stem reduction must be 2x");
    check(num_classes >= 2, ErrorKind::kConfig, "lrnet: need at least two classes");
    check(input_size % 32 == 0, ErrorKind::kConfig, "lrnet: input size must be divisible by 32");
    for (int64_t w : stage_widths) check(w >= 1, ErrorKind::kConfig, "lrnet: bad stage width");
    for (int64_t b : stage_blocks) check(b >= 1, ErrorKind::kConfig, "lrnet: bad stage depth");
  }
};

struct ViTFSConfig {
  int64_t patch_size = 16;
  int64_t embed_dim = 192;
  int64_t depth = 12;
  int64_t heads = 3;
  double mlp_ratio = 4.0;
  int64_t num_registers = 4;
  double layerscale_init = 1e-4;
  double stochastic_depth_rate = 0.1;
  int64_t num_classes = 100;
  int64_t input_size = 64;

  void validate() const {
    check(embed_dim % heads == 0, ErrorKind::kConfig, "vitfs: embed_dim must divide by heads");
    check(embed_dim % 4 == 0, ErrorKind::kConfig, "vitfs: embed_dim must divide by 4");
    check(input_size % patch_size == 0, ErrorKind::kConfig,
          "vitfs: input size must divide by patch size");
    check(patch_size >= 2 && (patch_size & (patch_size - 1)) == 0, ErrorKind::kConfig,
          "vitfs: patch size must be a power of two");
    check(depth >= 1 && heads >= 1 && num_registers >= 0, ErrorKind::kConfig, "vitfs: bad dims");
    check(stochastic_depth_rate >= 0.0 && stochastic_depth_rate < 1.0, ErrorKind::kConfig,
          "vitfs: stochastic depth rate in [0,1)");
    check(num_classes >= 2, ErrorKind::kConfig, "vitfs: need at least two classes");
  }
};

// ---------------------------------------------------------------------------
// model base
// ---------------------------------------------------------------------------

struct CostReport {
  int64_t params = 0;
  int64_t flops = 0;
  int64_t norm_ops = 0;
};

template <typename T>
class Model {
 public:
  virtual ~Model() = default;
  virtual std::string arch_id() const = 0;          // preset identity for checkpoints
  virtual nlohmann::json arch_config() const = 0;   // full structural echo
  virtual Tensor<T> forward(Tape<T>* tape, const Tensor<T>& images, RngStream* rng = nullptr) = 0;
  virtual void visit_params(const nn::ParamVisitor<T>& fn) = 0;
  virtual void visit_buffers(const nn::ParamVisitor<T>& fn) = 0;
  virtual CostReport cost(const Shape& input_nchw) const = 0;
  virtual void fold_batchnorm() = 0;

  Mode mode = Mode::kEval;

  std::vector<std::pair<std::string, Tensor<T>>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    visit_params([&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, t); });
    return out;
  }
  std::vector<std::pair<std::string, Tensor<T>>> named_buffers() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    visit_buffers([&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, t); });
    return out;
  }
  int64_t param_count() {
    int64_t n = 0;
    visit_params([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }
  uint64_t param_checksum() {
    uint64_t h = 0xcbf29ce484222325ull;
    visit_params([&](const std::string& name, Tensor<T>& t) {
      h = fnv1a(name.data(), name.size(), h);
      h = fnv1a(t.data(), sizeof(T) * static_cast<size_t>(t.numel()), h);
    });
    return h;
  }
  void zero_grads() {
    visit_params([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }
};

// ---------------------------------------------------------------------------
// residual CNN family
// ---------------------------------------------------------------------------

template <typename T>
class BasicBlock : public nn::Layer<T> {
 public:
  BasicBlock(int64_t in_ch, int64_t out_ch, int64_t stride, RngStream rng)
      : conv1_(in_ch, out_ch, 3, stride, false, rng.derive(1)),
        bn1_(out_ch),
        conv2_(out_ch, out_ch, 3, 1, false, rng.derive(2)),
        bn2_(out_ch) {
    if (stride != 1 || in_ch != out_ch) {
      proj_.emplace(in_ch, out_ch, 1, stride, false, rng.derive(3));
      proj_bn_.emplace(out_ch);
    }
  }

  std::string kind() const override { return "basic_block"; }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) override {
    Tensor<T> h = conv1_.forward(ctx, x);
    if (bn1_) h = bn1_->forward(ctx, h);
    h = ops::relu(ctx.tape, h);
    h = conv2_.forward(ctx, h);
    if (bn2_) h = bn2_->forward(ctx, h);
    Tensor<T> sc = x;
    if (proj_) {
      sc = proj_->forward(ctx, x);
      if (proj_bn_) sc = proj_bn_->forward(ctx, sc);
    }
    return ops::relu(ctx.tape, ops::add(ctx.tape, h, sc));
  }

  void visit_params(const std::string& p, const nn::ParamVisitor<T>& fn) override {
    conv1_.visit_params(p + ".conv1", fn);
    if (bn1_) bn1_->visit_params(p + ".bn1", fn);
    conv2_.visit_params(p + ".conv2", fn);
    if (bn2_) bn2_->visit_params(p + ".bn2", fn);
    if (proj_) proj_->visit_params(p + ".proj", fn);
    if (proj_bn_) proj_bn_->visit_params(p + ".proj_bn", fn);
  }
  void visit_buffers(const std::string& p, const nn::ParamVisitor<T>& fn) override {
    if (bn1_) bn1_->visit_buffers(p + ".bn1", fn);
    if (bn2_) bn2_->visit_buffers(p + ".bn2", fn);
    if (proj_bn_) proj_bn_->visit_buffers(p + ".proj_bn", fn);
  }

  Shape cost(const Shape& in, CostAccum& acc) const override {
    Shape h = conv1_.cost(in, acc);
    if (bn1_) h = bn1_->cost(h, acc);
    acc.flops += numel_of(h);  // relu
    h = conv2_.cost(h, acc);
    if (bn2_) h = bn2_->cost(h, acc);
    if (proj_) {
      Shape s = proj_->cost(in, acc);
      if (proj_bn_) s = proj_bn_->cost(s, acc);
    }
    acc.flops += 2 * numel_of(h);  // add + relu
    return h;
  }

  void fold_batchnorm() override {
    std::vector<double> a, b;
    if (bn1_) {
      bn1_->affine(a, b);
      conv1_.absorb_output_affine(a, b);
      bn1_.reset();
    }
    if (bn2_) {
      bn2_->affine(a, b);
      conv2_.absorb_output_affine(a, b);
      bn2_.reset();
    }
    if (proj_ && proj_bn_) {
      proj_bn_->affine(a, b);
      proj_->absorb_output_affine(a, b);
      proj_bn_.reset();
    }
  }

 private:
  nn::Conv2d<T> conv1_;
  std::optional<nn::BatchNorm<T>> bn1_;
  nn::Conv2d<T> conv2_;
  std::optional<nn::BatchNorm<T>> bn2_;
  std::optional<nn::Conv2d<T>> proj_;
  std::optional<nn::BatchNorm<T>> proj_bn_;
};

// Stem + residual stages, shared by LRNet, the reference ResNet and the PAM
// teacher backbone. After the stem an optional max-pool provides the
// ResNet-style extra 2x reduction; LRNet omits it.
template <typename T>
class ResidualBody : public nn::Layer<T> {
 public:
  ResidualBody(int64_t stem_kernel, int64_t stem_stride, bool stem_pool,
               const std::vector<int64_t>& widths, const std::vector<int64_t>& blocks,
               const std::vector<int64_t>& strides, RngStream rng)
      : stem_conv_(3, widths[0], stem_kernel, stem_stride, false, rng.derive(0)),
        stem_bn_(widths[0]) {
    if (stem_pool) pool_.emplace(3, 2);
    int64_t in_ch = widths[0];
    for (size_t s = 0; s < widths.size(); ++s) {
      auto stage = std::make_unique<nn::Sequential<T>>();
      for (int64_t b = 0; b < blocks[s]; ++b) {
        const int64_t stride = b == 0 ? strides[s] : 1;
        stage->add("block" + std::to_string(b),
                   std::make_unique<BasicBlock<T>>(in_ch, widths[s], stride,
                                                   rng.derive(100 + s, static_cast<uint64_t>(b))));
        in_ch = widths[s];
      }
      stages_.push_back(std::move(stage));
    }
    out_channels_ = in_ch;
  }

  std::string kind() const override { return "residual_body"; }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) override {
    return forward_stages(ctx, x, nullptr);
  }

  Tensor<T> forward_stages(Ctx<T>& ctx, const Tensor<T>& x, std::vector<Shape>* stage_shapes) {
    Tensor<T> h = stem_conv_.forward(ctx, x);
    if (stem_bn_) h = stem_bn_->forward(ctx, h);
    h = ops::relu(ctx.tape, h);
    if (pool_) h = pool_->forward(ctx, h);
    if (stage_shapes) stage_shapes->push_back(h.shape());
    for (auto& st : stages_) {
      h = st->forward(ctx, h);
      if (stage_shapes) stage_shapes->push_back(h.shape());
    }
    return h;
  }

  void visit_params(const std::string& p, const nn::ParamVisitor<T>& fn) override {
    stem_conv_.visit_params(p + ".stem.conv", fn);
    if (stem_bn_) stem_bn_->visit_params(p + ".stem.bn", fn);
    for (size_t s = 0; s < stages_.size(); ++s)
      stages_[s]->visit_params(p + ".stage" + std::to_string(s + 1), fn);
  }
  void visit_buffers(const std::string& p, const nn::ParamVisitor<T>& fn) override {
    if (stem_bn_) stem_bn_->visit_buffers(p + ".stem.bn", fn);
    for (size_t s = 0; s < stages_.size(); ++s)
      stages_[s]->visit_buffers(p + ".stage" + std::to_string(s + 1), fn);
  }

  Shape cost(const Shape& in, CostAccum& acc) const override {
    Shape h = stem_conv_.cost(in, acc);
    if (stem_bn_) h = stem_bn_->cost(h, acc);
    acc.flops += numel_of(h);
    if (pool_) h = pool_->cost(h, acc);
    for (const auto& st : stages_) h = st->cost(h, acc);
    return h;
  }

  void fold_batchnorm() override {
    if (stem_bn_) {
      std::vector<double> a, b;
      stem_bn_->affine(a, b);
      stem_conv_.absorb_output_affine(a, b);
      stem_bn_.reset();
    }
    for (auto& st : stages_) st->fold_batchnorm();
  }

  int64_t out_channels() const { return out_channels_; }

 private:
  nn::Conv2d<T> stem_conv_;
  std::optional<nn::BatchNorm<T>> stem_bn_;
  std::optional<nn::MaxPool2d<T>> pool_;
  std::vector<std::unique_ptr<nn::Sequential<T>>> stages_;
  int64_t out_channels_ = 0;
};

template <typename T>
class LrNet : public Model<T> {
 public:
  LrNet(LRNetConfig cfg, uint64_t seed, std::string preset_name = "lrnet")
      : cfg_(cfg), preset_(std::move(preset_name)) {
    cfg_.validate();
    RngStream rng(seed);
    body_ = std::make_unique<ResidualBody<T>>(
        cfg_.stem_kernel, cfg_.stem_stride, false,
        std::vector<int64_t>(cfg_.stage_widths.begin(), cfg_.stage_widths.end()),
        std::vector<int64_t>(cfg_.stage_blocks.begin(), cfg_.stage_blocks.end()),
        std::vector<int64_t>(cfg_.stage_strides.begin(), cfg_.stage_strides.end()),
        rng.derive(1));
    head_ = std::make_unique<nn::Linear<T>>(body_->out_channels(), cfg_.num_classes, rng.derive(2));
  }

  std::string arch_id() const override { return preset_; }
  nlohmann::json arch_config() const override {
    return {{"kind", "lrnet"},
            {"widths", cfg_.stage_widths},
            {"blocks", cfg_.stage_blocks},
            {"stem_kernel", cfg_.stem_kernel},
            {"num_classes", cfg_.num_classes},
            {"input_size", cfg_.input_size}};
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, RngStream* rng = nullptr) override {
    std::vector<Shape> ignore;
    return forward_probed(tape, x, rng, nullptr);
  }

  // stage_shapes receives stem + five stage output shapes when non-null
  Tensor<T> forward_probed(Tape<T>* tape, const Tensor<T>& x, RngStream* rng,
                           std::vector<Shape>* stage_shapes) {
    Ctx<T> ctx{tape, this->mode, rng};
    Tensor<T> h = body_->forward_stages(ctx, x, stage_shapes);
    h = ops::gap2d(ctx.tape, h);
    return head_->forward(ctx, h);
  }

  void visit_params(const nn::ParamVisitor<T>& fn) override {
    body_->visit_params("body", fn);
    head_->visit_params("head", fn);
  }
  void visit_buffers(const nn::ParamVisitor<T>& fn) override {
    body_->visit_buffers("body", fn);
  }

  CostReport cost(const Shape& input_nchw) const override {
    check(input_nchw.size() == 4, ErrorKind::kAccounting, "cost: expects NCHW input shape");
    CostAccum acc;
    Shape h = body_->cost({input_nchw[1], input_nchw[2], input_nchw[3]}, acc);
    acc.flops += numel_of(h);
    Shape flat{h[0]};
    head_->cost(flat, acc);
    const int64_t batch = input_nchw[0];
    return {acc.params, acc.flops * batch, acc.norm_ops * batch};
  }

  void fold_batchnorm() override { body_->fold_batchnorm(); }

  ResidualBody<T>& body() { return *body_; }
  const LRNetConfig& config() const { return cfg_; }

 private:
  LRNetConfig cfg_;
  std::string preset_;
  std::unique_ptr<ResidualBody<T>> body_;
  std::unique_ptr<nn::Linear<T>> head_;
};

// Standard ResNet-18 shape (7x7/2 stem + pool, four stages), used as the
// parameter-count reference for LRNet.
template <typename T>
class ResNetRef : public Model<T> {
 public:
  ResNetRef(int64_t num_classes, int64_t input_size, uint64_t seed)
      : classes_(num_classes), input_size_(input_size) {
    RngStream rng(seed);
    body_ = std::make_unique<ResidualBody<T>>(7, 2, true, std::vector<int64_t>{64, 128, 256, 512},
                                              std::vector<int64_t>{2, 2, 2, 2},
                                              std::vector<int64_t>{1, 2, 2, 2}, rng.derive(1));
    head_ = std::make_unique<nn::Linear<T>>(512, num_classes, rng.derive(2));
  }

  std::string arch_id() const override { return "resnet18_ref"; }
  nlohmann::json arch_config() const override {
    return {{"kind", "resnet18_ref"}, {"num_classes", classes_}, {"input_size", input_size_}};
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, RngStream* rng = nullptr) override {
    Ctx<T> ctx{tape, this->mode, rng};
    Tensor<T> h = body_->forward(ctx, x);
    h = ops::gap2d(ctx.tape, h);
    return head_->forward(ctx, h);
  }

  void visit_params(const nn::ParamVisitor<T>& fn) override {
    body_->visit_params("body", fn);
    head_->visit_params("head", fn);
  }
  void visit_buffers(const nn::ParamVisitor<T>& fn) override {
    body_->visit_buffers("body", fn);
  }

  CostReport cost(const Shape& input_nchw) const override {
    CostAccum acc;
    Shape h = body_->cost({input_nchw[1], input_nchw[2], input_nchw[3]}, acc);
    acc.flops += numel_of(h);
    head_->cost({h[0]}, acc);
    return {acc.params, acc.flops * input_nchw[0], acc.norm_ops * input_nchw[0]};
  }

  void fold_batchnorm() override { body_->fold_batchnorm(); }

 private:
  int64_t classes_, input_size_;
  std::unique_ptr<ResidualBody<T>> body_;
  std::unique_ptr<nn::Linear<T>> head_;
};

// ---------------------------------------------------------------------------
// ViTFS
// ---------------------------------------------------------------------------

template <typename T>
class TransformerBlock : public nn::Layer<T> {
 public:
  TransformerBlock(int64_t dim, int64_t heads, double mlp_ratio, double ls_init, double drop_prob,
                   RngStream rng)
      : dim_(dim), heads_(heads), drop_prob_(drop_prob) {
    const auto hidden = static_cast<int64_t>(mlp_ratio * static_cast<double>(dim));
    bn1_.emplace(dim);
    qkv_ = std::make_unique<nn::Linear<T>>(dim, 3 * dim, rng.derive(1), true);
    proj_ = std::make_unique<nn::Linear<T>>(dim, dim, rng.derive(2), true);
    bn2_.emplace(dim);
    fc1_ = std::make_unique<nn::Linear<T>>(dim, hidden, rng.derive(3), true);
    fc2_ = std::make_unique<nn::Linear<T>>(hidden, dim, rng.derive(4), true);
    ls1_ = Tensor<T>::full(Shape{dim}, static_cast<T>(ls_init));
    ls2_ = Tensor<T>::full(Shape{dim}, static_cast<T>(ls_init));
    ls1_.set_requires_grad(true);
    ls2_.set_requires_grad(true);
  }

  std::string kind() const override { return "transformer_block"; }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) override {
    const int64_t n = x.shape()[0], t = x.shape()[1];
    const int64_t dh = dim_ / heads_;
    Tape<T>* tp = ctx.tape;

    Tensor<T> h = bn1_ ? bn1_->forward(ctx, x) : x;
    Tensor<T> qkv = qkv_->forward(ctx, h);  // [n, t, 3*dim]
    auto split_head = [&](int64_t which) {
      Tensor<T> part = ops::slice(tp, qkv, 2, which * dim_, dim_);    // [n,t,dim]
      Tensor<T> r = ops::reshape(tp, part, {n, t, heads_, dh});
      Tensor<T> p = ops::permute(tp, r, {0, 2, 1, 3});                // [n,heads,t,dh]
      return ops::reshape(tp, p, {n * heads_, t, dh});
    };
    Tensor<T> q = split_head(0);
    Tensor<T> k = split_head(1);
    Tensor<T> v = split_head(2);
    Tensor<T> kt = ops::permute(tp, k, {0, 2, 1});                    // [nh, dh, t]
    Tensor<T> scores = ops::bmm(tp, q, kt);                           // [nh, t, t]
    scores = ops::affine_scalar(tp, scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    Tensor<T> probs = ops::softmax_temperature(tp, scores, T(1));
    Tensor<T> ctx_v = ops::bmm(tp, probs, v);                         // [nh, t, dh]
    Tensor<T> merged = ops::reshape(tp, ctx_v, {n, heads_, t, dh});
    merged = ops::permute(tp, merged, {0, 2, 1, 3});
    merged = ops::reshape(tp, merged, {n, t, dim_});
    Tensor<T> attn_out = proj_->forward(ctx, merged);
    Tensor<T> x1 = residual_branch(tp, x, attn_out, ls1_, drop_prob_, ctx.mode, ctx.rng);

    Tensor<T> h2 = bn2_ ? bn2_->forward(ctx, x1) : x1;
    Tensor<T> m = fc1_->forward(ctx, h2);
    m = ops::gelu(tp, m);
    m = fc2_->forward(ctx, m);
    return residual_branch(tp, x1, m, ls2_, drop_prob_, ctx.mode, ctx.rng);
  }

  void visit_params(const std::string& p, const nn::ParamVisitor<T>& fn) override {
    if (bn1_) bn1_->visit_params(p + ".bn1", fn);
    qkv_->visit_params(p + ".qkv", fn);
    proj_->visit_params(p + ".proj", fn);
    fn(p + ".ls1", ls1_);
    if (bn2_) bn2_->visit_params(p + ".bn2", fn);
    fc1_->visit_params(p + ".fc1", fn);
    fc2_->visit_params(p + ".fc2", fn);
    fn(p + ".ls2", ls2_);
  }
  void visit_buffers(const std::string& p, const nn::ParamVisitor<T>& fn) override {
    if (bn1_) bn1_->visit_buffers(p + ".bn1", fn);
    if (bn2_) bn2_->visit_buffers(p + ".bn2", fn);
  }

  Shape cost(const Shape& in, CostAccum& acc) const override {
    // in = [T, C]
    const int64_t t = in[0];
    const int64_t dh = dim_ / heads_;
    Shape s = in;
    if (bn1_) s = bn1_->cost(s, acc);
    s = qkv_->cost(s, acc);
    // attention matmuls: scores and weighted sum, plus softmax (~5/elem)
    acc.flops += heads_ * t * t * (2 * dh) * 2 + 5 * heads_ * t * t;
    Shape p{t, dim_};
    p = proj_->cost(p, acc);
    acc.params += ls1_.numel() + ls2_.numel();
    acc.flops += 2 * t * dim_;  // layerscale + residual add
    Shape m = p;
    if (bn2_) m = bn2_->cost(m, acc);
    m = fc1_->cost(m, acc);
    acc.flops += 8 * numel_of(m);  // gelu
    m = fc2_->cost(m, acc);
    acc.flops += 2 * t * dim_;
    return p;
  }

  void fold_batchnorm() override {
    std::vector<double> a, b;
    if (bn1_) {
      bn1_->affine(a, b);
      qkv_->absorb_input_affine(a, b);
      bn1_.reset();
    }
    if (bn2_) {
      bn2_->affine(a, b);
      fc1_->absorb_input_affine(a, b);
      bn2_.reset();
    }
  }

 private:
  int64_t dim_, heads_;
  double drop_prob_;
  std::optional<nn::BatchNorm<T>> bn1_, bn2_;
  std::unique_ptr<nn::Linear<T>> qkv_, proj_, fc1_, fc2_;
  Tensor<T> ls1_, ls2_;
};

template <typename T>
class ViTFS : public Model<T> {
 public:
  ViTFS(ViTFSConfig cfg, uint64_t seed, std::string preset_name = "vitfs")
      : cfg_(cfg), preset_(std::move(preset_name)) {
    cfg_.validate();
    RngStream rng(seed);

    // conv stem: stride-2 3x3 conv+BN+ReLU repeated log2(patch) times with
    // channels doubling toward embed_dim, then a 1x1 projection
    int64_t steps = 0;
    for (int64_t p = cfg_.patch_size; p > 1; p /= 2) ++steps;
    stem_ = std::make_unique<nn::Sequential<T>>();
    int64_t in_ch = 3;
    for (int64_t i = 0; i < steps; ++i) {
      int64_t out_ch = cfg_.embed_dim >> (steps - 1 - i);
      if (out_ch < 8) out_ch = 8;
      const std::string nm = "conv" + std::to_string(i);
      stem_->add(nm, std::make_unique<nn::Conv2d<T>>(in_ch, out_ch, 3, 2, false,
                                                     rng.derive(10 + i)));
      stem_->add(nm + "_bn", std::make_unique<nn::BatchNorm<T>>(out_ch));
      stem_->add(nm + "_relu", std::make_unique<nn::ReLU<T>>());
      in_ch = out_ch;
    }
    stem_->add("proj", std::make_unique<nn::Conv2d<T>>(in_ch, cfg_.embed_dim, 1, 1, true,
                                                       rng.derive(20)));

    const int64_t grid = cfg_.input_size / cfg_.patch_size;
    patches_ = grid * grid;
    pos_ = sinusoidal_pos_enc_2d<T>(grid, grid, cfg_.embed_dim);

    if (cfg_.num_registers > 0) {
      registers_ = Tensor<T>(Shape{cfg_.num_registers, cfg_.embed_dim});
      RngStream rr = rng.derive(30);
      nn::init::trunc_normal_02(registers_, rr);
      registers_.set_requires_grad(true);
    }

    for (int64_t d = 0; d < cfg_.depth; ++d) {
      const double ramp = cfg_.depth > 1 ? static_cast<double>(d) / static_cast<double>(cfg_.depth - 1) : 0.0;
      blocks_.push_back(std::make_unique<TransformerBlock<T>>(
          cfg_.embed_dim, cfg_.heads, cfg_.mlp_ratio, cfg_.layerscale_init,
          cfg_.stochastic_depth_rate * ramp, rng.derive(40 + d)));
    }
    head_bn_.emplace(cfg_.embed_dim);
    head_ = std::make_unique<nn::Linear<T>>(cfg_.embed_dim, cfg_.num_classes, rng.derive(90), true);
  }

  std::string arch_id() const override { return preset_; }
  nlohmann::json arch_config() const override {
    return {{"kind", "vitfs"},          {"patch_size", cfg_.patch_size},
            {"embed_dim", cfg_.embed_dim}, {"depth", cfg_.depth},
            {"heads", cfg_.heads},      {"num_registers", cfg_.num_registers},
            {"num_classes", cfg_.num_classes}, {"input_size", cfg_.input_size}};
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, RngStream* rng = nullptr) override {
    Ctx<T> ctx{tape, this->mode, rng};
    check(x.ndim() == 4 && x.shape()[2] == cfg_.input_size && x.shape()[3] == cfg_.input_size,
          ErrorKind::kDimension, "vitfs: input must be NCHW at the configured size");
    const int64_t n = x.shape()[0];
    Tensor<T> h = stem_->forward(ctx, x);  // [n, D, g, g]
    h = ops::reshape(tape, h, {n, cfg_.embed_dim, patches_});
    h = ops::permute(tape, h, {0, 2, 1});  // [n, P, D]
    h = ops::add_rows(tape, h, pos_);
    if (cfg_.num_registers > 0) {
      Tensor<T> regs = ops::expand_rows(tape, registers_, n);  // [n, R, D]
      h = ops::concat2(tape, regs, h, 1);                      // registers first
    }
    for (auto& b : blocks_) h = b->forward(ctx, h);
    Tensor<T> pooled = ops::token_mean(tape, h, cfg_.num_registers, patches_);
    if (head_bn_) pooled = head_bn_->forward(ctx, pooled);
    return head_->forward(ctx, pooled);
  }

  void visit_params(const nn::ParamVisitor<T>& fn) override {
    stem_->visit_params("stem", fn);
    if (registers_.defined()) fn("registers", registers_);
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i]->visit_params("block" + std::to_string(i), fn);
    if (head_bn_) head_bn_->visit_params("head.bn", fn);
    head_->visit_params("head.fc", fn);
  }
  void visit_buffers(const nn::ParamVisitor<T>& fn) override {
    stem_->visit_buffers("stem", fn);
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i]->visit_buffers("block" + std::to_string(i), fn);
    if (head_bn_) head_bn_->visit_buffers("head.bn", fn);
  }

  CostReport cost(const Shape& input_nchw) const override {
    CostAccum acc;
    Shape h = stem_->cost({input_nchw[1], input_nchw[2], input_nchw[3]}, acc);
    const int64_t tokens = patches_ + cfg_.num_registers;
    acc.params += cfg_.num_registers * cfg_.embed_dim;
    Shape s{tokens, cfg_.embed_dim};
    for (const auto& b : blocks_) s = b->cost(s, acc);
    acc.flops += numel_of(s);  // pooling
    Shape pooled{cfg_.embed_dim};
    if (head_bn_) pooled = head_bn_->cost(pooled, acc);
    head_->cost(pooled, acc);
    (void)h;
    return {acc.params, acc.flops * input_nchw[0], acc.norm_ops * input_nchw[0]};
  }

  void fold_batchnorm() override {
    stem_->fold_batchnorm();
    for (auto& b : blocks_) b->fold_batchnorm();
    if (head_bn_) {
      std::vector<double> a, bshift;
      head_bn_->affine(a, bshift);
      head_->absorb_input_affine(a, bshift);
      head_bn_.reset();
    }
  }

  const ViTFSConfig& config() const { return cfg_; }
  int64_t num_patches() const { return patches_; }

 private:
  ViTFSConfig cfg_;
  std::string preset_;
  std::unique_ptr<nn::Sequential<T>> stem_;
  Tensor<T> pos_;         // fixed, parameter-free
  Tensor<T> registers_;   // learnable, excluded from pooling
  std::vector<std::unique_ptr<TransformerBlock<T>>> blocks_;
  std::optional<nn::BatchNorm<T>> head_bn_;
  std::unique_ptr<nn::Linear<T>> head_;
  int64_t patches_ = 0;
};

// ---------------------------------------------------------------------------
// PAM teacher
// ---------------------------------------------------------------------------

// ReLU(BN(conv1x1(F))) -> M non-negative part maps.
template <typename T>
class PamHead : public nn::Layer<T> {
 public:
  PamHead(int64_t in_ch, int64_t maps, RngStream rng)
      : conv_(in_ch, maps, 1, 1, false, rng.derive(1)), bn_(maps) {}

  std::string kind() const override { return "pam_head"; }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& f) override {
    Tensor<T> h = conv_.forward(ctx, f);
    if (bn_) h = bn_->forward(ctx, h);
    return ops::relu(ctx.tape, h);
  }

  void visit_params(const std::string& p, const nn::ParamVisitor<T>& fn) override {
    conv_.visit_params(p + ".conv", fn);
    if (bn_) bn_->visit_params(p + ".bn", fn);
  }
  void visit_buffers(const std::string& p, const nn::ParamVisitor<T>& fn) override {
    if (bn_) bn_->visit_buffers(p + ".bn", fn);
  }

  Shape cost(const Shape& in, CostAccum& acc) const override {
    Shape h = conv_.cost(in, acc);
    if (bn_) h = bn_->cost(h, acc);
    acc.flops += numel_of(h);
    return h;
  }

  void fold_batchnorm() override {
    if (bn_) {
      std::vector<double> a, b;
      bn_->affine(a, b);
      conv_.absorb_output_affine(a, b);
      bn_.reset();
    }
  }

 private:
  nn::Conv2d<T> conv_;
  std::optional<nn::BatchNorm<T>> bn_;
};

template <typename T>
struct TeacherOutput {
  Tensor<T> logits;       // [N, classes]
  Tensor<T> maps;         // [N, M, Hf, Wf], non-negative
  Tensor<T> features;     // [N, C, Hf, Wf]
};

// CNN backbone + PAM + bilinear attention pooling + linear classifier.
template <typename T>
class PamTeacher : public Model<T> {
 public:
  PamTeacher(LRNetConfig backbone_cfg, bool resnet_style_stem, int64_t num_maps, uint64_t seed,
             std::string preset_name)
      : cfg_(backbone_cfg), num_maps_(num_maps), preset_(std::move(preset_name)) {
    cfg_.validate();
    RngStream rng(seed);
    body_ = std::make_unique<ResidualBody<T>>(
        cfg_.stem_kernel, cfg_.stem_stride, resnet_style_stem,
        std::vector<int64_t>(cfg_.stage_widths.begin(), cfg_.stage_widths.end()),
        std::vector<int64_t>(cfg_.stage_blocks.begin(), cfg_.stage_blocks.end()),
        std::vector<int64_t>(cfg_.stage_strides.begin(), cfg_.stage_strides.end()),
        rng.derive(1));
    pam_ = std::make_unique<PamHead<T>>(body_->out_channels(), num_maps, rng.derive(2));
    head_ = std::make_unique<nn::Linear<T>>(num_maps * body_->out_channels(), cfg_.num_classes,
                                            rng.derive(3));
  }

  std::string arch_id() const override { return preset_; }
  nlohmann::json arch_config() const override {
    return {{"kind", "pam_teacher"},
            {"widths", cfg_.stage_widths},
            {"blocks", cfg_.stage_blocks},
            {"stem_kernel", cfg_.stem_kernel},
            {"num_maps", num_maps_},
            {"num_classes", cfg_.num_classes},
            {"input_size", cfg_.input_size}};
  }

  TeacherOutput<T> forward_detail(Tape<T>* tape, const Tensor<T>& x, RngStream* rng = nullptr) {
    Ctx<T> ctx{tape, this->mode, rng};
    TeacherOutput<T> out;
    out.features = body_->forward(ctx, x);
    out.maps = pam_->forward(ctx, out.features);
    Tensor<T> pooled = bilinear_attention_pool(tape, out.features, out.maps);
    out.logits = head_->forward(ctx, pooled);
    return out;
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, RngStream* rng = nullptr) override {
    return forward_detail(tape, x, rng).logits;
  }

  void visit_params(const nn::ParamVisitor<T>& fn) override {
    body_->visit_params("body", fn);
    pam_->visit_params("pam", fn);
    head_->visit_params("head", fn);
  }
  void visit_buffers(const nn::ParamVisitor<T>& fn) override {
    body_->visit_buffers("body", fn);
    pam_->visit_buffers("pam", fn);
  }

  CostReport cost(const Shape& input_nchw) const override {
    CostAccum acc;
    Shape f = body_->cost({input_nchw[1], input_nchw[2], input_nchw[3]}, acc);
    Shape m = pam_->cost(f, acc);
    // pooling bmm + normalization passes
    acc.flops += 2 * m[0] * f[0] * f[1] * f[2] + 4 * m[0] * f[0];
    head_->cost({m[0] * f[0]}, acc);
    return {acc.params, acc.flops * input_nchw[0], acc.norm_ops * input_nchw[0]};
  }

  void fold_batchnorm() override {
    body_->fold_batchnorm();
    pam_->fold_batchnorm();
  }

  int64_t num_maps() const { return num_maps_; }
  const LRNetConfig& config() const { return cfg_; }

 private:
  LRNetConfig cfg_;
  int64_t num_maps_;
  std::string preset_;
  std::unique_ptr<ResidualBody<T>> body_;
  std::unique_ptr<PamHead<T>> pam_;
  std::unique_ptr<nn::Linear<T>> head_;
};

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

inline LRNetConfig lrnet18_config(int64_t classes, int64_t input_size) {
  LRNetConfig c;
  c.stage_widths = {32, 64, 128, 256, 512};
  c.stage_blocks = {1, 2, 2, 2, 2};
  c.num_classes = classes;
  c.input_size = input_size;
  return c;
}

inline LRNetConfig lrnet34_config(int64_t classes, int64_t input_size) {
  LRNetConfig c = lrnet18_config(classes, input_size);
  c.stage_blocks = {2, 3, 4, 4, 2};
  return c;
}

inline ViTFSConfig vitfs_t_config(int64_t classes, int64_t input_size) {
  ViTFSConfig c;
  c.patch_size = 16;
  c.embed_dim = 192;
  c.depth = 12;
  c.heads = 3;
  c.mlp_ratio = 4.0;
  c.num_registers = 4;
  c.layerscale_init = 1e-4;
  c.stochastic_depth_rate = 0.1;
  c.num_classes = classes;
  c.input_size = input_size;
  return c;
}

constexpr int64_t kDefaultPamMaps = 32;

// Builders addressable by preset name: lrnet18, lrnet34, vitfs_t,
// resnet18_ref, teacher_pam_lrnet18, teacher_pam_lrnet34.
template <typename T>
std::unique_ptr<Model<T>> build_model(const std::string& preset, int64_t classes,
                                      int64_t input_size, uint64_t seed) {
  if (preset == "lrnet18")
    return std::make_unique<LrNet<T>>(lrnet18_config(classes, input_size), seed, preset);
  if (preset == "lrnet34")
    return std::make_unique<LrNet<T>>(lrnet34_config(classes, input_size), seed, preset);
  if (preset == "vitfs_t")
    return std::make_unique<ViTFS<T>>(vitfs_t_config(classes, input_size), seed, preset);
  if (preset == "resnet18_ref")
    return std::make_unique<ResNetRef<T>>(classes, input_size, seed);
  if (preset == "teacher_pam_lrnet18")
    return std::make_unique<PamTeacher<T>>(lrnet18_config(classes, input_size), false,
                                           kDefaultPamMaps, seed, preset);
  if (preset == "teacher_pam_lrnet34")
    return std::make_unique<PamTeacher<T>>(lrnet34_config(classes, input_size), false,
                                           kDefaultPamMaps, seed, preset);
  fail(ErrorKind::kConfig, "unknown architecture preset '" + preset + "'");
}

template <typename T>
int64_t count_params(Model<T>& m) {
  return m.param_count();
}

template <typename T>
int64_t count_flops(Model<T>& m, const Shape& input_nchw) {
  return m.cost(input_nchw).flops;
}

}  // namespace tgda::models
