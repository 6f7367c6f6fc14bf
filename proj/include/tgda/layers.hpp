#pragma once

#include <functional>
#include <memory>
#include <string>

#include "tgda/ops.hpp"
#include "tgda/rng.hpp"

namespace tgda::nn {

enum class Mode { kTrain, kEval };

template <typename T>
struct Ctx {
  Tape<T>* tape = nullptr;
  Mode mode = Mode::kEval;
  RngStream* rng = nullptr;  // consumed by stochastic depth
};

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

// params / FLOPs / normalization-op accounting, accumulated over a forward
// shape walk. FLOP convention: multiply-accumulates count as 2, bias adds and
// elementwise ops as 1 per element, a normalized element contributes 2 FLOPs
// and 1 norm op.
struct CostAccum {
  int64_t params = 0;
  int64_t flops = 0;
  int64_t norm_ops = 0;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) = 0;
  virtual void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    (void)prefix;
    (void)fn;
  }
  virtual void visit_buffers(const std::string& prefix, const ParamVisitor<T>& fn) {
    (void)prefix;
    (void)fn;
  }
  // Shape walk + accounting. Layers that do not implement accounting must
  // fail loudly rather than be skipped.
  virtual Shape cost(const Shape& in, CostAccum& acc) const {
    (void)in;
    (void)acc;
    fail(ErrorKind::kAccounting, "cost accounting not implemented for layer kind '" + kind() + "'");
  }
  // Absorb adjacent batch-norm layers into linear maps; default: nothing.
  virtual void fold_batchnorm() {}
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

namespace init {
// He-normal for conv/linear followed by ReLU-family activations.
template <typename T>
void he_normal(Tensor<T>& w, int64_t fan_in, RngStream& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < w.numel(); ++i) w.at(i) = static_cast<T>(rng.normal(0.0, stddev));
}
template <typename T>
void trunc_normal_02(Tensor<T>& w, RngStream& rng) {
  for (int64_t i = 0; i < w.numel(); ++i) {
    double v = rng.normal(0.0, 0.02);
    if (v > 0.06) v = 0.06;
    if (v < -0.06) v = -0.06;
    w.at(i) = static_cast<T>(v);
  }
}
}  // namespace init

// ---------------------------------------------------------------------------
// Conv2d with SAME-style geometry: output spatial extent is exactly in/stride.
// Asymmetric zero-padding (and edge-cropping for 1x1 stride-2 projections)
// keeps the backend's exact-extent contract satisfied.
// ---------------------------------------------------------------------------
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride, bool bias, RngStream rng)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride) {
    weight_ = Tensor<T>(Shape{out_ch, in_ch, kernel, kernel});
    init::he_normal(weight_, in_ch * kernel * kernel, rng);
    weight_.set_requires_grad(true);
    if (bias) {
      bias_ = Tensor<T>::zeros(Shape{out_ch});
      bias_.set_requires_grad(true);
    }
    const int64_t total = kernel_ >= stride_ ? kernel_ - stride_ : 0;
    pad_lo_ = total / 2;
    pad_hi_ = total - pad_lo_;
    crop_ = kernel_ < stride_ ? stride_ - kernel_ : 0;
  }

  std::string kind() const override { return "conv2d"; }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) override {
    Tensor<T> h = x;
    if (crop_ > 0) h = ops::crop2d(ctx.tape, h, h.shape()[2] - crop_, h.shape()[3] - crop_);
    if (pad_lo_ == pad_hi_)
      return ops::conv2d(ctx.tape, h, weight_, bias_, stride_, pad_lo_);
    h = ops::zero_pad2d(ctx.tape, h, pad_lo_, pad_hi_, pad_lo_, pad_hi_);
    return ops::conv2d(ctx.tape, h, weight_, bias_, stride_, 0);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) override {
    fn(prefix + ".weight", weight_);
    if (bias_.defined()) fn(prefix + ".bias", bias_);
  }

  Shape cost(const Shape& in, CostAccum& acc) const override {
    check(in.size() == 3 && in[0] == in_ch_, ErrorKind::kAccounting,
          "conv2d cost: bad input shape " + shape_str(in));
    const int64_t oh = in[1] / stride_, ow = in[2] / stride_;
    acc.params += weight_.numel() + (bias_.defined() ? out_ch_ : 0);
    acc.flops += 2 * kernel_ * kernel_ * in_ch_ * out_ch_ * oh * ow;
    if (bias_.defined()) acc.flops += out_ch_ * oh * ow;
    return {out_ch_, oh, ow};
  }

  // Fold y = a*(conv(x)+b0) + shift into the kernel and bias.
  void absorb_output_affine(const std::vector<double>& scale, const std::vector<double>& shift) {
    if (!bias_.defined()) {
      bias_ = Tensor<T>::zeros(Shape{out_ch_});
      bias_.set_requires_grad(true);
    }
    const int64_t per_out = in_ch_ * kernel_ * kernel_;
    for (int64_t o = 0; o < out_ch_; ++o) {
      for (int64_t i = 0; i < per_out; ++i)
        weight_.at(o * per_out + i) =
            static_cast<T>(static_cast<double>(weight_.at(o * per_out + i)) * scale[static_cast<size_t>(o)]);
      bias_.at(o) = static_cast<T>(static_cast<double>(bias_.at(o)) * scale[static_cast<size_t>(o)] +
                                   shift[static_cast<size_t>(o)]);
    }
  }

  int64_t out_channels() const { return out_ch_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias_tensor() { return bias_; }

 private:
  int64_t in_ch_, out_ch_, kernel_, stride_;
  int64_t pad_lo_ = 0, pad_hi_ = 0, crop_ = 0;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

// ---------------------------------------------------------------------------
template <typename T>
class BatchNorm : public Layer<T> {
 public:
  explicit BatchNorm(int64_t channels, T momentum = T(0.1), T eps = T(1e-5))
      : channels_(channels), momentum_(momentum), eps_(eps) {
    gamma_ = Tensor<T>::ones(Shape{channels});
    beta_ = Tensor<T>::zeros(Shape{channels});
    gamma_.set_requires_grad(true);
    beta_.set_requires_grad(true);
    running_mean_ = Tensor<T>::zeros(Shape{channels});
    running_var_ = Tensor<T>::ones(Shape{channels});
  }

  std::string kind() const override { return "batch_norm"; }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) override {
    const auto mode = ctx.mode == Mode::kTrain ? ops::BnMode::kTrain : ops::BnMode::kEval;
    return ops::batch_norm(ctx.tape, x, gamma_, beta_, running_mean_, running_var_, mode,
                           momentum_, eps_);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) override {
    fn(prefix + ".gamma", gamma_);
    fn(prefix + ".beta", beta_);
  }
  void visit_buffers(const std::string& prefix, const ParamVisitor<T>& fn) override {
    fn(prefix + ".running_mean", running_mean_);
    fn(prefix + ".running_var", running_var_);
  }

  Shape cost(const Shape& in, CostAccum& acc) const override {
    acc.params += 2 * channels_;
    const int64_t elems = numel_of(in);
    acc.flops += 2 * elems;
    acc.norm_ops += elems;
    return in;
  }

  // eval-mode affine coefficients y = a*x + b, computed in double
  void affine(std::vector<double>& a, std::vector<double>& b) const {
    a.resize(static_cast<size_t>(channels_));
    b.resize(static_cast<size_t>(channels_));
    for (int64_t c = 0; c < channels_; ++c) {
      const double g = static_cast<double>(gamma_.at(c));
      const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_.at(c)) +
                                         static_cast<double>(eps_));
      a[static_cast<size_t>(c)] = g * inv;
      b[static_cast<size_t>(c)] = static_cast<double>(beta_.at(c)) -
                                  g * inv * static_cast<double>(running_mean_.at(c));
    }
  }

  int64_t channels() const { return channels_; }

 private:
  int64_t channels_;
  T momentum_, eps_;
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
};

// ---------------------------------------------------------------------------
template <typename T>
class ReLU : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) override { return ops::relu(ctx.tape, x); }
  Shape cost(const Shape& in, CostAccum& acc) const override {
    acc.flops += numel_of(in);
    return in;
  }
};

template <typename T>
class GELU : public Layer<T> {
 public:
  std::string kind() const override { return "gelu"; }
  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) override { return ops::gelu(ctx.tape, x); }
  Shape cost(const Shape& in, CostAccum& acc) const override {
    acc.flops += 8 * numel_of(in);
    return in;
  }
};

// ---------------------------------------------------------------------------
template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(int64_t in_f, int64_t out_f, RngStream rng, bool vit_init = false)
      : in_f_(in_f), out_f_(out_f) {
    weight_ = Tensor<T>(Shape{out_f, in_f});
    if (vit_init)
      init::trunc_normal_02(weight_, rng);
    else
      init::he_normal(weight_, in_f, rng);
    weight_.set_requires_grad(true);
    bias_ = Tensor<T>::zeros(Shape{out_f});
    bias_.set_requires_grad(true);
  }

  std::string kind() const override { return "linear"; }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) override {
    return ops::linear(ctx.tape, x, weight_, bias_);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) override {
    fn(prefix + ".weight", weight_);
    fn(prefix + ".bias", bias_);
  }

  Shape cost(const Shape& in, CostAccum& acc) const override {
    check(!in.empty() && in.back() == in_f_, ErrorKind::kAccounting,
          "linear cost: bad input shape " + shape_str(in));
    int64_t rows = 1;
    for (size_t i = 0; i + 1 < in.size(); ++i) rows *= in[i];
    acc.params += weight_.numel() + bias_.numel();
    acc.flops += rows * (2 * in_f_ * out_f_ + out_f_);
    Shape out = in;
    out.back() = out_f_;
    return out;
  }

  // Fold a preceding per-channel affine x' = a*x + b: W' = W*diag(a),
  // b' = bias + W @ b.
  void absorb_input_affine(const std::vector<double>& a, const std::vector<double>& b) {
    for (int64_t o = 0; o < out_f_; ++o) {
      double shift = static_cast<double>(bias_.at(o));
      for (int64_t i = 0; i < in_f_; ++i) {
        const double w = static_cast<double>(weight_.at(o * in_f_ + i));
        shift += w * b[static_cast<size_t>(i)];
        weight_.at(o * in_f_ + i) = static_cast<T>(w * a[static_cast<size_t>(i)]);
      }
      bias_.at(o) = static_cast<T>(shift);
    }
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias_tensor() { return bias_; }
  int64_t in_features() const { return in_f_; }
  int64_t out_features() const { return out_f_; }

 private:
  int64_t in_f_, out_f_;
  Tensor<T> weight_, bias_;
};

// ---------------------------------------------------------------------------
template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  MaxPool2d(int64_t kernel, int64_t stride) : kernel_(kernel), stride_(stride) {
    const int64_t total = kernel_ >= stride_ ? kernel_ - stride_ : 0;
    pad_lo_ = total / 2;
    pad_hi_ = total - pad_lo_;
  }
  std::string kind() const override { return "max_pool2d"; }
  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) override {
    Tensor<T> h = x;
    if (pad_lo_ || pad_hi_) h = ops::zero_pad2d(ctx.tape, h, pad_lo_, pad_hi_, pad_lo_, pad_hi_);
    return ops::max_pool2d(ctx.tape, h, kernel_, stride_);
  }
  Shape cost(const Shape& in, CostAccum& acc) const override {
    const int64_t oh = in[1] / stride_, ow = in[2] / stride_;
    acc.flops += kernel_ * kernel_ * in[0] * oh * ow;
    return {in[0], oh, ow};
  }

 private:
  int64_t kernel_, stride_, pad_lo_ = 0, pad_hi_ = 0;
};

template <typename T>
class GlobalAvgPool2d : public Layer<T> {
 public:
  std::string kind() const override { return "global_avg_pool2d"; }
  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) override { return ops::gap2d(ctx.tape, x); }
  Shape cost(const Shape& in, CostAccum& acc) const override {
    acc.flops += numel_of(in);
    return {in[0]};
  }
};

// ---------------------------------------------------------------------------
template <typename T>
class Sequential : public Layer<T> {
 public:
  Sequential() = default;
  explicit Sequential(std::string name) : name_(std::move(name)) {}

  Sequential& add(std::string child_name, LayerPtr<T> layer) {
    names_.push_back(std::move(child_name));
    children_.push_back(std::move(layer));
    return *this;
  }

  std::string kind() const override { return "sequential"; }

  Tensor<T> forward(Ctx<T>& ctx, const Tensor<T>& x) override {
    Tensor<T> h = x;
    for (auto& c : children_) h = c->forward(ctx, h);
    return h;
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) override {
    for (size_t i = 0; i < children_.size(); ++i)
      children_[i]->visit_params(prefix + "." + names_[i], fn);
  }
  void visit_buffers(const std::string& prefix, const ParamVisitor<T>& fn) override {
    for (size_t i = 0; i < children_.size(); ++i)
      children_[i]->visit_buffers(prefix + "." + names_[i], fn);
  }

  Shape cost(const Shape& in, CostAccum& acc) const override {
    Shape s = in;
    for (const auto& c : children_) s = c->cost(s, acc);
    return s;
  }

  void fold_batchnorm() override {
    // conv+bn pairs collapse; everything else folds recursively
    for (size_t i = 0; i + 1 < children_.size(); ++i) {
      auto* conv = dynamic_cast<Conv2d<T>*>(children_[i].get());
      auto* bn = dynamic_cast<BatchNorm<T>*>(children_[i + 1].get());
      if (conv && bn) {
        std::vector<double> a, b;
        bn->affine(a, b);
        conv->absorb_output_affine(a, b);
        children_.erase(children_.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        names_.erase(names_.begin() + static_cast<std::ptrdiff_t>(i) + 1);
      }
    }
    for (auto& c : children_) c->fold_batchnorm();
  }

  size_t size() const { return children_.size(); }
  Layer<T>* child(size_t i) { return children_[i].get(); }
  const std::string& child_name(size_t i) const { return names_[i]; }

 private:
  std::string name_;
  std::vector<std::string> names_;
  std::vector<LayerPtr<T>> children_;
};

}  // namespace tgda::nn
