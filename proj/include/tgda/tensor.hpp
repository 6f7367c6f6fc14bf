#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "tgda/common.hpp"
#include "tgda/rng.hpp"

namespace tgda {

// Dense row-major tensor with an optional gradient buffer of the same shape.
// Copying a Tensor copies a handle: two copies share storage. Ops never
// mutate their inputs; the only sanctioned in-place writes are parameter
// updates in the optimizer and gradient accumulation during backward.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor supports f32/f64 only");

  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until ensure_grad()
    bool requires_grad = false;
  };

 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<Impl>()) {
    for (int64_t d : shape)
      check(d > 0, ErrorKind::kDimension, "tensor extent must be positive, got " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(numel_of(impl_->shape)), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
    check(numel_of(shape) == static_cast<int64_t>(values.size()), ErrorKind::kDimension,
          "value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

  static Tensor randn(Shape shape, RngStream& rng, T stddev = T(1), T mean = T(0)) {
    Tensor t(std::move(shape));
    for (T& v : t.impl_->data) v = static_cast<T>(rng.normal(mean, stddev));
    return t;
  }
  static Tensor rand_uniform(Shape shape, RngStream& rng, T lo = T(0), T hi = T(1)) {
    Tensor t(std::move(shape));
    for (T& v : t.impl_->data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  T* data() { return impl_->data.data(); }
  const T* data() const { return impl_->data.data(); }
  std::vector<T>& vec() { return impl_->data; }
  const std::vector<T>& vec() const { return impl_->data; }

  T& at(int64_t i) { return impl_->data[static_cast<size_t>(i)]; }
  T at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Allocates a zero gradient buffer on first use.
  T* grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad.data();
  }
  const std::vector<T>& grad_vec() const { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }
  void drop_grad() { impl_->grad.clear(); }

  // Identity of the underlying buffer; used to detect aliasing.
  const void* id() const { return impl_.get(); }

  // Deep copy of values (not grad); the copy does not require grad.
  Tensor clone_values() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  bool same_shape(const Tensor& o) const { return impl_->shape == o.impl_->shape; }

  bool all_finite() const {
    for (T v : impl_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::shared_ptr<Impl> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace tgda
