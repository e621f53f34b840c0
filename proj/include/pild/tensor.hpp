#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pild/errors.hpp"
#include "pild/rng.hpp"

namespace pild {

using Real = double;
using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  bool requires_grad = false;
  std::vector<Real> grad;  // empty until first accumulation

  std::size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Dense n-dimensional array of doubles with an optional gradient slot.
/// Copies are shallow (shared storage); ops produce fresh tensors.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values,
                     bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t ndim() const { return impl_->shape.size(); }
  bool is_scalar() const { return numel() == 1; }

  std::span<const Real> data() const { return impl_->data; }
  std::span<Real> data_mut() { return impl_->data; }
  Real operator[](std::size_t i) const { return impl_->data[i]; }
  Real& at(std::size_t i) { return impl_->data[i]; }

  /// Value of a one-element tensor.
  Real value() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const Real> grad() const;
  std::span<Real> grad_mut();  // allocates zeros on first use
  void zero_grad() { impl_->grad.clear(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of the primitives executed during a forward pass. A
/// backward() walk visits entries once, in reverse, then clears the record.
/// One tape per thread; gradient recording can be suspended with NoGradGuard.
class Tape {
 public:
  static Tape& instance();

  bool recording() const { return enabled_; }
  void push(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  void run_backward();

 private:
  friend struct NoGradGuard;
  std::vector<std::function<void()>> ops_;
  bool enabled_ = true;
};

/// Suspends tape recording within a scope (inference, data generation).
struct NoGradGuard {
  NoGradGuard() : prev_(Tape::instance().enabled_) {
    Tape::instance().enabled_ = false;
  }
  ~NoGradGuard() { Tape::instance().enabled_ = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Reverse pass from a scalar loss. Populates grad on every requires_grad
/// tensor reachable from the recorded ops, then clears the tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Primitives. Every op validates shapes, checks its output for non-finite
// values, and records a backward rule when an input requires grad.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);        // same shape
Tensor mul(const Tensor& a, const Tensor& b);        // same shape, elementwise
Tensor add_scalar(const Tensor& a, Real c);
Tensor mul_scalar(const Tensor& a, Real c);

/// b broadcast over the trailing axes of x: x[c,...] + b[c].
Tensor channel_add(const Tensor& x, const Tensor& b);
/// s broadcast over the trailing axes of x: x[c,...] * s[c].
Tensor channel_mul(const Tensor& x, const Tensor& s);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                   // 2-D

/// y = x W^T + b with W [out,in], b [out]. x is [in] or a token matrix
/// [T,in]; the output matches ([out] or [T,out]).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// 2-D convolution, stride 1, symmetric zero padding (kh/2, kw/2); odd
/// kernel sizes only. x [Cin,H,W], kernel [Cout,Cin,kh,kw], bias [Cout].
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

Tensor avg_pool2(const Tensor& x);                   // [C,H,W] -> [C,H/2,W/2]
Tensor upsample_nearest2(const Tensor& x);           // [C,H,W] -> [C,2H,2W]

Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softmax_last(const Tensor& x);
Tensor layer_norm_last(const Tensor& x);             // eps = 1e-5, no affine

Tensor l1_norm(const Tensor& x);                     // scalar; d|x|/dx(0) := 0
Tensor mean_all(const Tensor& x);                    // scalar
Tensor sum_all(const Tensor& x);                     // scalar

Tensor concat0(const Tensor& a, const Tensor& b);    // along axis 0
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor take_channel(const Tensor& x, std::size_t c);  // x[c,...] along axis 0

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace pild
