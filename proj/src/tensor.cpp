#include "pild/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace pild {

namespace {

using detail::TensorImpl;
using Impl = std::shared_ptr<TensorImpl>;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

void check_shape_nonempty(const Shape& s, const char* what) {
  if (s.empty()) throw ShapeError(std::string(what) + ": empty shape");
  for (auto d : s)
    if (d == 0) throw ShapeError(std::string(what) + ": zero-sized dimension");
}

void check_finite(const char* op, const Tensor& t) {
  for (Real v : t.data()) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite output of ") + op);
  }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

bool grad_wanted(const Tensor& t) {
  return t.requires_grad() && Tape::instance().recording();
}

/// Marks out as grad-carrying and records fn when recording is active and
/// any listed input requires grad.
template <typename Fn>
void record(Tensor& out, std::initializer_list<const Tensor*> inputs, Fn fn) {
  if (!Tape::instance().recording()) return;
  bool any = false;
  for (const Tensor* t : inputs) any = any || (*t).requires_grad();
  if (!any) return;
  out.set_requires_grad(true);
  Tape::instance().push(std::move(fn));
}

/// Output gradient span, or empty if this output never received one
/// (dead branch); callers skip accumulation in that case.
std::span<const Real> out_grad(const Impl& o) {
  if (o->grad.empty()) return {};
  return o->grad;
}

void accumulate(const Impl& t, std::size_t i, Real v) {
  t->ensure_grad();
  t->grad[i] += v;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape_nonempty(shape, "zeros");
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data_mut().begin(), t.data_mut().end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  check_shape_nonempty(shape, "from");
  if (shape_numel(shape) != values.size())
    throw ShapeError("from: " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (Real& v : t.data_mut()) v = rng.normal();
  return t;
}

Real Tensor::value() const {
  if (!is_scalar())
    throw ShapeError("value(): tensor " + shape_str(shape()) + " is not scalar");
  return impl_->data[0];
}

std::span<const Real> Tensor::grad() const {
  if (impl_->grad.empty())
    throw std::logic_error("grad(): no gradient has been accumulated");
  return impl_->grad;
}

std::span<Real> Tensor::grad_mut() {
  impl_->ensure_grad();
  return impl_->grad;
}

// --- Tape -------------------------------------------------------------------

Tape& Tape::instance() {
  thread_local Tape tape;
  return tape;
}

void Tape::run_backward() {
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  ops_.clear();
}

void backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar())
    throw ShapeError("backward: loss must be a scalar tensor");
  if (Tape::instance().size() == 0)
    throw std::logic_error("backward: tape is empty (already cleared?)");
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0;
  Tape::instance().run_backward();
}

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto od = out.data_mut();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  check_finite("add", out);
  record(out, {&a, &b}, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    if (ai->requires_grad)
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(ai, i, g[i]);
    if (bi->requires_grad)
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(bi, i, g[i]);
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto od = out.data_mut();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
  check_finite("sub", out);
  record(out, {&a, &b}, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    if (ai->requires_grad)
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(ai, i, g[i]);
    if (bi->requires_grad)
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(bi, i, -g[i]);
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto od = out.data_mut();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  check_finite("mul", out);
  record(out, {&a, &b}, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    if (ai->requires_grad)
      for (std::size_t i = 0; i < g.size(); ++i)
        accumulate(ai, i, g[i] * bi->data[i]);
    if (bi->requires_grad)
      for (std::size_t i = 0; i < g.size(); ++i)
        accumulate(bi, i, g[i] * ai->data[i]);
  });
  return out;
}

Tensor add_scalar(const Tensor& a, Real c) {
  Tensor out = Tensor::zeros(a.shape());
  auto od = out.data_mut();
  auto ad = a.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + c;
  check_finite("add_scalar", out);
  record(out, {&a}, [ai = a.impl(), oi = out.impl()] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) accumulate(ai, i, g[i]);
  });
  return out;
}

Tensor mul_scalar(const Tensor& a, Real c) {
  Tensor out = Tensor::zeros(a.shape());
  auto od = out.data_mut();
  auto ad = a.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * c;
  check_finite("mul_scalar", out);
  record(out, {&a}, [ai = a.impl(), oi = out.impl(), c] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) accumulate(ai, i, g[i] * c);
  });
  return out;
}

// --- channel broadcasts -----------------------------------------------------

namespace {

// For x [C, d1, d2, ...] returns (C, inner) with inner = d1*d2*...
std::pair<std::size_t, std::size_t> channel_split(const char* op,
                                                  const Tensor& x,
                                                  const Tensor& per_channel) {
  if (per_channel.ndim() != 1)
    throw ShapeError(std::string(op) + ": per-channel operand must be 1-D, got " +
                     shape_str(per_channel.shape()));
  std::size_t c = x.shape()[0];
  if (per_channel.numel() != c)
    throw ShapeError(std::string(op) + ": channel count " +
                     shape_str(per_channel.shape()) + " does not match x " +
                     shape_str(x.shape()));
  return {c, x.numel() / c};
}

}  // namespace

Tensor channel_add(const Tensor& x, const Tensor& b) {
  auto [c, inner] = channel_split("channel_add", x, b);
  Tensor out = Tensor::zeros(x.shape());
  auto od = out.data_mut();
  auto xd = x.data();
  auto bd = b.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < inner; ++i)
      od[ch * inner + i] = xd[ch * inner + i] + bd[ch];
  check_finite("channel_add", out);
  record(out, {&x, &b},
         [xi = x.impl(), bi = b.impl(), oi = out.impl(), c, inner] {
           auto g = out_grad(oi);
           if (g.empty()) return;
           if (xi->requires_grad)
             for (std::size_t i = 0; i < g.size(); ++i) accumulate(xi, i, g[i]);
           if (bi->requires_grad)
             for (std::size_t ch = 0; ch < c; ++ch) {
               Real s = 0.0;
               for (std::size_t i = 0; i < inner; ++i) s += g[ch * inner + i];
               accumulate(bi, ch, s);
             }
         });
  return out;
}

Tensor channel_mul(const Tensor& x, const Tensor& s) {
  auto [c, inner] = channel_split("channel_mul", x, s);
  Tensor out = Tensor::zeros(x.shape());
  auto od = out.data_mut();
  auto xd = x.data();
  auto sd = s.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < inner; ++i)
      od[ch * inner + i] = xd[ch * inner + i] * sd[ch];
  check_finite("channel_mul", out);
  record(out, {&x, &s},
         [xi = x.impl(), si = s.impl(), oi = out.impl(), c, inner] {
           auto g = out_grad(oi);
           if (g.empty()) return;
           if (xi->requires_grad)
             for (std::size_t ch = 0; ch < c; ++ch)
               for (std::size_t i = 0; i < inner; ++i)
                 accumulate(xi, ch * inner + i, g[ch * inner + i] * si->data[ch]);
           if (si->requires_grad)
             for (std::size_t ch = 0; ch < c; ++ch) {
               Real acc = 0.0;
               for (std::size_t i = 0; i < inner; ++i)
                 acc += g[ch * inner + i] * xi->data[ch * inner + i];
               accumulate(si, ch, acc);
             }
         });
  return out;
}

// --- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ShapeError("matmul: expects 2-D operands, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::size_t m = a.shape()[0], k = a.shape()[1];
  std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  auto od = out.data_mut();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      Real av = ad[i * k + p];
      for (std::size_t j = 0; j < n; ++j) od[i * n + j] += av * bd[p * n + j];
    }
  check_finite("matmul", out);
  record(out, {&a, &b},
         [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
           auto g = out_grad(oi);
           if (g.empty()) return;
           if (ai->requires_grad) {
             ai->ensure_grad();
             for (std::size_t i = 0; i < m; ++i)
               for (std::size_t j = 0; j < n; ++j) {
                 Real gv = g[i * n + j];
                 for (std::size_t p = 0; p < k; ++p)
                   ai->grad[i * k + p] += gv * bi->data[p * n + j];
               }
           }
           if (bi->requires_grad) {
             bi->ensure_grad();
             for (std::size_t i = 0; i < m; ++i)
               for (std::size_t p = 0; p < k; ++p) {
                 Real av = ai->data[i * k + p];
                 for (std::size_t j = 0; j < n; ++j)
                   bi->grad[p * n + j] += av * g[i * n + j];
               }
           }
         });
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2)
    throw ShapeError("transpose: expects 2-D, got " + shape_str(a.shape()));
  std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out = Tensor::zeros({n, m});
  auto od = out.data_mut();
  auto ad = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) od[j * m + i] = ad[i * n + j];
  record(out, {&a}, [ai = a.impl(), oi = out.impl(), m, n] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ai->grad[i * n + j] += g[j * m + i];
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.ndim() != 2)
    throw ShapeError("linear: weight must be 2-D, got " +
                     shape_str(weight.shape()));
  std::size_t out_dim = weight.shape()[0], in_dim = weight.shape()[1];
  if (bias.ndim() != 1 || bias.numel() != out_dim)
    throw ShapeError("linear: bias " + shape_str(bias.shape()) +
                     " does not match weight " + shape_str(weight.shape()));
  bool tokens = x.ndim() == 2;
  if (!tokens && x.ndim() != 1)
    throw ShapeError("linear: input must be 1-D or 2-D, got " +
                     shape_str(x.shape()));
  std::size_t rows = tokens ? x.shape()[0] : 1;
  std::size_t xin = tokens ? x.shape()[1] : x.shape()[0];
  if (xin != in_dim)
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " does not match weight " + shape_str(weight.shape()));

  Tensor out = tokens ? Tensor::zeros({rows, out_dim})
                      : Tensor::zeros({out_dim});
  auto od = out.data_mut();
  auto xd = x.data();
  auto wd = weight.data();
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out_dim; ++o) {
      Real acc = bd[o];
      const Real* wrow = &wd[o * in_dim];
      const Real* xrow = &xd[r * in_dim];
      for (std::size_t i = 0; i < in_dim; ++i) acc += wrow[i] * xrow[i];
      od[r * out_dim + o] = acc;
    }
  check_finite("linear", out);
  record(out, {&x, &weight, &bias},
         [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl(),
          rows, in_dim, out_dim] {
           auto g = out_grad(oi);
           if (g.empty()) return;
           if (wi->requires_grad) wi->ensure_grad();
           if (xi->requires_grad) xi->ensure_grad();
           if (bi->requires_grad) bi->ensure_grad();
           for (std::size_t r = 0; r < rows; ++r)
             for (std::size_t o = 0; o < out_dim; ++o) {
               Real gv = g[r * out_dim + o];
               if (gv == 0.0) continue;
               if (bi->requires_grad) bi->grad[o] += gv;
               if (wi->requires_grad)
                 for (std::size_t i = 0; i < in_dim; ++i)
                   wi->grad[o * in_dim + i] += gv * xi->data[r * in_dim + i];
               if (xi->requires_grad)
                 for (std::size_t i = 0; i < in_dim; ++i)
                   xi->grad[r * in_dim + i] += gv * wi->data[o * in_dim + i];
             }
         });
  return out;
}

// --- convolution and resampling ----------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  if (x.ndim() != 3)
    throw ShapeError("conv2d: input must be [C,H,W], got " +
                     shape_str(x.shape()));
  if (kernel.ndim() != 4)
    throw ShapeError("conv2d: kernel must be [Cout,Cin,kh,kw], got " +
                     shape_str(kernel.shape()));
  std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::size_t cout = kernel.shape()[0];
  std::size_t kh = kernel.shape()[2], kw = kernel.shape()[3];
  if (kernel.shape()[1] != cin)
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) +
                     " does not match input " + shape_str(x.shape()));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ShapeError("conv2d: kernel size must be odd for symmetric padding");
  if (bias.ndim() != 1 || bias.numel() != cout)
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) +
                     " does not match kernel " + shape_str(kernel.shape()));
  std::size_t ph = kh / 2, pw = kw / 2;

  Tensor out = Tensor::zeros({cout, h, w});
  auto od = out.data_mut();
  auto xd = x.data();
  auto kd = kernel.data();
  auto bd = bias.data();
  const std::size_t plane = h * w;
  for (std::size_t co = 0; co < cout; ++co) {
    Real* op = &od[co * plane];
    for (std::size_t i = 0; i < plane; ++i) op[i] = bd[co];
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const Real* ip = &xd[ci * plane];
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          Real kv = kd[((co * cin + ci) * kh + ky) * kw + kx];
          if (kv == 0.0) continue;
          // shifted plane accumulation over the valid overlap range
          std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) -
                              static_cast<std::ptrdiff_t>(ph);
          std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) -
                              static_cast<std::ptrdiff_t>(pw);
          std::size_t y0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
          std::size_t y1 = dy > 0 ? h - static_cast<std::size_t>(dy) : h;
          std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          std::size_t x1 = dx > 0 ? w - static_cast<std::size_t>(dx) : w;
          for (std::size_t y = y0; y < y1; ++y) {
            Real* orow = &op[y * w];
            const Real* irow = &ip[(y + dy) * w + dx];
            for (std::size_t xq = x0; xq < x1; ++xq)
              orow[xq] += kv * irow[xq];
          }
        }
    }
  }
  check_finite("conv2d", out);
  record(out, {&x, &kernel, &bias},
         [xi = x.impl(), ki = kernel.impl(), bi = bias.impl(), oi = out.impl(),
          cin, cout, h, w, kh, kw, ph, pw] {
           auto g = out_grad(oi);
           if (g.empty()) return;
           const std::size_t plane = h * w;
           if (bi->requires_grad) {
             bi->ensure_grad();
             for (std::size_t co = 0; co < cout; ++co) {
               Real s = 0.0;
               for (std::size_t i = 0; i < plane; ++i) s += g[co * plane + i];
               bi->grad[co] += s;
             }
           }
           bool need_x = xi->requires_grad, need_k = ki->requires_grad;
           if (need_x) xi->ensure_grad();
           if (need_k) ki->ensure_grad();
           if (!need_x && !need_k) return;
           for (std::size_t co = 0; co < cout; ++co) {
             const Real* gp = &g[co * plane];
             for (std::size_t ci = 0; ci < cin; ++ci) {
               const Real* ip = &xi->data[ci * plane];
               Real* ig = need_x ? &xi->grad[ci * plane] : nullptr;
               for (std::size_t ky = 0; ky < kh; ++ky)
                 for (std::size_t kx = 0; kx < kw; ++kx) {
                   std::size_t kidx = ((co * cin + ci) * kh + ky) * kw + kx;
                   Real kv = ki->data[kidx];
                   std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) -
                                       static_cast<std::ptrdiff_t>(ph);
                   std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) -
                                       static_cast<std::ptrdiff_t>(pw);
                   std::size_t y0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
                   std::size_t y1 = dy > 0 ? h - static_cast<std::size_t>(dy) : h;
                   std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
                   std::size_t x1 = dx > 0 ? w - static_cast<std::size_t>(dx) : w;
                   Real kacc = 0.0;
                   for (std::size_t y = y0; y < y1; ++y) {
                     const Real* grow = &gp[y * w];
                     const Real* irow = &ip[(y + dy) * w + dx];
                     Real* igrow = need_x ? &ig[(y + dy) * w + dx] : nullptr;
                     for (std::size_t xq = x0; xq < x1; ++xq) {
                       Real gv = grow[xq];
                       if (need_k) kacc += gv * irow[xq];
                       if (need_x) igrow[xq] += gv * kv;
                     }
                   }
                   if (need_k) ki->grad[kidx] += kacc;
                 }
             }
           }
         });
  return out;
}

Tensor avg_pool2(const Tensor& x) {
  if (x.ndim() != 3)
    throw ShapeError("avg_pool2: input must be [C,H,W], got " +
                     shape_str(x.shape()));
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("avg_pool2: H and W must be even, got " +
                     shape_str(x.shape()));
  std::size_t oh = h / 2, ow = w / 2;
  Tensor out = Tensor::zeros({c, oh, ow});
  auto od = out.data_mut();
  auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xq = 0; xq < ow; ++xq) {
        std::size_t base = ch * h * w + 2 * y * w + 2 * xq;
        od[(ch * oh + y) * ow + xq] =
            0.25 * (xd[base] + xd[base + 1] + xd[base + w] + xd[base + w + 1]);
      }
  record(out, {&x}, [xi = x.impl(), oi = out.impl(), c, h, w, oh, ow] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    xi->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xq = 0; xq < ow; ++xq) {
          Real gv = 0.25 * g[(ch * oh + y) * ow + xq];
          std::size_t base = ch * h * w + 2 * y * w + 2 * xq;
          xi->grad[base] += gv;
          xi->grad[base + 1] += gv;
          xi->grad[base + w] += gv;
          xi->grad[base + w + 1] += gv;
        }
  });
  return out;
}

Tensor upsample_nearest2(const Tensor& x) {
  if (x.ndim() != 3)
    throw ShapeError("upsample_nearest2: input must be [C,H,W], got " +
                     shape_str(x.shape()));
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::size_t oh = 2 * h, ow = 2 * w;
  Tensor out = Tensor::zeros({c, oh, ow});
  auto od = out.data_mut();
  auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xq = 0; xq < ow; ++xq)
        od[(ch * oh + y) * ow + xq] = xd[(ch * h + y / 2) * w + xq / 2];
  record(out, {&x}, [xi = x.impl(), oi = out.impl(), c, h, w, oh, ow] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    xi->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xq = 0; xq < ow; ++xq)
          xi->grad[(ch * h + y / 2) * w + xq / 2] +=
              g[(ch * oh + y) * ow + xq];
  });
  return out;
}

// --- nonlinearities -----------------------------------------------------------

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto od = out.data_mut();
  auto xd = x.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    // subgradient at the kink is 0
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xi->data[i] > 0.0) accumulate(xi, i, g[i]);
  });
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto od = out.data_mut();
  auto xd = x.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    Real s = 1.0 / (1.0 + std::exp(-xd[i]));
    od[i] = xd[i] * s;
  }
  check_finite("silu", out);
  record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      Real s = 1.0 / (1.0 + std::exp(-xi->data[i]));
      accumulate(xi, i, g[i] * (s * (1.0 + xi->data[i] * (1.0 - s))));
    }
  });
  return out;
}

Tensor softmax_last(const Tensor& x) {
  std::size_t n = x.shape().back();
  std::size_t rows = x.numel() / n;
  Tensor out = Tensor::zeros(x.shape());
  auto od = out.data_mut();
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = &xd[r * n];
    Real* orow = &od[r * n];
    Real mx = xr[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
    Real z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      orow[i] = std::exp(xr[i] - mx);
      z += orow[i];
    }
    for (std::size_t i = 0; i < n; ++i) orow[i] /= z;
  }
  check_finite("softmax", out);
  record(out, {&x}, [xi = x.impl(), oi = out.impl(), rows, n] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    xi->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* y = &oi->data[r * n];
      const Real* gr = &g[r * n];
      Real dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += gr[i] * y[i];
      for (std::size_t i = 0; i < n; ++i)
        xi->grad[r * n + i] += (gr[i] - dot) * y[i];
    }
  });
  return out;
}

Tensor layer_norm_last(const Tensor& x) {
  constexpr Real kEps = 1e-5;
  std::size_t n = x.shape().back();
  std::size_t rows = x.numel() / n;
  Tensor out = Tensor::zeros(x.shape());
  auto od = out.data_mut();
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = &xd[r * n];
    Real mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += xr[i];
    mu /= static_cast<Real>(n);
    Real var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<Real>(n);
    Real inv = 1.0 / std::sqrt(var + kEps);
    for (std::size_t i = 0; i < n; ++i) od[r * n + i] = (xr[i] - mu) * inv;
  }
  check_finite("layer_norm", out);
  record(out, {&x}, [xi = x.impl(), oi = out.impl(), rows, n] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    xi->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* xr = &xi->data[r * n];
      const Real* gr = &g[r * n];
      Real mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += xr[i];
      mu /= static_cast<Real>(n);
      Real var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
      var /= static_cast<Real>(n);
      Real inv = 1.0 / std::sqrt(var + kEps);
      Real gmean = 0.0, gxmean = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        Real xh = (xr[i] - mu) * inv;
        gmean += gr[i];
        gxmean += gr[i] * xh;
      }
      gmean /= static_cast<Real>(n);
      gxmean /= static_cast<Real>(n);
      for (std::size_t i = 0; i < n; ++i) {
        Real xh = (xr[i] - mu) * inv;
        xi->grad[r * n + i] += (gr[i] - gmean - xh * gxmean) * inv;
      }
    }
  });
  return out;
}

// --- reductions ----------------------------------------------------------------

Tensor l1_norm(const Tensor& x) {
  Real s = 0.0;
  for (Real v : x.data()) s += std::abs(v);
  Tensor out = Tensor::scalar(s);
  check_finite("l1_norm", out);
  record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    Real gv = g[0];
    for (std::size_t i = 0; i < xi->data.size(); ++i) {
      Real v = xi->data[i];
      Real sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      if (sgn != 0.0) accumulate(xi, i, gv * sgn);
    }
  });
  return out;
}

Tensor mean_all(const Tensor& x) {
  Real s = 0.0;
  for (Real v : x.data()) s += v;
  Real n = static_cast<Real>(x.numel());
  Tensor out = Tensor::scalar(s / n);
  check_finite("mean", out);
  record(out, {&x}, [xi = x.impl(), oi = out.impl(), n] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    Real gv = g[0] / n;
    for (std::size_t i = 0; i < xi->data.size(); ++i) accumulate(xi, i, gv);
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  Real s = 0.0;
  for (Real v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite("sum", out);
  record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    Real gv = g[0];
    for (std::size_t i = 0; i < xi->data.size(); ++i) accumulate(xi, i, gv);
  });
  return out;
}

// --- structure ------------------------------------------------------------------

Tensor concat0(const Tensor& a, const Tensor& b) {
  if (a.ndim() != b.ndim())
    throw ShapeError("concat0: rank mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  for (std::size_t i = 1; i < a.ndim(); ++i)
    if (a.shape()[i] != b.shape()[i])
      throw ShapeError("concat0: trailing dims differ, " +
                       shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Shape os = a.shape();
  os[0] += b.shape()[0];
  Tensor out = Tensor::zeros(os);
  auto od = out.data_mut();
  std::copy(a.data().begin(), a.data().end(), od.begin());
  std::copy(b.data().begin(), b.data().end(), od.begin() + a.numel());
  record(out, {&a, &b}, [ai = a.impl(), bi = b.impl(), oi = out.impl()] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    std::size_t na = ai->data.size();
    if (ai->requires_grad)
      for (std::size_t i = 0; i < na; ++i) accumulate(ai, i, g[i]);
    if (bi->requires_grad)
      for (std::size_t i = 0; i < bi->data.size(); ++i)
        accumulate(bi, i, g[na + i]);
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  check_shape_nonempty(new_shape, "reshape");
  std::size_t n = shape_numel(new_shape);
  if (n != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  Tensor out = Tensor::from(std::move(new_shape),
                            {x.data().begin(), x.data().end()});
  record(out, {&x}, [xi = x.impl(), oi = out.impl()] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) accumulate(xi, i, g[i]);
  });
  return out;
}

Tensor take_channel(const Tensor& x, std::size_t c) {
  if (x.ndim() < 2)
    throw ShapeError("take_channel: input must have rank >= 2, got " +
                     shape_str(x.shape()));
  if (c >= x.shape()[0])
    throw ShapeError("take_channel: channel " + std::to_string(c) +
                     " out of range for " + shape_str(x.shape()));
  Shape os(x.shape().begin() + 1, x.shape().end());
  std::size_t inner = x.numel() / x.shape()[0];
  Tensor out = Tensor::zeros(os);
  auto od = out.data_mut();
  auto xd = x.data();
  std::copy(xd.begin() + c * inner, xd.begin() + (c + 1) * inner, od.begin());
  record(out, {&x}, [xi = x.impl(), oi = out.impl(), c, inner] {
    auto g = out_grad(oi);
    if (g.empty()) return;
    for (std::size_t i = 0; i < inner; ++i)
      accumulate(xi, c * inner + i, g[i]);
  });
  return out;
}

}  // namespace pild
