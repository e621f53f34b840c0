#pragma once

// Shared fixtures for the test suites: the exact-inversion oracle net and
// small finite-difference helpers.

#include <cmath>
#include <functional>
#include <vector>

#include "pild/denoiser.hpp"
#include "pild/schedule.hpp"

namespace pild::testing {

/// Noise "predictor" that is exactly consistent with one known clean sample:
/// eps(x_t, t) = (x_t - sqrt(ab_t) x0) / sqrt(1 - ab_t). Every DDIM route
/// through it must invert back to x0.
class OracleNet : public NoisePredictor {
 public:
  OracleNet(Tensor x0, const NoiseSchedule& sched)
      : x0_(std::move(x0)), sched_(&sched) {}

  Tensor predict(const Tensor& x_t, int t, const Tensor*) const override {
    Real ab = sched_->alpha_bar[t];
    return mul_scalar(sub(x_t, mul_scalar(x0_, std::sqrt(ab))),
                      1.0 / std::sqrt(1.0 - ab));
  }
  Conditioning conditioning() const override { return Conditioning::None; }

 private:
  Tensor x0_;
  const NoiseSchedule* sched_;
};

/// Max relative error between the autodiff gradient of scalar_forward and
/// central finite differences over the given leaf tensors (parameters or
/// inputs alike). The denominator carries an absolute floor of 1e-4: at
/// h = 1e-5 the difference quotient of an O(1..10) loss has a roundoff
/// floor near 1e-9, so components with a smaller true gradient cannot be
/// resolved relatively; the floor turns the check into the usual
/// |ad - fd| <= atol + rtol |fd| form with atol = rtol * 1e-4.
inline Real fd_check(std::vector<Tensor> leaves,
                     const std::function<Tensor()>& scalar_forward,
                     Real h = 1e-5) {
  for (Tensor& p : leaves) p.zero_grad();
  Tape::instance().clear();
  Tensor loss = scalar_forward();
  backward(loss);
  Real worst = 0.0;
  NoGradGuard no_grad;
  for (Tensor& p : leaves) {
    std::vector<Real> autograd(p.numel(), 0.0);
    if (p.has_grad()) {
      auto g = p.grad();
      autograd.assign(g.begin(), g.end());
    }
    auto data = p.data_mut();
    for (std::size_t i = 0; i < data.size(); ++i) {
      Real orig = data[i];
      data[i] = orig + h;
      Real fp = scalar_forward().value();
      data[i] = orig - h;
      Real fm = scalar_forward().value();
      data[i] = orig;
      Real fd = (fp - fm) / (2.0 * h);
      Real err = std::abs(autograd[i] - fd) / (std::abs(fd) + 1e-4);
      worst = std::max(worst, err);
    }
    p.zero_grad();
  }
  return worst;
}

/// Copies parameters between nets by name; extra parameters on either side
/// are left alone. Used to build a FiLM net whose backbone matches an
/// unconditional one.
inline void copy_params_by_name(DenoiserNet& dst, const DenoiserNet& src) {
  for (const auto& d : dst.named_parameters())
    for (const auto& s : src.named_parameters())
      if (d.name == s.name && d.tensor.shape() == s.tensor.shape()) {
        Tensor t = d.tensor;
        auto out = t.data_mut();
        std::copy(s.tensor.data().begin(), s.tensor.data().end(), out.begin());
      }
}

inline Real max_abs_diff(const Tensor& a, const Tensor& b) {
  Real m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace pild::testing
