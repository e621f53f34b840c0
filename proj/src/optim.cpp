#include "pild/optim.hpp"

#include <cmath>
#include <string>

namespace pild {

AdamState::AdamState(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamState::step() {
  for (std::size_t k = 0; k < params_.size(); ++k)
    if (!params_[k].has_grad())
      throw std::logic_error("adam_step: parameter " + std::to_string(k) +
                             " has no gradient");
  ++step_;
  Real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<Real>(step_));
  Real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<Real>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto g = params_[k].grad();
    auto p = params_[k].data_mut();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      Real mhat = m[i] / bc1;
      Real vhat = v[i] / bc2;
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (!std::isfinite(p[i]))
        throw NumericError("adam_step: parameter became non-finite");
    }
    params_[k].zero_grad();
  }
}

Real finite_diff_check(std::vector<Tensor>& params,
                       const std::function<Tensor()>& scalar_forward, Real h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be > 0");
  for (Tensor& p : params) p.zero_grad();
  Tape::instance().clear();
  Tensor loss = scalar_forward();
  backward(loss);

  Real worst = 0.0;
  NoGradGuard no_grad;
  for (Tensor& p : params) {
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
      Real err = std::abs(autograd[i] - fd) / (std::abs(fd) + 1e-12);
      worst = std::max(worst, err);
    }
  }
  for (Tensor& p : params) p.zero_grad();
  return worst;
}

}  // namespace pild
