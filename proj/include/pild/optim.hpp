#pragma once

#include <functional>
#include <vector>

#include "pild/tensor.hpp"

namespace pild {

struct AdamConfig {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

/// Per-parameter Adam moments. Shapes mirror the registered parameters;
/// the step counter advances by one per update.
class AdamState {
 public:
  AdamState(std::vector<Tensor> params, AdamConfig cfg);

  /// Bias-corrected Adam update, applied in place. Every registered
  /// parameter must carry a gradient; gradients are zeroed afterwards.
  void step();

  std::size_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  std::vector<Tensor>& params() { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<Real>> m_;
  std::vector<std::vector<Real>> v_;
  std::size_t step_ = 0;
  AdamConfig cfg_;
};

/// Max over all parameter elements of
/// |autodiff - central difference| / (|central difference| + 1e-12),
/// where the central difference of `scalar_forward` uses step h.
/// `scalar_forward` must be a pure function of the parameters.
Real finite_diff_check(std::vector<Tensor>& params,
                       const std::function<Tensor()>& scalar_forward, Real h);

}  // namespace pild
