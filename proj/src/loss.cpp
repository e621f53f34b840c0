#include "pild/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pild/sampler.hpp"

namespace pild {

Real residual_nll_constant(std::size_t n, const ResidualModel& model) {
  if (!(model.b > 0.0)) throw ConfigError("residual_nll: scale b must be > 0");
  Real nf = static_cast<Real>(n);
  if (model.kind == ResidualModelKind::Laplace)
    return nf * std::log(2.0 * model.b);
  return nf * std::log(model.b * std::sqrt(2.0 * std::numbers::pi));
}

Tensor residual_nll(const Tensor& r, const ResidualModel& model) {
  Real constant = residual_nll_constant(r.numel(), model);
  if (model.kind == ResidualModelKind::Laplace)
    return add_scalar(mul_scalar(l1_norm(r), 1.0 / model.b), constant);
  return add_scalar(mul_scalar(sum_all(mul(r, r)), 0.5 / (model.b * model.b)),
                    constant);
}

Tensor estimate_x0(const NoisePredictor& net, const Tensor& x_t, int t,
                   const Tensor* cond, const NoiseSchedule& sched, int K,
                   const Tensor* eps_hat_at_t) {
  std::vector<int> steps = ddim_timesteps(sched, t, K);
  Tensor x = x_t;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    int t_cur = steps[i];
    int t_next = i + 1 < steps.size() ? steps[i + 1] : 0;
    Tensor eps_hat = (i == 0 && eps_hat_at_t != nullptr)
                         ? *eps_hat_at_t
                         : predict_noise(net, x, t_cur, cond);
    x = ddim_update(x, eps_hat, t_cur, t_next, sched);
  }
  return x;
}

LossTerms pild_loss(const NoisePredictor& net, const Tensor& x0,
                    const Tensor* cond, int t, const Tensor& eps,
                    const ResidualFn* residual_op, const NoiseSchedule& sched,
                    const LossConfig& cfg) {
  Tensor x_t = forward_noise(x0, t, eps, sched);
  Tensor eps_hat = predict_noise(net, x_t, t, cond);
  Tensor diff = sub(eps, eps_hat);
  Real lambda_t = min_snr_weight(t, sched, cfg.gamma_snr);
  Tensor data_term = mul_scalar(mean_all(mul(diff, diff)), lambda_t);

  LossTerms out;
  out.report.t = static_cast<Real>(t);
  out.report.data_term = data_term.value();

  bool physics_active = residual_op != nullptr && *residual_op &&
                        cfg.physics.c > 0.0;
  if (physics_active) {
    // near t = 0 there are fewer levels left than the configured sub-steps
    int k_eff = std::min(cfg.substeps, t);
    Tensor x0_star = estimate_x0(net, x_t, t, cond, sched, k_eff, &eps_hat);
    Tensor r = (*residual_op)(x0_star);
    Real n = static_cast<Real>(r.numel());
    Tensor l1 = l1_norm(r);
    out.report.residual_l1 = l1.value();
    Tensor penalty = cfg.residual_model == ResidualModelKind::Laplace
                         ? mul_scalar(l1, 1.0 / n)
                         : mean_all(mul(r, r));
    Real w = physics_weight(t, sched, cfg.physics);
    Tensor physics_term = mul_scalar(penalty, w);
    out.report.physics_term = physics_term.value();
    // diagnostic: the constant of the NLL at scale b_t = B_t / c
    Real b_t = std::max(sched.posterior_var[t], 1e-8) / cfg.physics.c;
    out.report.nll_constant = residual_nll_constant(
        r.numel(), ResidualModel{cfg.residual_model, b_t});
    out.total = add(data_term, physics_term);
  } else {
    out.total = data_term;
  }
  out.report.total = out.total.value();
  if (!std::isfinite(out.report.total))
    throw NumericError("pild_loss: non-finite loss at t=" + std::to_string(t));
  return out;
}

LossBreakdown train_step(const NoisePredictor& net,
                         const std::vector<Tensor>& samples,
                         const std::vector<Tensor>* conditions,
                         const ResidualFn* residual_op,
                         const NoiseSchedule& sched, const LossConfig& cfg,
                         AdamState& adam, std::size_t batch_size, Rng& rng) {
  if (samples.empty()) throw DataError("train_step: empty dataset");
  if (batch_size < 1) throw ConfigError("train_step: batch size must be >= 1");
  if (conditions != nullptr && conditions->size() != samples.size())
    throw DataError("train_step: conditions do not pair with samples");

  auto fail_cleanly = [&] {
    Tape::instance().clear();
    for (Tensor& p : adam.params()) p.zero_grad();
  };

  LossBreakdown mean{};
  Tensor batch_total;
  try {
    for (std::size_t k = 0; k < batch_size; ++k) {
      std::size_t idx = rng.uniform_int(samples.size());
      int t = 1 + static_cast<int>(rng.uniform_int(
                  static_cast<std::uint64_t>(sched.T)));
      Tensor eps = Tensor::randn(samples[idx].shape(), rng);
      const Tensor* cond =
          conditions != nullptr ? &(*conditions)[idx] : nullptr;
      LossTerms terms =
          pild_loss(net, samples[idx], cond, t, eps, residual_op, sched, cfg);
      batch_total = k == 0 ? terms.total : add(batch_total, terms.total);
      mean.data_term += terms.report.data_term;
      mean.physics_term += terms.report.physics_term;
      mean.total += terms.report.total;
      mean.t += terms.report.t;
      mean.residual_l1 += terms.report.residual_l1;
      mean.nll_constant += terms.report.nll_constant;
    }
    Real inv_b = 1.0 / static_cast<Real>(batch_size);
    batch_total = mul_scalar(batch_total, inv_b);
    mean.data_term *= inv_b;
    mean.physics_term *= inv_b;
    mean.t *= inv_b;
    mean.residual_l1 *= inv_b;
    mean.nll_constant *= inv_b;
    mean.total = mean.data_term + mean.physics_term;

    backward(batch_total);
    for (Tensor& p : adam.params()) {
      if (!p.has_grad()) continue;
      for (Real g : p.grad())
        if (!std::isfinite(g))
          throw NumericError("train_step: non-finite gradient");
    }
  } catch (...) {
    fail_cleanly();
    throw;
  }
  adam.step();
  return mean;
}

ResidualModelKind residual_model_from_string(const std::string& s) {
  if (s == "laplace") return ResidualModelKind::Laplace;
  if (s == "gaussian") return ResidualModelKind::Gaussian;
  throw ConfigError("unknown residual model: " + s);
}

std::string to_string(ResidualModelKind k) {
  return k == ResidualModelKind::Laplace ? "laplace" : "gaussian";
}

}  // namespace pild
