#include "pild/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace pild {

std::vector<int> ddim_timesteps(const NoiseSchedule& sched, int from_t, int K) {
  if (from_t < 1 || from_t > sched.T)
    throw std::out_of_range("ddim_timesteps: from_t outside [1, T]");
  if (K < 1) throw ConfigError("ddim_timesteps: K must be >= 1");
  if (K > from_t)
    throw ConfigError("ddim_timesteps: K = " + std::to_string(K) +
                      " exceeds the " + std::to_string(from_t) +
                      " remaining levels");
  std::vector<int> ts(K);
  ts[0] = from_t;
  if (K == 1) return ts;

  auto log_snr = [&](int t) { return std::log(sched.snr(t)); };
  Real l_hi = log_snr(from_t);
  Real l_lo = log_snr(1);
  for (int i = 1; i < K; ++i) {
    Real target = l_hi + (l_lo - l_hi) * static_cast<Real>(i) / (K - 1);
    int best = 1;
    Real best_err = std::abs(log_snr(1) - target);
    for (int t = 2; t <= from_t; ++t) {
      Real err = std::abs(log_snr(t) - target);
      if (err < best_err) {
        best_err = err;
        best = t;
      }
    }
    // keep strictly decreasing while leaving room for the remaining steps
    int hi = ts[i - 1] - 1;
    int lo = 1 + (K - 1 - i);
    ts[i] = std::clamp(best, lo, hi);
  }
  return ts;
}

Tensor ddim_update(const Tensor& x_cur, const Tensor& eps_hat, int t_cur,
                   int t_next, const NoiseSchedule& sched) {
  if (t_cur < 1 || t_cur > sched.T)
    throw std::out_of_range("ddim_update: t_cur outside [1, T]");
  if (t_next < 0 || t_next >= t_cur)
    throw std::out_of_range("ddim_update: need 0 <= t_next < t_cur");
  Real ab_cur = sched.alpha_bar[t_cur];
  Tensor x0_hat = mul_scalar(sub(x_cur, mul_scalar(eps_hat, std::sqrt(1.0 - ab_cur))),
                             1.0 / std::sqrt(ab_cur));
  if (t_next == 0) return x0_hat;
  Real ab_next = sched.alpha_bar[t_next];
  Tensor direction = sub(x_cur, mul_scalar(x0_hat, std::sqrt(ab_cur)));
  return add(mul_scalar(x0_hat, std::sqrt(ab_next)),
             mul_scalar(direction, std::sqrt((1.0 - ab_next) / (1.0 - ab_cur))));
}

namespace {

Tensor run_ddim_chain(const NoisePredictor& net, Tensor x, const Tensor* cond,
                      const NoiseSchedule& sched, const std::vector<int>& steps) {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    int t_cur = steps[i];
    int t_next = i + 1 < steps.size() ? steps[i + 1] : 0;
    Tensor eps_hat = predict_noise(net, x, t_cur, cond);
    x = ddim_update(x, eps_hat, t_cur, t_next, sched);
  }
  return x;
}

}  // namespace

Tensor sample_ddim2(const NoisePredictor& net, const Shape& data_shape,
                    const Tensor* cond, const NoiseSchedule& sched, Rng& rng) {
  return sample_ddimK(net, data_shape, cond, sched, 2, rng);
}

Tensor sample_ddimK(const NoisePredictor& net, const Shape& data_shape,
                    const Tensor* cond, const NoiseSchedule& sched, int K,
                    Rng& rng) {
  Tensor x_T = Tensor::randn(data_shape, rng);
  NoGradGuard no_grad;
  return run_ddim_chain(net, x_T, cond, sched,
                        ddim_timesteps(sched, sched.T, K));
}

Tensor sample_ancestral(const NoisePredictor& net, const Shape& data_shape,
                        const Tensor* cond, const NoiseSchedule& sched,
                        Rng& rng) {
  Tensor x = Tensor::randn(data_shape, rng);
  for (int t = sched.T; t >= 1; --t) {
    Tensor noise;
    if (t > 1) noise = Tensor::randn(data_shape, rng);
    NoGradGuard no_grad;
    Tensor eps_hat = predict_noise(net, x, t, cond);
    Real ab_cur = sched.alpha_bar[t];
    Real ab_prev = sched.alpha_bar[t - 1];
    Real var = sched.posterior_var[t];
    // posterior mean in DDIM form: sqrt(ab_prev) x0_hat
    //   + sqrt(1 - ab_prev - B_t) eps_hat
    Tensor x0_hat =
        mul_scalar(sub(x, mul_scalar(eps_hat, std::sqrt(1.0 - ab_cur))),
                   1.0 / std::sqrt(ab_cur));
    Real dir_coeff = std::sqrt(std::max(1.0 - ab_prev - var, 0.0));
    x = add(mul_scalar(x0_hat, std::sqrt(ab_prev)),
            mul_scalar(eps_hat, dir_coeff));
    if (t > 1 && var > 0.0)
      x = add(x, mul_scalar(noise, std::sqrt(var)));
  }
  return x;
}

}  // namespace pild
