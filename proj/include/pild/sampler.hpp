#pragma once

#include <vector>

#include "pild/denoiser.hpp"
#include "pild/schedule.hpp"

namespace pild {

enum class SamplerKind { Ddim2, DdimK, Ancestral };

struct SamplerConfig {
  SamplerKind kind = SamplerKind::Ddim2;
  int steps = 10;  // K for DdimK
};

/// Strictly decreasing timestep ladder from `from_t` down to 1 with K
/// entries, spaced uniformly in log-SNR (geometric in the odds of
/// alpha_bar). Endpoints are pinned to from_t and 1, so K = 2 yields
/// {from_t, 1} and K = from_t yields every step. K = 1 yields {from_t}.
std::vector<int> ddim_timesteps(const NoiseSchedule& sched, int from_t, int K);

/// One deterministic DDIM update (eta = 0) from t_cur to t_next (t_next may
/// be 0, which returns the clean estimate):
///   x0_hat  = (x - sqrt(1 - ab_cur) eps_hat) / sqrt(ab_cur)
///   x_next  = sqrt(ab_next) x0_hat
///           + sqrt((1 - ab_next)/(1 - ab_cur)) (x - sqrt(ab_cur) x0_hat)
/// Differentiable; this is also the exact line-for-line jump used by the
/// two-step sampler.
Tensor ddim_update(const Tensor& x_cur, const Tensor& eps_hat, int t_cur,
                   int t_next, const NoiseSchedule& sched);

/// Two-step DDIM: x_T -> x_1 -> x_0 with noise predictions at T and 1.
Tensor sample_ddim2(const NoisePredictor& net, const Shape& data_shape,
                    const Tensor* cond, const NoiseSchedule& sched, Rng& rng);

/// Deterministic DDIM along K timesteps from T down to 0.
Tensor sample_ddimK(const NoisePredictor& net, const Shape& data_shape,
                    const Tensor* cond, const NoiseSchedule& sched, int K,
                    Rng& rng);

/// Full T-step stochastic reverse chain; per-step noise scaled by
/// sqrt(posterior_var[t]). With posterior_var forced to zero the chain
/// coincides with T-step deterministic DDIM.
Tensor sample_ancestral(const NoisePredictor& net, const Shape& data_shape,
                        const Tensor* cond, const NoiseSchedule& sched,
                        Rng& rng);

}  // namespace pild
