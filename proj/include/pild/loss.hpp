#pragma once

#include <optional>
#include <vector>

#include "pild/denoiser.hpp"
#include "pild/optim.hpp"
#include "pild/physics.hpp"
#include "pild/schedule.hpp"

namespace pild {

enum class ResidualModelKind { Laplace, Gaussian };

/// Distribution placed on the virtual residual observation r_hat = 0.
struct ResidualModel {
  ResidualModelKind kind = ResidualModelKind::Laplace;
  Real b = 1.0;  // scale; must be > 0
};

/// Negative log-likelihood of residual r under the model, as a scalar tensor:
///   laplace:  (1/b)    ||r||_1   + n log(2b)
///   gaussian: (1/2b^2) ||r||_2^2 + n log(b sqrt(2 pi))
/// The additive constant carries no gradient; only the residual term does.
Tensor residual_nll(const Tensor& r, const ResidualModel& model);

/// The b-dependent constant of the NLL above, for diagnostics.
Real residual_nll_constant(std::size_t n, const ResidualModel& model);

/// Deterministic DDIM estimate of the clean sample from x_t, descending K
/// log-SNR-spaced sub-steps that end at 0. K = 1 is the direct inversion
/// x0 = (x_t - sqrt(1-ab_t) eps_hat) / sqrt(ab_t). Gradients flow through
/// every sub-step. `eps_hat_at_t`, when given, reuses an existing prediction
/// for the first sub-step.
Tensor estimate_x0(const NoisePredictor& net, const Tensor& x_t, int t,
                   const Tensor* cond, const NoiseSchedule& sched, int K,
                   const Tensor* eps_hat_at_t = nullptr);

struct LossConfig {
  PhysicsWeightConfig physics;  // c, w_max, gate kind
  ResidualModelKind residual_model = ResidualModelKind::Laplace;
  int substeps = 2;    // K used for the training-time x0* estimate
  Real gamma_snr = 5.0;
};

struct LossBreakdown {
  Real data_term = 0.0;
  Real physics_term = 0.0;
  Real total = 0.0;
  Real t = 0.0;             // timestep (batch mean for train_step)
  Real residual_l1 = 0.0;   // ||R(x0*)||_1, batch mean
  Real nll_constant = 0.0;  // b_t-dependent NLL constant, diagnostic only
};

struct LossTerms {
  Tensor total;  // scalar on the tape
  LossBreakdown report;
};

/// Single-sample PILD objective:
///   data_term    = min_snr_weight(t) * mean((eps - eps_hat)^2)
///   physics_term = physics_weight(t) * mean penalty of R(estimate_x0(...))
/// where the penalty is |r| under Laplace modeling and r^2 under Gaussian.
/// `residual_op` may be null (or c = 0) for the pure data-driven objective.
LossTerms pild_loss(const NoisePredictor& net, const Tensor& x0,
                    const Tensor* cond, int t, const Tensor& eps,
                    const ResidualFn* residual_op, const NoiseSchedule& sched,
                    const LossConfig& cfg);

/// One optimization step: per-element uniform t in [1, T] and fresh eps,
/// batch-mean loss, one backward pass, one Adam update. Throws NumericError
/// and leaves parameters untouched if anything non-finite appears.
LossBreakdown train_step(const NoisePredictor& net,
                         const std::vector<Tensor>& samples,
                         const std::vector<Tensor>* conditions,
                         const ResidualFn* residual_op,
                         const NoiseSchedule& sched, const LossConfig& cfg,
                         AdamState& adam, std::size_t batch_size, Rng& rng);

ResidualModelKind residual_model_from_string(const std::string& s);
std::string to_string(ResidualModelKind k);

}  // namespace pild
