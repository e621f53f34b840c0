#pragma once

#include <vector>

#include "pild/tensor.hpp"

namespace pild {

enum class ScheduleKind { Cosine, Linear };
enum class GateKind { None, Linear, Inverse, Log };

/// Per-step noise schedule. beta/alpha/alpha_bar are 1-indexed by timestep t
/// (index 0 of alpha_bar is the empty product, alpha_bar[0] = 1).
/// posterior_var[t] is the fixed reverse-process variance
/// B_t = (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]) * beta_t, so B_1 = 0.
struct NoiseSchedule {
  int T = 0;
  std::vector<Real> beta;           // beta[t], t in 1..T (beta[0] unused)
  std::vector<Real> alpha;          // 1 - beta[t]
  std::vector<Real> alpha_bar;      // alpha_bar[0..T], alpha_bar[0] = 1
  std::vector<Real> posterior_var;  // B[t], t in 1..T (B[0] unused)

  Real snr(int t) const { return alpha_bar[t] / (1.0 - alpha_bar[t]); }
};

struct PhysicsWeightConfig {
  Real c = 0.005;       // physics-penalty strength; 0 disables the term
  Real w_max = 100.0;   // hard cap on the combined per-step weight
  GateKind gate = GateKind::Log;
};

/// Builds a schedule of T steps. The cosine form follows
/// alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1+s)) * pi/2), s=0.008,
/// with the derived beta_t clamped into [beta_min, beta_max] and alpha_bar
/// re-accumulated from the clamped betas. The linear form interpolates beta
/// from beta_min to beta_max.
NoiseSchedule build_schedule(ScheduleKind kind, int T, Real beta_min,
                             Real beta_max);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps,
                     const NoiseSchedule& sched);

/// Timestep gate G(t). Forms: none -> 1, linear -> 2 - t/T,
/// inverse -> T/(1+t), log -> log(1 + T/(1+t)).
Real gate(int t, int T, GateKind kind);

/// Combined physics weight min(G(t) * c / max(B_t, 1e-8), w_max).
Real physics_weight(int t, const NoiseSchedule& sched,
                    const PhysicsWeightConfig& cfg);

/// Min-SNR weight for the noise-matching term: min(SNR_t, gamma) / SNR_t.
Real min_snr_weight(int t, const NoiseSchedule& sched, Real gamma_snr);

GateKind gate_kind_from_string(const std::string& s);
std::string to_string(GateKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

}  // namespace pild
