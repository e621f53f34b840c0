#include "pild/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace pild {

namespace {

void check_t_range(const char* op, int t, int T) {
  if (t < 1 || t > T)
    throw std::out_of_range(std::string(op) + ": t=" + std::to_string(t) +
                            " outside [1, " + std::to_string(T) + "]");
}

}  // namespace

NoiseSchedule build_schedule(ScheduleKind kind, int T, Real beta_min,
                             Real beta_max) {
  if (T < 2) throw ConfigError("build_schedule: T must be >= 2");
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
    throw ConfigError("build_schedule: need 0 < beta_min < beta_max < 1");

  NoiseSchedule s;
  s.T = T;
  s.beta.assign(T + 1, 0.0);

  if (kind == ScheduleKind::Linear) {
    for (int t = 1; t <= T; ++t) {
      Real frac = T == 1 ? 0.0 : static_cast<Real>(t - 1) / (T - 1);
      s.beta[t] = beta_min + (beta_max - beta_min) * frac;
    }
  } else {
    constexpr Real kShift = 0.008;
    auto f = [&](Real t) {
      Real a = ((t / T + kShift) / (1.0 + kShift)) * std::numbers::pi / 2.0;
      Real c = std::cos(a);
      return c * c;
    };
    Real f0 = f(0.0);
    Real prev = 1.0;
    for (int t = 1; t <= T; ++t) {
      Real ab = f(static_cast<Real>(t)) / f0;
      Real beta = 1.0 - ab / prev;
      s.beta[t] = std::clamp(beta, beta_min, beta_max);
      prev = ab;
    }
  }

  // alpha_bar re-derived from the (possibly clamped) betas
  s.alpha.assign(T + 1, 0.0);
  s.alpha_bar.assign(T + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  s.posterior_var.assign(T + 1, 0.0);
  for (int t = 1; t <= T; ++t)
    s.posterior_var[t] =
        (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
  return s;
}

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps,
                     const NoiseSchedule& sched) {
  check_t_range("forward_noise", t, sched.T);
  if (x0.shape() != eps.shape())
    throw ShapeError("forward_noise: x0 " + shape_str(x0.shape()) +
                     " vs eps " + shape_str(eps.shape()));
  Real ab = sched.alpha_bar[t];
  return add(mul_scalar(x0, std::sqrt(ab)),
             mul_scalar(eps, std::sqrt(1.0 - ab)));
}

Real gate(int t, int T, GateKind kind) {
  if (t < 0 || t > T)
    throw std::out_of_range("gate: t=" + std::to_string(t) + " outside [0, " +
                            std::to_string(T) + "]");
  Real tf = static_cast<Real>(t);
  Real Tf = static_cast<Real>(T);
  switch (kind) {
    case GateKind::None:
      return 1.0;
    case GateKind::Linear:
      return 2.0 - tf / Tf;
    case GateKind::Inverse:
      return Tf / (1.0 + tf);
    case GateKind::Log:
      return std::log(1.0 + Tf / (1.0 + tf));
  }
  return 1.0;
}

Real physics_weight(int t, const NoiseSchedule& sched,
                    const PhysicsWeightConfig& cfg) {
  check_t_range("physics_weight", t, sched.T);
  Real b = std::max(sched.posterior_var[t], 1e-8);
  Real w = gate(t, sched.T, cfg.gate) * cfg.c / b;
  return std::min(w, cfg.w_max);
}

Real min_snr_weight(int t, const NoiseSchedule& sched, Real gamma_snr) {
  check_t_range("min_snr_weight", t, sched.T);
  if (gamma_snr <= 0.0)
    throw ConfigError("min_snr_weight: gamma_snr must be > 0");
  Real ab = sched.alpha_bar[t];
  if (ab >= 1.0)
    throw NumericError("min_snr_weight: alpha_bar[t] = 1, SNR undefined");
  Real snr = ab / (1.0 - ab);
  return std::min(snr, gamma_snr) / snr;
}

GateKind gate_kind_from_string(const std::string& s) {
  if (s == "none") return GateKind::None;
  if (s == "linear") return GateKind::Linear;
  if (s == "inverse") return GateKind::Inverse;
  if (s == "log") return GateKind::Log;
  throw ConfigError("unknown gate kind: " + s);
}

std::string to_string(GateKind k) {
  switch (k) {
    case GateKind::None: return "none";
    case GateKind::Linear: return "linear";
    case GateKind::Inverse: return "inverse";
    case GateKind::Log: return "log";
  }
  return "?";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cosine") return ScheduleKind::Cosine;
  if (s == "linear") return ScheduleKind::Linear;
  throw ConfigError("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::Cosine ? "cosine" : "linear";
}

}  // namespace pild
