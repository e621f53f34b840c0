#include "pild/physics.hpp"

#include <cmath>

namespace pild {

namespace {

using detail::TensorImpl;

void check_field(const char* op, const Tensor& t, std::size_t s) {
  if (t.ndim() != 2 || t.shape()[0] != s || t.shape()[1] != s)
    throw ShapeError(std::string(op) + ": expected [" + std::to_string(s) +
                     "," + std::to_string(s) + "], got " + shape_str(t.shape()));
}

}  // namespace

Real trapezoid_sum(const Tensor& field) {
  std::size_t s = field.shape()[0];
  Real h = 1.0 / static_cast<Real>(s - 1);
  auto d = field.data();
  Real acc = 0.0;
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      Real w = 1.0;
      if (i == 0 || i == s - 1) w *= 0.5;
      if (j == 0 || j == s - 1) w *= 0.5;
      acc += w * d[i * s + j];
    }
  return acc * h * h;
}

DarcyProblem make_darcy_problem(std::size_t s) {
  if (s < 4) throw ConfigError("make_darcy_problem: s must be >= 4");
  constexpr Real kWidth = 0.1;
  constexpr Real kAmp = 10.0;
  Real h = 1.0 / static_cast<Real>(s - 1);
  auto bump = [&](Real cx, Real cy) {
    Tensor f = Tensor::zeros({s, s});
    auto d = f.data_mut();
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        Real x = i * h, y = j * h;
        Real r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        d[i * s + j] = kAmp * std::exp(-r2 / (2.0 * kWidth * kWidth));
      }
    return f;
  };
  Tensor src = bump(0.25, 0.25);
  Tensor sink = bump(0.75, 0.75);
  // balance amplitudes so the weighted sum cancels exactly
  Real ratio = trapezoid_sum(src) / trapezoid_sum(sink);
  Tensor f = Tensor::zeros({s, s});
  for (std::size_t i = 0; i < f.numel(); ++i)
    f.at(i) = src[i] - ratio * sink[i];
  DarcyProblem prob{s, f};
  validate_darcy_problem(prob);
  return prob;
}

void validate_darcy_problem(const DarcyProblem& prob) {
  if (prob.s < 4) throw ConfigError("DarcyProblem: s must be >= 4");
  check_field("DarcyProblem", prob.forcing, prob.s);
  Real fmax = 0.0;
  for (Real v : prob.forcing.data()) fmax = std::max(fmax, std::abs(v));
  if (std::abs(trapezoid_sum(prob.forcing)) > 1e-10 * std::max(fmax, 1.0))
    throw ConfigError(
        "DarcyProblem: forcing violates Neumann compatibility (weighted sum "
        "not zero)");
}

Tensor darcy_residual(const Tensor& k, const Tensor& p,
                      const DarcyProblem& prob) {
  std::size_t s = prob.s;
  check_field("darcy_residual k", k, s);
  check_field("darcy_residual p", p, s);
  for (Real v : k.data())
    if (!(v > 0.0))
      throw NumericError("darcy_residual: non-positive permeability");

  Real inv_h2 = 1.0 / (prob.spacing() * prob.spacing());
  std::size_t m = s - 2;
  Tensor out = Tensor::zeros({m, m});
  auto od = out.data_mut();
  auto kd = k.data();
  auto pd = p.data();
  auto fd = prob.forcing.data();
  auto idx = [s](std::size_t i, std::size_t j) { return i * s + j; };
  for (std::size_t i = 1; i + 1 < s; ++i)
    for (std::size_t j = 1; j + 1 < s; ++j) {
      Real kc = kd[idx(i, j)];
      Real ke = face_permeability(kc, kd[idx(i + 1, j)]);
      Real kw = face_permeability(kc, kd[idx(i - 1, j)]);
      Real kn = face_permeability(kc, kd[idx(i, j + 1)]);
      Real ks = face_permeability(kc, kd[idx(i, j - 1)]);
      Real pc = pd[idx(i, j)];
      Real flux = ke * (pc - pd[idx(i + 1, j)]) + kw * (pc - pd[idx(i - 1, j)]) +
                  kn * (pc - pd[idx(i, j + 1)]) + ks * (pc - pd[idx(i, j - 1)]);
      od[(i - 1) * m + (j - 1)] = inv_h2 * flux - fd[idx(i, j)];
    }

  if (Tape::instance().recording() && (k.requires_grad() || p.requires_grad())) {
    out.set_requires_grad(true);
    Tape::instance().push([ki = k.impl(), pi = p.impl(), oi = out.impl(), s,
                           m, inv_h2] {
      if (oi->grad.empty()) return;
      auto idx = [s](std::size_t i, std::size_t j) { return i * s + j; };
      bool need_k = ki->requires_grad, need_p = pi->requires_grad;
      if (need_k) ki->ensure_grad();
      if (need_p) pi->ensure_grad();
      for (std::size_t i = 1; i + 1 < s; ++i)
        for (std::size_t j = 1; j + 1 < s; ++j) {
          Real g = oi->grad[(i - 1) * m + (j - 1)] * inv_h2;
          if (g == 0.0) continue;
          Real kc = ki->data[idx(i, j)];
          const std::size_t nbr[4] = {idx(i + 1, j), idx(i - 1, j),
                                      idx(i, j + 1), idx(i, j - 1)};
          Real pc = pi->data[idx(i, j)];
          for (std::size_t f = 0; f < 4; ++f) {
            Real kn = ki->data[nbr[f]];
            Real dp = pc - pi->data[nbr[f]];
            Real denom = kc + kn;
            Real kface = 2.0 * kc * kn / denom;
            if (need_p) {
              pi->grad[idx(i, j)] += g * kface;
              pi->grad[nbr[f]] -= g * kface;
            }
            if (need_k) {
              // d/dkc H(kc,kn) = 2 kn^2/(kc+kn)^2, symmetric for kn
              ki->grad[idx(i, j)] += g * dp * 2.0 * kn * kn / (denom * denom);
              ki->grad[nbr[f]] += g * dp * 2.0 * kc * kc / (denom * denom);
            }
          }
        }
    });
  }
  return out;
}

InequalitySet make_parallelogram() {
  // outward normals of the four edges; interior satisfies A x <= b
  InequalitySet ineq{
      Tensor::from({4, 2}, {0.5, -2.0,    //
                            1.5, -0.5,    //
                            -0.5, 2.0,    //
                            -1.5, 0.5}),  //
      Tensor::from({4}, {0.0, 2.75, 2.75, 0.0})};
  validate_inequality_set(ineq);
  return ineq;
}

void validate_inequality_set(const InequalitySet& ineq) {
  if (ineq.a.ndim() != 2)
    throw ConfigError("InequalitySet: A must be 2-D, got " +
                      shape_str(ineq.a.shape()));
  if (ineq.b.ndim() != 1 || ineq.b.numel() != ineq.a.shape()[0])
    throw ConfigError("InequalitySet: b " + shape_str(ineq.b.shape()) +
                      " does not match A " + shape_str(ineq.a.shape()));
  std::size_t m = ineq.rows(), d = ineq.dim();
  for (std::size_t r = 0; r < m; ++r) {
    Real norm = 0.0;
    for (std::size_t c = 0; c < d; ++c)
      norm += ineq.a[r * d + c] * ineq.a[r * d + c];
    if (norm == 0.0)
      throw ConfigError("InequalitySet: row " + std::to_string(r) +
                        " of A is zero");
  }
}

Tensor inequality_residual(const Tensor& x, const InequalitySet& ineq) {
  if (x.ndim() != 1 || x.numel() != ineq.dim())
    throw ShapeError("inequality_residual: x " + shape_str(x.shape()) +
                     " does not match A " + shape_str(ineq.a.shape()));
  Tensor slack = linear(x, ineq.a, mul_scalar(ineq.b, -1.0));  // A x - b
  return relu(slack);
}

Tensor algebraic_residual(const Tensor& x, const AlgebraicSpec& spec) {
  if (!spec.op) throw ConfigError("algebraic_residual: missing operator");
  Tensor ax = spec.op(x);
  if (ax.shape() != spec.target.shape())
    throw ShapeError("algebraic_residual: operator output " +
                     shape_str(ax.shape()) + " vs target " +
                     shape_str(spec.target.shape()));
  return sub(ax, spec.target);
}

void validate_oscillator_spec(const OscillatorSpec& spec) {
  if (!(spec.omega > 0.0)) throw ConfigError("OscillatorSpec: omega must be > 0");
  if (!(spec.dt > 0.0)) throw ConfigError("OscillatorSpec: dt must be > 0");
  if (spec.length < 3) throw ConfigError("OscillatorSpec: length must be >= 3");
}

Tensor oscillator_residual(const Tensor& traj, const OscillatorSpec& spec) {
  // omega = 0 is a legal degenerate case here (pure second difference);
  // the spec invariants are enforced where trajectories are generated
  if (!(spec.dt > 0.0)) throw ConfigError("oscillator_residual: dt must be > 0");
  if (spec.length < 3)
    throw ConfigError("oscillator_residual: trajectory too short");
  if (traj.ndim() != 1 || traj.numel() != spec.length)
    throw ShapeError("oscillator_residual: trajectory " +
                     shape_str(traj.shape()) + " does not match length " +
                     std::to_string(spec.length));
  std::size_t n = spec.length;
  Real inv_dt2 = 1.0 / (spec.dt * spec.dt);
  Real w2 = spec.omega * spec.omega;
  Tensor out = Tensor::zeros({n - 2});
  auto od = out.data_mut();
  auto xd = traj.data();
  for (std::size_t i = 1; i + 1 < n; ++i)
    od[i - 1] = (xd[i + 1] - 2.0 * xd[i] + xd[i - 1]) * inv_dt2 + w2 * xd[i];

  if (Tape::instance().recording() && traj.requires_grad()) {
    out.set_requires_grad(true);
    Tape::instance().push([xi = traj.impl(), oi = out.impl(), n, inv_dt2, w2] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 1; i + 1 < n; ++i) {
        Real g = oi->grad[i - 1];
        xi->grad[i + 1] += g * inv_dt2;
        xi->grad[i] += g * (w2 - 2.0 * inv_dt2);
        xi->grad[i - 1] += g * inv_dt2;
      }
    });
  }
  return out;
}

}  // namespace pild
