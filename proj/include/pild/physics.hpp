#pragma once

#include <functional>
#include <vector>

#include "pild/tensor.hpp"

namespace pild {

/// A pure, differentiable map from an estimated clean sample to a residual
/// tensor. Zero residual means the constraint is satisfied.
using ResidualFn = std::function<Tensor(const Tensor&)>;

/// Darcy problem -div(k grad p) = f on the unit square, s x s nodes,
/// homogeneous Neumann walls, zero-mean pressure.
struct DarcyProblem {
  std::size_t s = 16;
  Tensor forcing;  // [s, s]

  Real spacing() const { return 1.0 / static_cast<Real>(s - 1); }
};

/// Trapezoid-weighted sum of a nodal field over the unit square grid
/// (weights 1 interior, 1/2 edges, 1/4 corners, times h^2).
Real trapezoid_sum(const Tensor& field);

/// Builds the standard forcing fixture: two opposite-sign Gaussian bumps at
/// (0.25, 0.25) and (0.75, 0.75), width 0.1, balanced so the trapezoid-
/// weighted sum is zero to machine precision.
DarcyProblem make_darcy_problem(std::size_t s);

/// Validates Neumann compatibility (|trapezoid sum of f| <= 1e-10 * max|f|)
/// and basic invariants; throws ConfigError otherwise.
void validate_darcy_problem(const DarcyProblem& prob);

/// Conservative 5-point flux residual on interior nodes:
///   R_ij = (1/h^2) [ kE (p_ij - p_E) + kW (p_ij - p_W)
///                  + kN (p_ij - p_N) + kS (p_ij - p_S) ] - f_ij,
/// with face permeabilities the harmonic mean of the adjacent nodes.
/// Differentiable w.r.t. k and p; requires k > 0 everywhere.
Tensor darcy_residual(const Tensor& k, const Tensor& p,
                      const DarcyProblem& prob);

/// Harmonic mean used for face permeabilities, shared with the solver.
inline Real face_permeability(Real a, Real b) { return 2.0 * a * b / (a + b); }

/// Linear inequality constraints A x <= b.
struct InequalitySet {
  Tensor a;  // [m, d]
  Tensor b;  // [m]

  std::size_t rows() const { return a.shape()[0]; }
  std::size_t dim() const { return a.shape()[1]; }
};

/// The paper's toy fixture: a parallelogram with vertices
/// (0,0), (2,0.5), (2.5,2), (0.5,1.5) written as four half-planes.
InequalitySet make_parallelogram();

void validate_inequality_set(const InequalitySet& ineq);

/// ReLU(A x - b), componentwise. Zero exactly on the feasible set.
Tensor inequality_residual(const Tensor& x, const InequalitySet& ineq);

/// Algebraic constraint A(x) = target with a user-supplied differentiable map.
struct AlgebraicSpec {
  std::function<Tensor(const Tensor&)> op;
  Tensor target;
};

/// A(x) - target.
Tensor algebraic_residual(const Tensor& x, const AlgebraicSpec& spec);

/// Harmonic oscillator x'' + omega^2 x = 0 sampled at step dt.
struct OscillatorSpec {
  Real omega = 2.0;
  Real dt = 0.1;
  std::size_t length = 32;
};

void validate_oscillator_spec(const OscillatorSpec& spec);

/// Central-difference residual on interior samples:
///   R_i = (x_{i+1} - 2 x_i + x_{i-1}) / dt^2 + omega^2 x_i.
Tensor oscillator_residual(const Tensor& traj, const OscillatorSpec& spec);

}  // namespace pild
