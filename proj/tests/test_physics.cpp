#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pild/physics.hpp"
#include "test_util.hpp"

using namespace pild;
using pild::testing::fd_check;

namespace {

Tensor grid_field(std::size_t s, const std::function<Real(Real, Real)>& f) {
  Tensor out = Tensor::zeros({s, s});
  Real h = 1.0 / static_cast<Real>(s - 1);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j)
      out.at(i * s + j) = f(i * h, j * h);
  return out;
}

InequalitySet unit_square() {
  return InequalitySet{
      Tensor::from({4, 2}, {1, 0, -1, 0, 0, 1, 0, -1}),
      Tensor::from({4}, {1, 0, 1, 0})};
}

Tensor gen_field_positive(Rng& rng, std::size_t s) {
  Tensor k = Tensor::zeros({s, s});
  for (std::size_t i = 0; i < k.numel(); ++i)
    k.at(i) = std::exp(0.4 * rng.normal());
  return k;
}

}  // namespace

TEST_CASE("constant pressure: residual is -f on the interior") {
  std::size_t s = 8;
  DarcyProblem prob = make_darcy_problem(s);
  Tensor k = grid_field(s, [](Real x, Real y) { return 1.0 + x + 0.3 * y; });
  Tensor p = Tensor::full({s, s}, 2.5);
  Tensor r = darcy_residual(k, p, prob);
  auto fd = prob.forcing.data();
  for (std::size_t i = 1; i + 1 < s; ++i)
    for (std::size_t j = 1; j + 1 < s; ++j)
      CHECK(r[(i - 1) * (s - 2) + (j - 1)] ==
            doctest::Approx(-fd[i * s + j]).epsilon(1e-14));
}

TEST_CASE("k=1, p=x^2+y^2, f=0: the 5-point stencil is exact on quadratics") {
  std::size_t s = 9;
  DarcyProblem prob{s, Tensor::zeros({s, s})};
  Tensor k = Tensor::full({s, s}, 1.0);
  Tensor p = grid_field(s, [](Real x, Real y) { return x * x + y * y; });
  Tensor r = darcy_residual(k, p, prob);
  for (Real v : r.data()) CHECK(v == doctest::Approx(-4.0).epsilon(1e-10));
}

TEST_CASE("darcy_residual is linear in p and shifts with f") {
  std::size_t s = 8;
  Rng rng(5);
  DarcyProblem prob = make_darcy_problem(s);
  DarcyProblem zero{s, Tensor::zeros({s, s})};
  Tensor k = grid_field(s, [](Real x, Real y) { return 1.5 + std::sin(x + y); });
  Tensor p1 = Tensor::randn({s, s}, rng);
  Tensor p2 = Tensor::randn({s, s}, rng);

  // linearity in p at fixed k
  Tensor lhs = darcy_residual(k, add(p1, p2), zero);
  Tensor rhs = add(darcy_residual(k, p1, zero), darcy_residual(k, p2, zero));
  CHECK(pild::testing::max_abs_diff(lhs, rhs) < 1e-9);

  // R(k, p, f) + f = R(k, p, 0) on interior nodes
  Tensor with_f = darcy_residual(k, p1, prob);
  Tensor without = darcy_residual(k, p1, zero);
  auto fd = prob.forcing.data();
  std::size_t m = s - 2;
  for (std::size_t i = 1; i + 1 < s; ++i)
    for (std::size_t j = 1; j + 1 < s; ++j)
      CHECK(with_f[(i - 1) * m + (j - 1)] + fd[i * s + j] ==
            doctest::Approx(without[(i - 1) * m + (j - 1)]).epsilon(1e-12));
}

TEST_CASE("darcy_residual rejects bad inputs") {
  std::size_t s = 8;
  DarcyProblem prob = make_darcy_problem(s);
  Tensor k = Tensor::full({s, s}, 1.0);
  k.at(12) = 0.0;
  Tensor p = Tensor::zeros({s, s});
  CHECK_THROWS_AS(darcy_residual(k, p, prob), NumericError);
  CHECK_THROWS_AS(darcy_residual(Tensor::zeros({4, 4}), p, prob), ShapeError);
}

TEST_CASE("manufactured solution converges at order 2") {
  // p = cos(pi x) cos(pi y) satisfies the Neumann walls; k smooth positive.
  auto p_fn = [](Real x, Real y) {
    return std::cos(std::numbers::pi * x) * std::cos(std::numbers::pi * y);
  };
  auto k_fn = [](Real x, Real y) { return 1.0 + 0.5 * std::sin(x + 2 * y); };
  // f = -(k_x p_x + k_y p_y) - k (p_xx + p_yy)
  auto f_fn = [&](Real x, Real y) {
    const Real pi = std::numbers::pi;
    Real px = -pi * std::sin(pi * x) * std::cos(pi * y);
    Real py = -pi * std::cos(pi * x) * std::sin(pi * y);
    Real lap = -2.0 * pi * pi * p_fn(x, y);
    Real kx = 0.5 * std::cos(x + 2 * y);
    Real ky = 1.0 * std::cos(x + 2 * y);
    return -(kx * px + ky * py) - k_fn(x, y) * lap;
  };

  auto max_residual = [&](std::size_t s) {
    DarcyProblem prob{s, grid_field(s, f_fn)};
    Tensor k = grid_field(s, k_fn);
    Tensor p = grid_field(s, p_fn);
    Tensor r = darcy_residual(k, p, prob);
    Real m = 0.0;
    for (Real v : r.data()) m = std::max(m, std::abs(v));
    return m;
  };

  Real coarse = max_residual(17);   // h = 1/16
  Real fine = max_residual(33);     // h = 1/32
  Real ratio = coarse / fine;
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
}

TEST_CASE("inequality residual on the unit square") {
  InequalitySet sq = unit_square();

  SUBCASE("strictly inside is zero") {
    Tensor r = inequality_residual(Tensor::from({2}, {0.3, 0.8}), sq);
    for (Real v : r.data()) CHECK(v == 0.0);
  }
  SUBCASE("0.5 past the x<=1 face") {
    Tensor r = inequality_residual(Tensor::from({2}, {1.5, 0.5}), sq);
    CHECK(r[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r[1] == 0.0);
    CHECK(r[2] == 0.0);
    CHECK(r[3] == 0.0);
  }
  SUBCASE("a boundary point is exactly feasible") {
    Tensor r = inequality_residual(Tensor::from({2}, {1.0, 0.5}), sq);
    for (Real v : r.data()) CHECK(v == 0.0);
  }
  SUBCASE("nonnegative everywhere") {
    Rng rng(13);
    for (int i = 0; i < 200; ++i) {
      Tensor x = Tensor::randn({2}, rng);
      Tensor r = inequality_residual(mul_scalar(x, 3.0), sq);
      for (Real v : r.data()) CHECK(v >= 0.0);
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(inequality_residual(Tensor::zeros({3}), sq), ShapeError);
  }
}

TEST_CASE("parallelogram fixture contains its vertices and centroid") {
  InequalitySet para = make_parallelogram();
  auto feasible = [&](Real x, Real y) {
    Tensor r = inequality_residual(Tensor::from({2}, {x, y}), para);
    Real m = 0.0;
    for (Real v : r.data()) m = std::max(m, v);
    return m;
  };
  CHECK(feasible(0.0, 0.0) == 0.0);
  CHECK(feasible(2.0, 0.5) == 0.0);
  CHECK(feasible(2.5, 2.0) == 0.0);
  CHECK(feasible(0.5, 1.5) == 0.0);
  CHECK(feasible(1.25, 1.0) == 0.0);   // centroid
  CHECK(feasible(0.0, 1.0) > 0.0);     // outside
  CHECK(feasible(2.5, 0.5) > 0.0);
}

TEST_CASE("algebraic residual") {
  SUBCASE("identity operator with matching target is zero") {
    Tensor x = Tensor::from({3}, {0.1, -0.2, 0.3});
    AlgebraicSpec spec{[](const Tensor& v) { return v; }, x};
    Tensor r = algebraic_residual(x, spec);
    for (Real v : r.data()) CHECK(v == 0.0);
  }
  SUBCASE("sum operator against target 1") {
    AlgebraicSpec spec{[](const Tensor& v) { return sum_all(v); },
                       Tensor::scalar(1.0)};
    Tensor r = algebraic_residual(Tensor::from({2}, {0.2, 0.3}), spec);
    CHECK(r.value() == doctest::Approx(-0.5).epsilon(1e-15));
  }
  SUBCASE("residual is a translation of the operator output") {
    Rng rng(17);
    Tensor x = Tensor::randn({4}, rng);
    Tensor target = Tensor::randn({4}, rng);
    AlgebraicSpec spec{[](const Tensor& v) { return silu(v); }, target};
    Tensor r = algebraic_residual(x, spec);
    Tensor ax = silu(x);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(r[i] + target[i] == doctest::Approx(ax[i]).epsilon(1e-15));
  }
}

TEST_CASE("oscillator residual") {
  SUBCASE("zero trajectory gives zero residual") {
    OscillatorSpec spec{2.0, 0.1, 16};
    Tensor r = oscillator_residual(Tensor::zeros({16}), spec);
    for (Real v : r.data()) CHECK(v == 0.0);
  }
  SUBCASE("a line with omega = 0 is annihilated by the second difference") {
    OscillatorSpec spec{0.0, 0.05, 12};
    Tensor traj = Tensor::zeros({12});
    for (std::size_t i = 0; i < 12; ++i) traj.at(i) = 0.7 * i * spec.dt;
    Tensor r = oscillator_residual(traj, spec);
    for (Real v : r.data()) CHECK(std::abs(v) < 1e-12);
  }
  SUBCASE("cos(wt) residual drops 4x when dt halves") {
    auto max_res = [](Real dt, std::size_t len) {
      OscillatorSpec spec{2.0, dt, len};
      Tensor traj = Tensor::zeros({len});
      for (std::size_t i = 0; i < len; ++i)
        traj.at(i) = std::cos(spec.omega * dt * i);
      Tensor r = oscillator_residual(traj, spec);
      Real m = 0.0;
      for (Real v : r.data()) m = std::max(m, std::abs(v));
      return m;
    };
    Real ratio = max_res(0.1, 17) / max_res(0.05, 33);
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.5);
  }
  SUBCASE("too-short trajectory") {
    OscillatorSpec spec{1.0, 0.1, 16};
    CHECK_THROWS_AS(oscillator_residual(Tensor::zeros({2}), spec), ShapeError);
  }
}

TEST_CASE("residual operators are pure") {
  std::size_t s = 8;
  DarcyProblem prob = make_darcy_problem(s);
  Rng rng(23);
  Tensor k = gen_field_positive(rng, s);
  Tensor p = Tensor::randn({s, s}, rng);
  CHECK(pild::testing::bitwise_equal(darcy_residual(k, p, prob),
                                     darcy_residual(k, p, prob)));
  InequalitySet para = make_parallelogram();
  Tensor x = Tensor::from({2}, {3.0, -1.0});
  CHECK(pild::testing::bitwise_equal(inequality_residual(x, para),
                                     inequality_residual(x, para)));
}

TEST_CASE("residual gradients match finite differences") {
  SUBCASE("darcy, w.r.t. both k and p") {
    std::size_t s = 6;
    DarcyProblem prob = make_darcy_problem(s);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(40 + seed);
      Tensor k = gen_field_positive(rng, s);
      k.set_requires_grad(true);
      Tensor p = Tensor::randn({s, s}, rng, true);
      Tensor v = Tensor::randn({s - 2, s - 2}, rng);
      Real err = fd_check({k, p}, [&] {
        return sum_all(mul(darcy_residual(k, p, prob), v));
      });
      CHECK(err < 1e-4);
    }
  }
  SUBCASE("inequality, away from the kinks") {
    InequalitySet para = make_parallelogram();
    Tensor x = Tensor::from({2}, {3.0, -0.7}, true);
    Real err = fd_check({x}, [&] {
      return sum_all(inequality_residual(x, para));
    });
    CHECK(err < 1e-4);
  }
  SUBCASE("oscillator") {
    OscillatorSpec spec{2.0, 0.1, 10};
    Rng rng(50);
    Tensor traj = Tensor::randn({10}, rng, true);
    Tensor v = Tensor::randn({8}, rng);
    Real err = fd_check({traj}, [&] {
      return sum_all(mul(oscillator_residual(traj, spec), v));
    });
    CHECK(err < 1e-4);
  }
}
