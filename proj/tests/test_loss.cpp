#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "pild/data.hpp"
#include "pild/loss.hpp"
#include "pild/runner.hpp"
#include "pild/sampler.hpp"
#include "test_util.hpp"

using namespace pild;
using pild::testing::OracleNet;
using pild::testing::fd_check;

namespace {

NoiseSchedule sched100() {
  return build_schedule(ScheduleKind::Cosine, 100, 1e-4, 0.03);
}

NetConfig tiny_mlp(std::size_t d) {
  NetConfig cfg;
  cfg.backbone = Backbone::Mlp;
  cfg.conditioning = Conditioning::None;
  cfg.data_shape = {d};
  cfg.hidden = 12;
  cfg.layers = 2;
  cfg.time_dim = 8;
  return cfg;
}

LossConfig loss_cfg(Real c, GateKind gate = GateKind::Log,
                    ResidualModelKind rm = ResidualModelKind::Laplace,
                    int k = 2) {
  return LossConfig{PhysicsWeightConfig{c, 100.0, gate}, rm, k, 5.0};
}

}  // namespace

TEST_CASE("residual_nll") {
  SUBCASE("zero residual leaves only the constant, with zero gradient") {
    Tensor r = Tensor::zeros({4}, true);
    ResidualModel m{ResidualModelKind::Laplace, 0.5};
    Tape::instance().clear();
    Tensor nll = residual_nll(r, m);
    CHECK(nll.value() == doctest::Approx(4.0 * std::log(1.0)).epsilon(1e-15));
    backward(nll);
    // sign(0) = 0 everywhere: nothing is ever accumulated into r
    if (r.has_grad())
      for (Real g : r.grad()) CHECK(g == 0.0);
  }
  SUBCASE("hand value: r=[3,-4], b=1") {
    Tensor r = Tensor::from({2}, {3.0, -4.0});
    ResidualModel m{ResidualModelKind::Laplace, 1.0};
    CHECK(residual_nll(r, m).value() ==
          doctest::Approx(7.0 + 2.0 * std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("laplace NLL minus constant is the scaled L1 on 100 random inputs") {
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
      Real b = 0.05 + rng.uniform();
      std::size_t n = 1 + rng.uniform_int(8);
      Tensor r = Tensor::randn({n}, rng);
      ResidualModel m{ResidualModelKind::Laplace, b};
      Real lhs = residual_nll(r, m).value() - residual_nll_constant(n, m);
      Real rhs = l1_norm(r).value() / b;
      CHECK(std::abs(lhs - rhs) < 1e-12 * std::max(1.0, std::abs(rhs)));
    }
  }
  SUBCASE("gaussian form") {
    Tensor r = Tensor::from({2}, {1.0, -2.0});
    ResidualModel m{ResidualModelKind::Gaussian, 2.0};
    Real expect = (1.0 + 4.0) / (2.0 * 4.0) +
                  2.0 * std::log(2.0 * std::sqrt(2.0 * std::numbers::pi));
    CHECK(residual_nll(r, m).value() == doctest::Approx(expect).epsilon(1e-14));
  }
  SUBCASE("non-positive scale rejected") {
    Tensor r = Tensor::zeros({2});
    CHECK_THROWS_AS(residual_nll(r, ResidualModel{ResidualModelKind::Laplace, 0.0}),
                    ConfigError);
  }
}

TEST_CASE("estimate_x0 against the oracle") {
  NoiseSchedule s = sched100();
  Rng rng(2);
  Tensor x0 = Tensor::randn({5}, rng);
  OracleNet oracle(x0, s);
  Tensor eps = Tensor::randn({5}, rng);

  SUBCASE("K = 1 inverts exactly") {
    Tensor x_t = forward_noise(x0, 60, eps, s);
    Tensor est = estimate_x0(oracle, x_t, 60, nullptr, s, 1);
    CHECK(pild::testing::max_abs_diff(est, x0) < 1e-12);
  }
  SUBCASE("K = 4 telescopes exactly") {
    Tensor x_t = forward_noise(x0, 80, eps, s);
    Tensor est = estimate_x0(oracle, x_t, 80, nullptr, s, 4);
    CHECK(pild::testing::max_abs_diff(est, x0) < 1e-10);
  }
  SUBCASE("K greater than t is rejected") {
    Tensor x_t = forward_noise(x0, 3, eps, s);
    CHECK_THROWS_AS(estimate_x0(oracle, x_t, 3, nullptr, s, 4), ConfigError);
  }
}

TEST_CASE("estimate_x0 is differentiable through the sub-steps") {
  NoiseSchedule s = sched100();
  DenoiserNet net(tiny_mlp(3), 5);
  Rng rng(3);
  Tensor x_t = Tensor::randn({3}, rng);
  auto params = net.parameters();
  Real err = fd_check(params, [&] {
    return sum_all(estimate_x0(net, x_t, 50, nullptr, s, 2));
  });
  CHECK(err < 1e-3);
}

TEST_CASE("pild_loss") {
  NoiseSchedule s = sched100();
  InequalitySet square{Tensor::from({4, 2}, {1, 0, -1, 0, 0, 1, 0, -1}),
                       Tensor::from({4}, {1, 0, 1, 0})};
  ResidualFn resid = [&square](const Tensor& x) {
    return inequality_residual(x, square);
  };

  SUBCASE("c = 0 reduces to the pure diffusion objective") {
    DenoiserNet net(tiny_mlp(2), 7);
    Rng rng(4);
    Tensor x0 = Tensor::from({2}, {0.4, 0.6});
    Tensor eps = Tensor::randn({2}, rng);
    LossTerms lt = pild_loss(net, x0, nullptr, 30, eps, &resid, s, loss_cfg(0.0));
    CHECK(lt.report.physics_term == 0.0);
    CHECK(lt.report.total == lt.report.data_term);
    // manual pure objective
    Tensor x_t = forward_noise(x0, 30, eps, s);
    Tensor pred = predict_noise(net, x_t, 30);
    Tensor d = sub(eps, pred);
    Real expect = min_snr_weight(30, s, 5.0) * mean_all(mul(d, d)).value();
    CHECK(lt.report.data_term == doctest::Approx(expect).epsilon(1e-12));
    Tape::instance().clear();
  }

  SUBCASE("oracle net with a feasible sample has exactly zero physics term") {
    Rng rng(5);
    Tensor x0 = Tensor::from({2}, {0.25, 0.75});  // inside the unit square
    OracleNet oracle(x0, s);
    Tensor eps = Tensor::randn({2}, rng);
    LossTerms lt =
        pild_loss(oracle, x0, nullptr, 40, eps, &resid, s, loss_cfg(0.005));
    CHECK(lt.report.physics_term == 0.0);
    CHECK(lt.report.residual_l1 == 0.0);
    Tape::instance().clear();
  }

  SUBCASE("gate kinds change only the physics term, by exactly G3(t)") {
    DenoiserNet net(tiny_mlp(2), 9);
    Rng rng(6);
    Tensor x0 = Tensor::from({2}, {5.0, -3.0});  // far out of the region
    Tensor eps = Tensor::randn({2}, rng);
    int t = 60;  // mid-schedule, away from the w_max clamp
    LossTerms none =
        pild_loss(net, x0, nullptr, t, eps, &resid, s, loss_cfg(1e-4, GateKind::None));
    Tape::instance().clear();
    LossTerms logg =
        pild_loss(net, x0, nullptr, t, eps, &resid, s, loss_cfg(1e-4, GateKind::Log));
    Tape::instance().clear();
    CHECK(none.report.data_term == logg.report.data_term);
    Real g3 = gate(t, 100, GateKind::Log);
    CHECK(logg.report.physics_term ==
          doctest::Approx(g3 * none.report.physics_term).epsilon(1e-12));
  }

  SUBCASE("physics term scales linearly in c below the clamp") {
    DenoiserNet net(tiny_mlp(2), 10);
    Rng rng(7);
    Tensor x0 = Tensor::from({2}, {4.0, 4.0});
    Tensor eps = Tensor::randn({2}, rng);
    LossTerms a =
        pild_loss(net, x0, nullptr, 55, eps, &resid, s, loss_cfg(1e-5));
    Tape::instance().clear();
    LossTerms b =
        pild_loss(net, x0, nullptr, 55, eps, &resid, s, loss_cfg(3e-5));
    Tape::instance().clear();
    CHECK(b.report.physics_term ==
          doctest::Approx(3.0 * a.report.physics_term).epsilon(1e-12));
  }

  SUBCASE("gaussian residual model squares the penalty") {
    DenoiserNet net(tiny_mlp(2), 11);
    Rng rng(8);
    Tensor x0 = Tensor::from({2}, {4.0, 4.0});
    Tensor eps = Tensor::randn({2}, rng);
    LossTerms lap = pild_loss(net, x0, nullptr, 50, eps, &resid, s,
                              loss_cfg(1e-4, GateKind::Log,
                                       ResidualModelKind::Laplace));
    Tape::instance().clear();
    LossTerms gau = pild_loss(net, x0, nullptr, 50, eps, &resid, s,
                              loss_cfg(1e-4, GateKind::Log,
                                       ResidualModelKind::Gaussian));
    Tape::instance().clear();
    CHECK(lap.report.physics_term > 0.0);
    CHECK(gau.report.physics_term > 0.0);
    CHECK(gau.report.physics_term != lap.report.physics_term);
  }

  SUBCASE("additivity holds for every draw") {
    DenoiserNet net(tiny_mlp(2), 12);
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
      int t = 1 + static_cast<int>(rng.uniform_int(100));
      Tensor x0 = Tensor::randn({2}, rng);
      Tensor eps = Tensor::randn({2}, rng);
      LossTerms lt =
          pild_loss(net, x0, nullptr, t, eps, &resid, s, loss_cfg(0.005));
      Tape::instance().clear();
      CHECK(lt.report.total == lt.report.data_term + lt.report.physics_term);
    }
  }

  SUBCASE("physics gradient actually reaches the parameters") {
    DenoiserNet net(tiny_mlp(2), 13);
    Rng rng(10);
    Tensor x0 = Tensor::from({2}, {6.0, -6.0});
    Tensor eps = Tensor::randn({2}, rng);
    auto grad_snapshot = [&](Real c) {
      Tape::instance().clear();
      for (Tensor& p : net.parameters()) p.zero_grad();
      LossTerms lt =
          pild_loss(net, x0, nullptr, 45, eps, &resid, s, loss_cfg(c));
      backward(lt.total);
      std::vector<Real> flat;
      for (const Tensor& p : net.parameters())
        flat.insert(flat.end(), p.grad().begin(), p.grad().end());
      for (Tensor& p : net.parameters()) p.zero_grad();
      return flat;
    };
    auto with_physics = grad_snapshot(0.01);
    auto without = grad_snapshot(0.0);
    Real diff = 0.0;
    for (std::size_t i = 0; i < with_physics.size(); ++i)
      diff = std::max(diff, std::abs(with_physics[i] - without[i]));
    CHECK(diff > 0.0);
  }
}

TEST_CASE("train_step") {
  NoiseSchedule s = sched100();
  InequalitySet square{Tensor::from({4, 2}, {1, 0, -1, 0, 0, 1, 0, -1}),
                       Tensor::from({4}, {1, 0, 1, 0})};
  ResidualFn resid = [&square](const Tensor& x) {
    return inequality_residual(x, square);
  };
  Rng data_rng(20);
  std::vector<Tensor> samples;
  for (int i = 0; i < 32; ++i)
    samples.push_back(Tensor::from(
        {2}, {data_rng.uniform(), data_rng.uniform()}));

  SUBCASE("zero learning rate leaves parameters unchanged but reports loss") {
    DenoiserNet net(tiny_mlp(2), 30);
    AdamState adam(net.parameters(), AdamConfig{0.0, 0.9, 0.999, 1e-8});
    std::vector<Real> before;
    for (const Tensor& p : net.parameters())
      before.insert(before.end(), p.data().begin(), p.data().end());
    Rng rng(21);
    LossBreakdown lb =
        train_step(net, samples, nullptr, &resid, s, loss_cfg(0.005), adam, 4, rng);
    CHECK(lb.total > 0.0);
    std::size_t off = 0;
    for (const Tensor& p : net.parameters())
      for (Real v : p.data()) CHECK(v == before[off++]);
  }

  SUBCASE("identical seeds give identical breakdown sequences") {
    auto run = [&] {
      DenoiserNet net(tiny_mlp(2), 31);
      AdamState adam(net.parameters(), AdamConfig{1e-3, 0.9, 0.999, 1e-8});
      Rng rng(22);
      std::vector<LossBreakdown> out;
      for (int i = 0; i < 5; ++i)
        out.push_back(train_step(net, samples, nullptr, &resid, s,
                                 loss_cfg(0.005), adam, 4, rng));
      return out;
    };
    auto a = run();
    auto b = run();
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].total == b[i].total);
      CHECK(a[i].data_term == b[i].data_term);
      CHECK(a[i].physics_term == b[i].physics_term);
      CHECK(a[i].t == b[i].t);
    }
  }

  SUBCASE("an always-zero residual leaves the trajectory bitwise unchanged") {
    ResidualFn zero_resid = [](const Tensor& x) { return mul_scalar(x, 0.0); };
    auto run = [&](const ResidualFn* op, Real c) {
      DenoiserNet net(tiny_mlp(2), 32);
      AdamState adam(net.parameters(), AdamConfig{1e-3, 0.9, 0.999, 1e-8});
      Rng rng(23);
      for (int i = 0; i < 5; ++i)
        train_step(net, samples, nullptr, op, s, loss_cfg(c), adam, 4, rng);
      std::vector<Real> flat;
      for (const Tensor& p : net.parameters())
        flat.insert(flat.end(), p.data().begin(), p.data().end());
      return flat;
    };
    auto with_zero_op = run(&zero_resid, 0.005);
    auto without = run(nullptr, 0.0);
    REQUIRE(with_zero_op.size() == without.size());
    for (std::size_t i = 0; i < with_zero_op.size(); ++i)
      CHECK(with_zero_op[i] == without[i]);
  }

  SUBCASE("a numeric failure leaves parameters untouched") {
    DenoiserNet net(tiny_mlp(2), 33);
    AdamState adam(net.parameters(), AdamConfig{1e-3, 0.9, 0.999, 1e-8});
    std::vector<Real> before;
    for (const Tensor& p : net.parameters())
      before.insert(before.end(), p.data().begin(), p.data().end());
    Real nan = std::numeric_limits<Real>::quiet_NaN();
    std::vector<Tensor> poisoned = {Tensor::from({2}, {nan, nan})};
    Rng rng(24);
    CHECK_THROWS_AS(train_step(net, poisoned, nullptr, &resid, s,
                               loss_cfg(0.005), adam, 2, rng),
                    NumericError);
    std::size_t off = 0;
    for (const Tensor& p : net.parameters())
      for (Real v : p.data()) CHECK(v == before[off++]);
    CHECK(Tape::instance().size() == 0);
  }

  SUBCASE("training with the physics term reduces the weighted residual") {
    // paired toy runs: after 400 iterations the physics-trained model scores
    // a lower physics term than the c=0 baseline when both are probed with
    // the same weight formula
    Dataset toy = gen_parallelogram(2000, make_parallelogram(), 123);
    std::vector<Tensor> norm;
    for (const Tensor& t : toy.samples) norm.push_back(normalize(t, toy.stats));
    InequalitySet para = make_parallelogram();
    NormStats stats = toy.stats;
    ResidualFn toy_resid = [para, stats](const Tensor& x) {
      return inequality_residual(denormalize_on_tape(x, stats), para);
    };

    auto train_toy = [&](Real c) {
      DenoiserNet net(tiny_mlp(2), 40);
      AdamState adam(net.parameters(), AdamConfig{1e-3, 0.9, 0.999, 1e-8});
      Rng rng(41);
      for (int i = 0; i < 400; ++i)
        train_step(net, norm, nullptr, &toy_resid, s, loss_cfg(c), adam, 8, rng);
      return net;
    };
    DenoiserNet pild = train_toy(0.005);
    DenoiserNet base = train_toy(0.0);

    auto probe = [&](const DenoiserNet& net) {
      Rng rng(42);
      Real acc = 0.0;
      for (int i = 0; i < 64; ++i) {
        int t = 1 + static_cast<int>(rng.uniform_int(100));
        const Tensor& x0 = norm[rng.uniform_int(norm.size())];
        Tensor eps = Tensor::randn({2}, rng);
        LossTerms lt = pild_loss(net, x0, nullptr, t, eps, &toy_resid, s,
                                 loss_cfg(0.005));
        Tape::instance().clear();
        acc += lt.report.physics_term;
      }
      return acc / 64.0;
    };
    Real pild_prob = probe(pild);
    Real base_prob = probe(base);
    CHECK(pild_prob < base_prob);
  }
}
