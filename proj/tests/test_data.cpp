#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <chrono>
#include <fstream>

#include "pild/data.hpp"
#include "test_util.hpp"

using namespace pild;

namespace {

std::filesystem::path tmp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "pild_test_data";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("tensor container round trip is bitwise") {
  Rng rng(1);
  Tensor t = Tensor::randn({3, 4, 5}, rng);
  auto path = tmp_dir() / "roundtrip.bin";
  save_tensor(path, t);
  Tensor back = load_tensor(path);
  CHECK(back.shape() == t.shape());
  CHECK(pild::testing::bitwise_equal(back, t));
}

TEST_CASE("container rejects malformed files distinctly") {
  auto dir = tmp_dir();

  SUBCASE("bad magic") {
    auto p = dir / "bad_magic.bin";
    std::ofstream os(p, std::ios::binary);
    os << "NOPE1234567890";
    os.close();
    CHECK_THROWS_WITH_AS(load_tensor(p), doctest::Contains("bad magic"),
                         DataError);
  }
  SUBCASE("unsupported version") {
    auto p = dir / "bad_version.bin";
    std::ofstream os(p, std::ios::binary);
    os << "PILD";
    std::uint16_t v = 9;
    os.write(reinterpret_cast<char*>(&v), 2);
    os.close();
    CHECK_THROWS_WITH_AS(load_tensor(p), doctest::Contains("version"),
                         DataError);
  }
  SUBCASE("empty dims") {
    auto p = dir / "empty_dims.bin";
    std::ofstream os(p, std::ios::binary);
    os << "PILD";
    std::uint16_t v = 1;
    os.write(reinterpret_cast<char*>(&v), 2);
    std::uint8_t elem = 2, ndim = 0;
    os.write(reinterpret_cast<char*>(&elem), 1);
    os.write(reinterpret_cast<char*>(&ndim), 1);
    os.close();
    CHECK_THROWS_WITH_AS(load_tensor(p), doctest::Contains("empty dims"),
                         DataError);
  }
  SUBCASE("truncated payload") {
    auto p = dir / "truncated.bin";
    Tensor t = Tensor::full({4}, 1.5);
    save_tensor(p, t);
    auto size = std::filesystem::file_size(p);
    std::filesystem::resize_file(p, size - 9);
    CHECK_THROWS_WITH_AS(load_tensor(p), doctest::Contains("truncated"),
                         DataError);
  }
  SUBCASE("saving an undefined tensor is refused") {
    CHECK_THROWS_AS(save_tensor(dir / "nope.bin", Tensor()), DataError);
  }
}

TEST_CASE("f32 container widens exactly into the f64 workspace") {
  // values chosen representable in binary32
  Tensor t = Tensor::from({4}, {0.5, -1.25, 3.0, 0.09375});
  auto path = tmp_dir() / "f32.bin";
  save_tensor(path, t, true);
  Tensor back = load_tensor(path);
  CHECK(pild::testing::bitwise_equal(back, t));
}

TEST_CASE("toy generator") {
  InequalitySet para = make_parallelogram();

  SUBCASE("all samples are feasible, n as requested") {
    Dataset ds = gen_parallelogram(10000, para, 7);
    CHECK(ds.size() == 10000);
    NoGradGuard ng;
    for (const Tensor& s : ds.samples) {
      Tensor r = inequality_residual(s, para);
      for (Real v : r.data()) CHECK(v == 0.0);
    }
  }
  SUBCASE("unit square means sit near 0.5") {
    InequalitySet square{Tensor::from({4, 2}, {1, 0, -1, 0, 0, 1, 0, -1}),
                         Tensor::from({4}, {1, 0, 1, 0})};
    std::size_t n = 20000;
    Dataset ds = gen_parallelogram(n, square, 11);
    Real mx = 0.0, my = 0.0;
    for (const Tensor& s : ds.samples) {
      mx += s[0];
      my += s[1];
    }
    mx /= n;
    my /= n;
    // 3 sigma of the mean of U[0,1]
    Real bound = 3.0 / std::sqrt(12.0 * static_cast<Real>(n));
    CHECK(std::abs(mx - 0.5) < bound);
    CHECK(std::abs(my - 0.5) < bound);
  }
  SUBCASE("fixed seed reproduces the dataset bit for bit") {
    Dataset a = gen_parallelogram(500, para, 42);
    Dataset b = gen_parallelogram(500, para, 42);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(pild::testing::bitwise_equal(a.samples[i], b.samples[i]));
  }
  SUBCASE("a degenerate sliver region aborts") {
    InequalitySet sliver{
        Tensor::from({6, 2}, {1, -1, -1, 1, 1, 0, -1, 0, 0, 1, 0, -1}),
        Tensor::from({6}, {1e-3, 1e-3, 1, 0, 1, 0})};
    CHECK_THROWS_AS(gen_parallelogram(2000, sliver, 3), DataError);
  }
}

TEST_CASE("permeability fields") {
  SUBCASE("strictly positive everywhere") {
    Tensor k = gen_permeability(16, 0.1, 5);
    for (Real v : k.data()) CHECK(v > 0.0);
  }
  SUBCASE("longer correlation length raises the lag-1 autocorrelation") {
    auto lag1 = [](Real corr, std::uint64_t seed_base) {
      Real num = 0.0, den = 0.0;
      for (std::uint64_t f = 0; f < 100; ++f) {
        Tensor k = gen_permeability(16, corr, Rng::derive(seed_base, f));
        std::vector<Real> logk(k.numel());
        Real mean = 0.0;
        for (std::size_t i = 0; i < k.numel(); ++i) {
          logk[i] = std::log(k[i]);
          mean += logk[i];
        }
        mean /= logk.size();
        for (std::size_t i = 0; i < 16; ++i)
          for (std::size_t j = 0; j + 1 < 16; ++j) {
            num += (logk[i * 16 + j] - mean) * (logk[i * 16 + j + 1] - mean);
            den += (logk[i * 16 + j] - mean) * (logk[i * 16 + j] - mean);
          }
      }
      return num / den;
    };
    CHECK(lag1(0.2, 100) > lag1(0.05, 200));
  }
  SUBCASE("fixed seed reproduces the field") {
    CHECK(pild::testing::bitwise_equal(gen_permeability(12, 0.1, 9),
                                       gen_permeability(12, 0.1, 9)));
  }
}

TEST_CASE("darcy solver") {
  SUBCASE("k=1, f=0 gives the zero pressure") {
    std::size_t s = 12;
    DarcyProblem prob{s, Tensor::zeros({s, s})};
    Tensor p = solve_darcy(Tensor::full({s, s}, 1.0), prob);
    for (Real v : p.data()) CHECK(v == 0.0);
  }
  SUBCASE("solved pairs satisfy the interior residual oracle") {
    std::size_t s = 16;
    DarcyProblem prob = make_darcy_problem(s);
    Real fmax = 0.0;
    for (Real v : prob.forcing.data()) fmax = std::max(fmax, std::abs(v));
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Tensor k = gen_permeability(s, 0.1, 300 + seed);
      Tensor p = solve_darcy(k, prob);
      Tensor r = darcy_residual(k, p, prob);
      Real rmax = 0.0;
      for (Real v : r.data()) rmax = std::max(rmax, std::abs(v));
      CHECK(rmax < 1e-8 * fmax);
    }
  }
  SUBCASE("pressure scales as 1/kappa when k scales by kappa") {
    std::size_t s = 12;
    DarcyProblem prob = make_darcy_problem(s);
    Tensor k = gen_permeability(s, 0.15, 17);
    Tensor p1 = solve_darcy(k, prob);
    Tensor p2 = solve_darcy(mul_scalar(k, 4.0), prob);
    for (std::size_t i = 0; i < p1.numel(); ++i)
      CHECK(p2[i] == doctest::Approx(p1[i] / 4.0).epsilon(1e-8));
  }
  SUBCASE("incompatible forcing is rejected") {
    std::size_t s = 8;
    DarcyProblem prob{s, Tensor::full({s, s}, 1.0)};  // sum != 0
    CHECK_THROWS_AS(solve_darcy(Tensor::full({s, s}, 1.0), prob), ConfigError);
  }
}

TEST_CASE("darcy dataset") {
  std::size_t s = 16, n = 64;
  DarcyProblem prob = make_darcy_problem(s);
  auto t0 = std::chrono::steady_clock::now();
  Dataset ds = gen_darcy_dataset(n, s, 0.1, prob, 77);
  auto elapsed = std::chrono::duration<double>(
      std::chrono::steady_clock::now() - t0).count();
  CHECK(elapsed < 60.0);
  CHECK(ds.size() == n);

  Real fmax = 0.0;
  for (Real v : prob.forcing.data()) fmax = std::max(fmax, std::abs(v));
  for (const Tensor& sample : ds.samples) {
    Tensor k = take_channel(sample, 0);
    Tensor p = take_channel(sample, 1);
    // pressure channel is mean-free
    Real mean = 0.0;
    for (Real v : p.data()) mean += v;
    mean /= p.numel();
    CHECK(std::abs(mean) < 1e-12);
    // physically consistent by construction
    Tensor r = darcy_residual(k, p, prob);
    Real rmax = 0.0;
    for (Real v : r.data()) rmax = std::max(rmax, std::abs(v));
    CHECK(rmax < 1e-8 * fmax);
  }
}

TEST_CASE("oscillator dataset") {
  OscillatorSpec spec{2.0, 0.1, 32};
  Dataset ds = gen_oscillator_dataset(256, spec, 13);
  REQUIRE(ds.conditional());

  SUBCASE("residual scales at second order in dt") {
    OscillatorSpec fine{2.0, 0.05, 63};
    Dataset fine_ds = gen_oscillator_dataset(64, fine, 13);
    auto max_res = [](const Dataset& d, const OscillatorSpec& sp) {
      Real m = 0.0;
      for (const Tensor& t : d.samples) {
        Tensor r = oscillator_residual(t, sp);
        for (Real v : r.data()) m = std::max(m, std::abs(v));
      }
      return m;
    };
    Real coarse = max_res(ds, spec);
    Real finer = max_res(fine_ds, fine);
    // bound with the analytic second-order constant, generously padded
    CHECK(coarse < 0.5 * spec.dt * spec.dt * std::pow(spec.omega, 4) * 10.0);
    CHECK(finer < coarse);
  }
  SUBCASE("(a, b) = (1, 0) reproduces cosine samples") {
    // reconstruct basis coefficients from the stored condition
    for (std::size_t i = 0; i < 8; ++i) {
      const Tensor& traj = ds.samples[i];
      Real a = ds.conditions[i][0];
      Real b = (ds.conditions[i][1] - a * std::cos(spec.omega * spec.dt)) /
               std::sin(spec.omega * spec.dt);
      for (std::size_t j = 0; j < spec.length; ++j) {
        Real t = spec.omega * spec.dt * j;
        CHECK(traj[j] ==
              doctest::Approx(a * std::cos(t) + b * std::sin(t)).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("normalization round trip") {
  Rng rng(19);
  std::vector<Tensor> samples;
  for (int i = 0; i < 10; ++i)
    samples.push_back(add_scalar(mul_scalar(Tensor::randn({2, 4, 4}, rng), 3.0), 5.0));
  NormStats stats = compute_stats(samples, 2);
  for (const Tensor& s : samples) {
    Tensor back = denormalize(normalize(s, stats), stats);
    CHECK(pild::testing::max_abs_diff(back, s) < 1e-12);
  }
  // the differentiable path agrees with the plain one
  Tensor x = normalize(samples[0], stats);
  CHECK(pild::testing::max_abs_diff(denormalize_on_tape(x, stats),
                                    denormalize(x, stats)) == 0.0);
}

TEST_CASE("dataset persistence round trip") {
  OscillatorSpec spec{2.0, 0.1, 16};
  Dataset ds = gen_oscillator_dataset(32, spec, 23);
  auto dir = tmp_dir() / "osc_ds";
  save_dataset(dir, ds);
  Dataset back = load_dataset(dir);
  CHECK(back.task == ds.task);
  CHECK(back.seed == ds.seed);
  CHECK(back.size() == ds.size());
  REQUIRE(back.conditional());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(pild::testing::bitwise_equal(back.samples[i], ds.samples[i]));
    CHECK(pild::testing::bitwise_equal(back.conditions[i], ds.conditions[i]));
  }
  CHECK(back.stats.mean == ds.stats.mean);
  CHECK(back.stats.stddev == ds.stats.stddev);
  CHECK(file_hash_hex(dir / "manifest.txt") ==
        file_hash_hex(dir / "manifest.txt"));
}
