#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "smc/errors.hpp"
#include "smc/particles.hpp"
#include "smc/random.hpp"

using namespace smc;

namespace {

ParticleSystem make_system(std::vector<double> x, std::vector<double> lw) {
  return ParticleSystem(Direction::forward, 0, std::move(x), std::move(lw));
}

}  // namespace

TEST_CASE("constant functions are reproduced") {
  const auto ps = make_system({1.0, 2.0, 3.0}, {-0.3, 0.7, 0.1});
  CHECK(estimate(ps, [](double) { return 4.25; }) ==
        doctest::Approx(4.25).epsilon(1e-15));
}

TEST_CASE("single particle estimates are exact") {
  const auto ps = make_system({2.5}, {-123.0});
  CHECK(ps.normalized_weights()[0] == 1.0);
  CHECK(estimate(ps, [](double x) { return x * x; }) == 6.25);
}

TEST_CASE("uniform weights give a plain average") {
  const auto ps = make_system({0.0, 1.0, 2.0, 3.0}, {0.5, 0.5, 0.5, 0.5});
  CHECK(estimate(ps, [](double x) { return x == 0.0 ? 1.0 : 0.0; }) ==
        doctest::Approx(0.25));
}

TEST_CASE("estimates are permutation and scale invariant") {
  RandomStream rng(31);
  std::vector<double> x(257), lw(257);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    lw[i] = 2.0 * rng.normal();
  }
  auto h = [](double v) { return std::sin(v); };
  const double base = estimate(make_system(x, lw), h);

  // permutation
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::shuffle(idx.begin(), idx.end(), std::mt19937(99));
  std::vector<double> px(x.size()), plw(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    px[i] = x[idx[i]];
    plw[i] = lw[idx[i]];
  }
  CHECK(estimate(make_system(px, plw), h) ==
        doctest::Approx(base).epsilon(1e-13));

  // positive rescaling of every weight
  std::vector<double> slw = lw;
  for (double& v : slw) v += 17.5;
  CHECK(estimate(make_system(x, slw), h) ==
        doctest::Approx(base).epsilon(1e-13));
}

TEST_CASE("estimates stay inside the value range") {
  RandomStream rng(53);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> x(64), lw(64);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = rng.normal();
      lw[i] = 3.0 * rng.normal();
    }
    const auto ps = make_system(x, lw);
    auto h = [](double v) { return std::tanh(v); };
    double lo = 1e300, hi = -1e300;
    for (double v : x) {
      lo = std::min(lo, h(v));
      hi = std::max(hi, h(v));
    }
    const double e = estimate(ps, h);
    CHECK(e >= lo - 1e-12);
    CHECK(e <= hi + 1e-12);
  }
}

TEST_CASE("effective sample size diagnostics") {
  const auto equal = make_system(std::vector<double>(10, 0.0),
                                 std::vector<double>(10, 1.3));
  CHECK(effective_sample_size(equal) == doctest::Approx(10.0).epsilon(1e-12));

  const std::vector<double> one_hot = {1.0, 0.0, 0.0, 0.0};
  CHECK(effective_sample_size(std::span<const double>(one_hot)) ==
        doctest::Approx(1.0));

  const std::vector<double> w = {1.0, 1.0, 2.0};
  CHECK(effective_sample_size(std::span<const double>(w)) ==
        doctest::Approx(16.0 / 6.0).epsilon(1e-12));

  // near-degenerate log-domain system
  const auto spiked = make_system({0.0, 1.0, 2.0}, {0.0, -700.0, -710.0});
  CHECK(effective_sample_size(spiked) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("weight total matches the exponentiated sum") {
  RandomStream rng(71);
  std::vector<double> x(100000), lw(100000);
  long double ref = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    lw[i] = rng.normal() - 1.0;
    ref += std::exp(static_cast<long double>(lw[i]));
  }
  const auto ps = make_system(x, lw);
  CHECK(ps.weight_sum() ==
        doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
}

TEST_CASE("systems reject degenerate and malformed weights") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(make_system({1.0, 2.0}, {-inf, -inf}), WeightDegeneracyError);
  CHECK_THROWS_AS(make_system({1.0, 2.0}, {0.0, -inf}), InvariantError);
  CHECK_THROWS_AS(make_system({1.0, 2.0}, {0.0, inf}), InvariantError);
  CHECK_THROWS_AS(make_system({1.0, 2.0}, {0.0, std::nan("")}), InvariantError);
  CHECK_THROWS_AS(make_system({}, {}), InvariantError);
  CHECK_THROWS_AS(make_system({1.0}, {0.0, 0.0}), InvariantError);
  CHECK_THROWS_AS(ParticleSystem(Direction::forward, 1, {1.0, 2.0}, {0.0, 0.0},
                                 std::vector<int>{0, 5}),
                  InvariantError);
}

TEST_CASE("debug csv lists every particle") {
  const auto ps = ParticleSystem(Direction::backward, 3, {1.5, -2.0},
                                 {0.1, 0.2}, std::vector<int>{1, 0});
  std::ostringstream out;
  write_debug_csv(ps, out);
  CHECK(out.str() ==
        "index,particle,log_weight,ancestor\n0,1.5,0.1,1\n1,-2,0.2,0\n");
}
