#include <doctest.h>

#include <cmath>

#include "smc/errors.hpp"
#include "smc/forward.hpp"
#include "smc/oracles.hpp"

using namespace smc;

namespace {

StateSpaceModel two_state_hmm(ObservationSequence ys) {
  return make_finite_hmm({{0.9, 0.1}, {0.2, 0.8}},
                         {{0.7, 0.3}, {0.4, 0.6}}, {0.5, 0.5}, std::move(ys));
}

}  // namespace

TEST_CASE("single-particle init has unit weight") {
  const auto m = make_lgssm(0.9, 1.0, 1.0, 1.0, 0.0, 1.0, {0.0});
  const auto ps = init_forward(m, 1, 42);
  CHECK(ps.size() == 1);
  CHECK(ps.normalized_weights()[0] == 1.0);
  CHECK(ps.direction() == Direction::forward);
  CHECK(ps.time() == 0);
  CHECK(!ps.ancestors());
}

TEST_CASE("uniform emission column gives equal initial weights") {
  const auto m = make_finite_hmm({{0.9, 0.1}, {0.2, 0.8}},
                                 {{0.5, 0.5}, {0.5, 0.5}}, {0.5, 0.5}, {0.0});
  const auto ps = init_forward(m, 100, 7);
  const auto lw = ps.log_weights();
  for (double v : lw) CHECK(v == lw[0]);
}

TEST_CASE("initial weighted mean agrees with the kalman filter") {
  const auto m = make_lgssm(0.9, 1.0, 1.0, 1.0, 0.0, 1.0, {0.0});
  const int n = 100000;
  const auto ps = init_forward(m, n, 1);
  const auto kalman = kalman_rts(m);

  const auto w = ps.normalized_weights();
  const auto x = ps.particles();
  double mean = 0;
  for (std::size_t i = 0; i < w.size(); ++i) mean += w[i] * x[i];
  double var = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    var += w[i] * (x[i] - mean) * (x[i] - mean);
  const double ess = effective_sample_size(ps);
  CHECK(std::abs(mean - kalman.filter[0].mean) <
        3.0 * std::sqrt(var / ess));
}

TEST_CASE("bootstrap step weights reduce to the potential") {
  const auto m = two_state_hmm({0.0, 1.0});
  const auto proposal = bootstrap_forward_proposal(m);
  const auto p0 = init_forward(m, 500, 3);
  const auto p1 = forward_step(m, proposal, p0, 1, 4);
  REQUIRE(p1.ancestors().has_value());
  const auto x = p1.particles();
  const auto lw = p1.log_weights();
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(lw[i] == doctest::Approx(m.log_potential(1, x[i])).epsilon(1e-12));
}

TEST_CASE("bootstrap filter tracks the exact forward recursion") {
  const auto m = two_state_hmm({0.0, 1.0});
  const auto prior = prior_marginal_pseudo_prior(m);
  const auto exact = hmm_exact(m, prior);
  const auto proposal = bootstrap_forward_proposal(m);

  const auto p0 = init_forward(m, 100000, 11);
  const auto p1 = forward_step(m, proposal, p0, 1, 12);
  const double est =
      estimate(p1, [](double x) { return x == 0.0 ? 1.0 : 0.0; });
  CHECK(est == doctest::Approx(exact.filter[1].probs[0]).epsilon(0.03));
}

TEST_CASE("single particle stays normalized after a step") {
  const auto m = make_lgssm(0.5, 1.0, 1.0, 1.0, 0.0, 1.0, {0.0, 1.0});
  const auto proposal = bootstrap_forward_proposal(m);
  const auto p0 = init_forward(m, 1, 5);
  const auto p1 = forward_step(m, proposal, p0, 1, 6);
  CHECK(p1.normalized_weights()[0] == 1.0);
  CHECK((*p1.ancestors())[0] == 0);
}

TEST_CASE("forward step validates its inputs") {
  const auto m = two_state_hmm({0.0, 1.0, 0.0});
  const auto proposal = bootstrap_forward_proposal(m);
  const auto p0 = init_forward(m, 10, 5);
  CHECK_THROWS_AS((void)forward_step(m, proposal, p0, 2, 6), InvariantError);
  CHECK_THROWS_AS((void)forward_step(m, proposal, p0, 0, 6),
                  std::out_of_range);
  const auto p1 = forward_step(m, proposal, p0, 1, 6);
  const auto p2 = forward_step(m, proposal, p1, 2, 7);
  CHECK_THROWS_AS((void)forward_step(m, proposal, p2, 3, 8),
                  std::out_of_range);
  CHECK_THROWS_AS((void)init_forward(m, 0, 5), std::invalid_argument);
}

TEST_CASE("forward runs are reproducible and seed sensitive") {
  const auto m = two_state_hmm({0.0, 1.0});
  const auto proposal = bootstrap_forward_proposal(m);
  const auto a = forward_step(m, proposal, init_forward(m, 64, 1), 1, 2);
  const auto b = forward_step(m, proposal, init_forward(m, 64, 1), 1, 2);
  const auto c = forward_step(m, proposal, init_forward(m, 64, 1), 1, 3);
  bool same = true, diff = false;
  for (int i = 0; i < 64; ++i) {
    same = same && a.particles()[i] == b.particles()[i];
    diff = diff || a.particles()[i] != c.particles()[i];
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("statistical: bootstrap hmm filter error is small for most seeds") {
  // At ten thousand particles the filter estimate of each state
  // probability lands within 0.02 of the exact recursion for at least
  // 95 of 100 seeds.
  const auto m = two_state_hmm({0.0, 1.0, 0.0});
  const auto prior = prior_marginal_pseudo_prior(m);
  const auto exact = hmm_exact(m, prior);
  const auto proposal = bootstrap_forward_proposal(m);

  int good = 0;
  for (int seed = 0; seed < 100; ++seed) {
    auto ps = init_forward(m, 10000, 1000 + seed);
    for (int t = 1; t <= m.horizon; ++t)
      ps = forward_step(m, proposal, ps, t, derive_key(2000 + seed, t));
    bool ok = true;
    for (int k = 0; k < 2; ++k) {
      const double est = estimate(
          ps, [k](double x) { return x == static_cast<double>(k) ? 1.0 : 0.0; });
      ok = ok && std::abs(est - exact.filter[m.horizon].probs[k]) < 0.02;
    }
    good += ok ? 1 : 0;
  }
  CHECK(good >= 95);
}
