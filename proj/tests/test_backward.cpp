#include <doctest.h>

#include <cmath>

#include "smc/backward.hpp"
#include "smc/errors.hpp"
#include "smc/oracles.hpp"

using namespace smc;

namespace {

StateSpaceModel two_state_hmm(ObservationSequence ys) {
  return make_finite_hmm({{0.9, 0.1}, {0.2, 0.8}},
                         {{0.7, 0.3}, {0.4, 0.6}}, {0.5, 0.5}, std::move(ys));
}

double indicator0(double x) { return x == 0.0 ? 1.0 : 0.0; }

// Pseudo-prior whose log values are small integers plus an exact shift;
// adding the shift is then exact in floating point, which makes the
// scale-invariance of the backward pass testable bit for bit.
PseudoPrior integer_log_prior(double log_scale, bool scale_terminal) {
  static const double table[4][2] = {{0.0, 1.0}, {1.0, -1.0},
                                     {-1.0, 0.0}, {2.0, 1.0}};
  PseudoPrior p;
  p.log_density = [log_scale](int t, double x) {
    return table[t][static_cast<int>(x)] + log_scale;
  };
  if (scale_terminal) {
    p.log_terminal = [log_scale](double x) {
      return table[3][static_cast<int>(x)] + log_scale;
    };
  } else {
    p.log_terminal = [](double) { return 0.0; };
  }
  p.sample_terminal = [](RandomStream& rng) {
    return rng.uniform() < 0.5 ? 0.0 : 1.0;
  };
  return p;
}

BackwardProposal uniform_kernel_proposal(const PseudoPrior& prior) {
  BackwardProposal bp;
  bp.log_adjustment = [lg = prior.log_density](int t, double x_next) {
    return lg(t + 1, x_next);
  };
  bp.log_kernel = [](int, double, double) { return std::log(0.5); };
  bp.sample = [](int, double, RandomStream& rng) {
    return rng.uniform() < 0.5 ? 0.0 : 1.0;
  };
  return bp;
}

std::vector<ParticleSystem> run_backward(const StateSpaceModel& m,
                                         const PseudoPrior& prior,
                                         const BackwardProposal& bp, int n,
                                         std::uint64_t seed) {
  std::vector<ParticleSystem> out;
  out.push_back(init_backward(m, prior, n, derive_key(seed, 1000)));
  for (int t = m.horizon - 1; t >= 0; --t)
    out.push_back(backward_step(m, prior, bp, out.back(), t,
                                derive_key(seed, static_cast<std::uint64_t>(t))));
  return out;
}

}  // namespace

TEST_CASE("terminal weights are equal when the potential is flat") {
  const auto m = make_finite_hmm({{0.9, 0.1}, {0.2, 0.8}},
                                 {{0.6, 0.4}, {0.6, 0.4}}, {0.5, 0.5},
                                 {0.0, 0.0});
  const auto prior = prior_marginal_pseudo_prior(m);
  const auto ps = init_backward(m, prior, 200, 17);
  CHECK(ps.direction() == Direction::backward);
  CHECK(ps.time() == m.horizon);
  const auto lw = ps.log_weights();
  for (double v : lw) CHECK(v == doctest::Approx(lw[0]).epsilon(1e-14));
}

TEST_CASE("single backward particle has unit weight") {
  const auto m = two_state_hmm({0.0, 1.0});
  const auto prior = prior_marginal_pseudo_prior(m);
  CHECK(init_backward(m, prior, 1, 3).normalized_weights()[0] == 1.0);
}

TEST_CASE("terminal system targets the tilted one-observation posterior") {
  const auto m = two_state_hmm({0.0, 1.0});
  const auto prior = prior_marginal_pseudo_prior(m);
  const auto brute = hmm_enumerated(m, prior);
  const auto ps = init_backward(m, prior, 100000, 5);
  CHECK(estimate(ps, indicator0) ==
        doctest::Approx(brute.backward_info[1].probs[0]).epsilon(0.03));
}

TEST_CASE("backward step with a uniform kernel matches enumeration") {
  const auto m = two_state_hmm({0.0, 1.0});
  const auto prior = prior_marginal_pseudo_prior(m);
  const auto bp = uniform_kernel_proposal(prior);
  const auto brute = hmm_enumerated(m, prior);

  const auto terminal = init_backward(m, prior, 100000, 21);
  const auto ps = backward_step(m, prior, bp, terminal, 0, 22);
  REQUIRE(ps.ancestors().has_value());
  CHECK(ps.time() == 0);
  CHECK(std::abs(estimate(ps, indicator0) - brute.backward_info[0].probs[0]) <
        0.01);
}

TEST_CASE("fully adapted proposal yields uniform weights") {
  const auto m = two_state_hmm({0.0, 1.0});
  const auto prior = prior_marginal_pseudo_prior(m);
  const auto bp = fully_adapted_backward_proposal(m, prior);

  // adjustment at t=0 toward x'=0 is the two-term sum over states
  const double expected = prior.density(0, 0.0) * m.potential(0, 0.0) * 0.9 +
                          prior.density(0, 1.0) * m.potential(0, 1.0) * 0.2;
  CHECK(std::exp(bp.log_adjustment(0, 0.0)) ==
        doctest::Approx(expected).epsilon(1e-12));

  const auto terminal = init_backward(m, prior, 5000, 9);
  const auto ps = backward_step(m, prior, bp, terminal, 0, 10);
  const auto lw = ps.log_weights();
  for (double v : lw) CHECK(v == doctest::Approx(lw[0]).epsilon(1e-10));
}

TEST_CASE("fully adapted kernel is uniform for a symmetric model") {
  const auto m = make_finite_hmm({{0.5, 0.5}, {0.5, 0.5}},
                                 {{0.5, 0.5}, {0.5, 0.5}}, {0.5, 0.5},
                                 {0.0, 1.0});
  const auto prior = prior_marginal_pseudo_prior(m);
  const auto bp = fully_adapted_backward_proposal(m, prior);
  for (int x = 0; x < 2; ++x)
    for (int xp = 0; xp < 2; ++xp)
      CHECK(bp.log_kernel(0, xp, x) == doctest::Approx(std::log(0.5)));
}

TEST_CASE("fully adapted proposal rejects continuous models") {
  const auto m = make_lgssm(0.9, 1.0, 1.0, 1.0, 0.0, 1.0, {0.0, 0.0});
  const auto prior = prior_marginal_pseudo_prior(m);
  CHECK_THROWS_AS((void)fully_adapted_backward_proposal(m, prior),
                  std::invalid_argument);
}

TEST_CASE("backward step validates its inputs") {
  const auto m = two_state_hmm({0.0, 1.0, 0.0});
  const auto prior = prior_marginal_pseudo_prior(m);
  const auto bp = default_backward_proposal(m, prior);
  const auto terminal = init_backward(m, prior, 16, 3);
  CHECK_THROWS_AS((void)backward_step(m, prior, bp, terminal, 0, 4),
                  InvariantError);  // time gap
  const auto p1 = backward_step(m, prior, bp, terminal, 1, 4);
  const auto p0 = backward_step(m, prior, bp, p1, 0, 5);
  CHECK_THROWS_AS((void)backward_step(m, prior, bp, p0, -1, 6),
                  std::out_of_range);
  CHECK_THROWS_AS((void)init_backward(m, prior, 0, 1), std::invalid_argument);
}

TEST_CASE("lgssm backward pass tracks the exact backward-info moments") {
  const auto m =
      make_lgssm(0.9, 1.0, 1.0, 1.0, 0.0, 1.0, {0.4, -0.3, 0.9, 0.1});
  const auto prior = prior_marginal_pseudo_prior(m);
  const auto bp = default_backward_proposal(m, prior);
  const auto oracle = lgssm_backward_info(m, prior);

  auto systems = run_backward(m, prior, bp, 50000, 77);
  for (const auto& ps : systems) {
    const auto& g = oracle[static_cast<std::size_t>(ps.time())];
    const auto w = ps.normalized_weights();
    const auto x = ps.particles();
    double mean = 0;
    for (std::size_t i = 0; i < w.size(); ++i) mean += w[i] * x[i];
    double var = 0;
    for (std::size_t i = 0; i < w.size(); ++i)
      var += w[i] * (x[i] - mean) * (x[i] - mean);
    const double se = std::sqrt(var / effective_sample_size(ps));
    CHECK(std::abs(mean - g.mean) < 5.0 * se + 1e-3);
  }
}

TEST_CASE("rescaling the pseudo-prior leaves the backward pass unchanged") {
  const auto m = two_state_hmm({0.0, 1.0, 0.0, 1.0});
  REQUIRE(m.horizon == 3);
  const int n = 2000;
  const std::uint64_t seed = 123456;

  SUBCASE("terminal instrumental proportional to the family: bit for bit") {
    const auto base = integer_log_prior(0.0, true);
    const auto scaled = integer_log_prior(3.0, true);
    const auto runs_a =
        run_backward(m, base, uniform_kernel_proposal(base), n, seed);
    const auto runs_b =
        run_backward(m, scaled, uniform_kernel_proposal(scaled), n, seed);
    for (std::size_t k = 0; k < runs_a.size(); ++k) {
      for (int i = 0; i < n; ++i) {
        CHECK(runs_a[k].particles()[i] == runs_b[k].particles()[i]);
        CHECK(runs_a[k].log_weights()[i] == runs_b[k].log_weights()[i]);
        CHECK(runs_a[k].normalized_weights()[i] ==
              runs_b[k].normalized_weights()[i]);
      }
      if (runs_a[k].ancestors())
        for (int i = 0; i < n; ++i)
          CHECK((*runs_a[k].ancestors())[i] == (*runs_b[k].ancestors())[i]);
    }
  }

  SUBCASE("fixed terminal instrumental: constant shift at the horizon only") {
    const auto base = integer_log_prior(0.0, false);
    const auto scaled = integer_log_prior(3.0, false);
    const auto runs_a =
        run_backward(m, base, uniform_kernel_proposal(base), n, seed);
    const auto runs_b =
        run_backward(m, scaled, uniform_kernel_proposal(scaled), n, seed);
    for (std::size_t k = 0; k < runs_a.size(); ++k) {
      const bool at_horizon = runs_a[k].time() == m.horizon;
      for (int i = 0; i < n; ++i) {
        CHECK(runs_a[k].particles()[i] == runs_b[k].particles()[i]);
        if (at_horizon) {
          CHECK(runs_b[k].log_weights()[i] - runs_a[k].log_weights()[i] ==
                doctest::Approx(3.0).epsilon(1e-13));
          CHECK(runs_a[k].normalized_weights()[i] ==
                doctest::Approx(runs_b[k].normalized_weights()[i])
                    .epsilon(1e-12));
        } else {
          CHECK(runs_a[k].log_weights()[i] == runs_b[k].log_weights()[i]);
          CHECK(runs_a[k].normalized_weights()[i] ==
                runs_b[k].normalized_weights()[i]);
        }
      }
    }
  }
}

TEST_CASE("statistical: backward marginals match enumeration for most seeds") {
  const auto m = two_state_hmm({0.0, 1.0, 1.0, 0.0, 1.0, 0.0});
  REQUIRE(m.horizon == 5);
  const auto prior = prior_marginal_pseudo_prior(m);
  const auto bp = default_backward_proposal(m, prior);
  const auto brute = hmm_enumerated(m, prior);

  int good = 0;
  for (int seed = 0; seed < 100; ++seed) {
    const auto systems = run_backward(m, prior, bp, 10000, 5000 + seed);
    bool ok = true;
    for (const auto& ps : systems) {
      const double est = estimate(ps, indicator0);
      ok = ok &&
           std::abs(est - brute.backward_info[static_cast<std::size_t>(
                              ps.time())].probs[0]) < 0.02;
    }
    good += ok ? 1 : 0;
  }
  CHECK(good >= 95);
}

TEST_CASE("statistical: backward exceedance frequency decays with N") {
  const auto m = two_state_hmm({0.0, 1.0, 0.0});
  const auto prior = prior_marginal_pseudo_prior(m);
  const auto bp = default_backward_proposal(m, prior);
  const auto brute = hmm_enumerated(m, prior);
  const double truth = brute.backward_info[0].probs[0];
  const double eps = 0.05;
  const int reps = 150;

  std::vector<double> freq;
  for (int n : {128, 256, 512, 1024, 2048, 4096}) {
    int exceed = 0;
    for (int r = 0; r < reps; ++r) {
      const auto systems =
          run_backward(m, prior, bp, n, derive_key(911, n * 1000 + r));
      const double est = estimate(systems.back(), indicator0);
      if (std::abs(est - truth) > eps) ++exceed;
    }
    freq.push_back(static_cast<double>(exceed) / reps);
  }
  for (std::size_t i = 0; i + 1 < freq.size(); ++i) {
    const double band = 2.0 * std::sqrt((freq[i] * (1 - freq[i]) +
                                        freq[i + 1] * (1 - freq[i + 1])) /
                                        reps);
    CHECK(freq[i + 1] <= freq[i] + band);
  }
  CHECK(freq.back() <= freq.front());
}
