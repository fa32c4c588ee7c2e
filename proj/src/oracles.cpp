#include "smc/oracles.hpp"

#include <cmath>
#include <stdexcept>

#include "smc/numeric.hpp"

namespace smc {

namespace {

constexpr double kVarianceFloor = 1e-300;

void check_variance(double v) {
  if (!(v >= kVarianceFloor))
    throw std::domain_error("oracle variance underflow");
}

const LgssmParams& lgssm_params(const StateSpaceModel& model) {
  if (model.kind != ModelKind::lgssm || !model.lgssm)
    throw std::invalid_argument("operation requires a linear-Gaussian model");
  return *model.lgssm;
}

const HmmParams& hmm_params(const StateSpaceModel& model) {
  if (model.kind != ModelKind::finite_hmm || !model.hmm)
    throw std::invalid_argument("operation requires a finite HMM");
  return *model.hmm;
}

std::vector<double> normalized(std::vector<double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  if (!(s > 0.0)) throw std::domain_error("cannot normalize a zero vector");
  for (double& x : v) x /= s;
  return v;
}

}  // namespace

KalmanResult kalman_rts(const StateSpaceModel& model) {
  const auto& p = lgssm_params(model);
  const int T = model.horizon;
  const auto& ys = model.observations;

  std::vector<double> fm(static_cast<std::size_t>(T) + 1),
      fv(static_cast<std::size_t>(T) + 1);
  std::vector<double> pm(static_cast<std::size_t>(T) + 1),
      pv(static_cast<std::size_t>(T) + 1);

  double mean = p.m0, var = p.s0 * p.s0;
  for (int t = 0; t <= T; ++t) {
    if (t > 0) {
      mean = p.a * mean;
      var = p.a * p.a * var + p.sigma_u * p.sigma_u;
    }
    pm[static_cast<std::size_t>(t)] = mean;
    pv[static_cast<std::size_t>(t)] = var;
    const double innovation_var = p.b * p.b * var + p.sigma_v * p.sigma_v;
    const double gain = var * p.b / innovation_var;
    mean += gain * (ys[static_cast<std::size_t>(t)] - p.b * mean);
    var = (1.0 - gain * p.b) * var;
    check_variance(var);
    fm[static_cast<std::size_t>(t)] = mean;
    fv[static_cast<std::size_t>(t)] = var;
  }

  KalmanResult out;
  out.filter.resize(static_cast<std::size_t>(T) + 1);
  out.smoother.resize(static_cast<std::size_t>(T) + 1);
  for (int t = 0; t <= T; ++t)
    out.filter[static_cast<std::size_t>(t)] = {fm[static_cast<std::size_t>(t)],
                                               fv[static_cast<std::size_t>(t)],
                                               t};

  double sm = fm[static_cast<std::size_t>(T)],
         sv = fv[static_cast<std::size_t>(T)];
  out.smoother[static_cast<std::size_t>(T)] = {sm, sv, T};
  for (int t = T - 1; t >= 0; --t) {
    const double gain =
        fv[static_cast<std::size_t>(t)] * p.a / pv[static_cast<std::size_t>(t) + 1];
    sm = fm[static_cast<std::size_t>(t)] +
         gain * (sm - pm[static_cast<std::size_t>(t) + 1]);
    sv = fv[static_cast<std::size_t>(t)] +
         gain * gain * (sv - pv[static_cast<std::size_t>(t) + 1]);
    check_variance(sv);
    out.smoother[static_cast<std::size_t>(t)] = {sm, sv, t};
  }
  return out;
}

std::vector<GaussianMarginal> lgssm_backward_info(const StateSpaceModel& model,
                                                  const PseudoPrior& prior) {
  const auto& p = lgssm_params(model);
  if (!prior.lgssm_moments)
    throw std::invalid_argument(
        "backward-info oracle requires the prior-marginal pseudo-prior");
  const auto& moments = *prior.lgssm_moments;
  const int T = model.horizon;
  const auto& ys = model.observations;

  auto update = [&p](double mean, double var, double y) {
    const double innovation_var = p.b * p.b * var + p.sigma_v * p.sigma_v;
    const double gain = var * p.b / innovation_var;
    const double m = mean + gain * (y - p.b * mean);
    const double v = (1.0 - gain * p.b) * var;
    check_variance(v);
    return std::pair<double, double>{m, v};
  };

  std::vector<GaussianMarginal> out(static_cast<std::size_t>(T) + 1);
  auto [mean, var] = moments[static_cast<std::size_t>(T)];
  std::tie(mean, var) = update(mean, var, ys[static_cast<std::size_t>(T)]);
  out[static_cast<std::size_t>(T)] = {mean, var, T};

  for (int t = T - 1; t >= 0; --t) {
    // Reversed prior dynamics from t+1 to t, then update with y_t.
    const auto [mt, vt] = moments[static_cast<std::size_t>(t)];
    const auto [mn, vn] = moments[static_cast<std::size_t>(t) + 1];
    const double gain = p.a * vt / vn;
    const double rev_var = vt - gain * gain * vn;
    const double pred_mean = mt + gain * (mean - mn);
    const double pred_var = gain * gain * var + rev_var;
    std::tie(mean, var) = update(pred_mean, pred_var, ys[static_cast<std::size_t>(t)]);
    out[static_cast<std::size_t>(t)] = {mean, var, t};
  }
  return out;
}

std::vector<GaussianMarginal> lgssm_backward_info_quadrature(
    const StateSpaceModel& model, const PseudoPrior& prior, int grid_points) {
  const auto& p = lgssm_params(model);
  const int T = model.horizon;

  // Grid wide enough for the prior chain and the observations.
  double lo = p.m0 - 10.0 * p.s0, hi = p.m0 + 10.0 * p.s0;
  {
    double mean = p.m0, var = p.s0 * p.s0;
    for (int t = 1; t <= T; ++t) {
      mean = p.a * mean;
      var = p.a * p.a * var + p.sigma_u * p.sigma_u;
      lo = std::min(lo, mean - 10.0 * std::sqrt(var));
      hi = std::max(hi, mean + 10.0 * std::sqrt(var));
    }
  }
  const std::size_t n = static_cast<std::size_t>(grid_points);
  const double dx = (hi - lo) / static_cast<double>(n - 1);
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = lo + dx * static_cast<double>(i);

  auto trapezoid_weight = [&](std::size_t i) {
    return (i == 0 || i == n - 1) ? 0.5 * dx : dx;
  };

  // likelihood[i] = p(y_{t..T} | X_t = grid[i]), refreshed per t and
  // renormalized to dodge underflow (marginals are ratio-invariant).
  std::vector<double> likelihood(n), next(n);
  std::vector<GaussianMarginal> out(static_cast<std::size_t>(T) + 1);

  for (std::size_t i = 0; i < n; ++i)
    likelihood[i] = model.potential(T, grid[i]);

  auto record = [&](int t) {
    std::vector<double> mass(n);
    for (std::size_t i = 0; i < n; ++i)
      mass[i] = prior.density(t, grid[i]) * likelihood[i] * trapezoid_weight(i);
    const double total = pairwise_sum(mass);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += mass[i] * grid[i];
    mean /= total;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      var += mass[i] * (grid[i] - mean) * (grid[i] - mean);
    var /= total;
    out[static_cast<std::size_t>(t)] = {mean, var, t};
  };

  record(T);
  for (int t = T - 1; t >= 0; --t) {
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, likelihood[i]);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        acc += model.transition_density(grid[i], grid[j]) *
               (likelihood[j] / scale) * trapezoid_weight(j);
      next[i] = model.potential(t, grid[i]) * acc;
    }
    likelihood.swap(next);
    record(t);
  }
  return out;
}

HmmExactResult hmm_exact(const StateSpaceModel& model, const PseudoPrior& prior,
                         double enumeration_cap) {
  const auto& p = hmm_params(model);
  const int K = p.num_states();
  const int T = model.horizon;

  HmmExactResult out;
  out.filter.resize(static_cast<std::size_t>(T) + 1);
  out.backward_info.resize(static_cast<std::size_t>(T) + 1);
  out.smoother.resize(static_cast<std::size_t>(T) + 1);

  auto g = [&](int t, int x) { return model.potential(t, static_cast<double>(x)); };

  // Forward pass: filtered marginals, normalized each step.
  std::vector<std::vector<double>> alpha(static_cast<std::size_t>(T) + 1);
  {
    std::vector<double> a(static_cast<std::size_t>(K));
    for (int x = 0; x < K; ++x)
      a[static_cast<std::size_t>(x)] = p.init[static_cast<std::size_t>(x)] * g(0, x);
    alpha[0] = normalized(a);
    for (int t = 1; t <= T; ++t) {
      std::vector<double> nxt(static_cast<std::size_t>(K), 0.0);
      for (int x = 0; x < K; ++x)
        for (int xp = 0; xp < K; ++xp)
          nxt[static_cast<std::size_t>(xp)] +=
              alpha[static_cast<std::size_t>(t) - 1][static_cast<std::size_t>(x)] *
              p.transition[x][xp] * g(t, xp);
      alpha[static_cast<std::size_t>(t)] = normalized(nxt);
    }
  }

  // Backward likelihood B_t(x) = p(y_{t..T} | X_t = x), renormalized.
  std::vector<std::vector<double>> blik(static_cast<std::size_t>(T) + 1);
  {
    std::vector<double> b(static_cast<std::size_t>(K));
    for (int x = 0; x < K; ++x) b[static_cast<std::size_t>(x)] = g(T, x);
    blik[static_cast<std::size_t>(T)] = b;
    for (int t = T - 1; t >= 0; --t) {
      std::vector<double> cur(static_cast<std::size_t>(K), 0.0);
      for (int x = 0; x < K; ++x) {
        double acc = 0.0;
        for (int xp = 0; xp < K; ++xp)
          acc += p.transition[x][xp] *
                 blik[static_cast<std::size_t>(t) + 1][static_cast<std::size_t>(xp)];
        cur[static_cast<std::size_t>(x)] = g(t, x) * acc;
      }
      double scale = 0.0;
      for (double v : cur) scale = std::max(scale, v);
      for (double& v : cur) v /= scale;
      blik[static_cast<std::size_t>(t)] = cur;
    }
  }

  // beta_t(x) = p(y_{t+1..T} | X_t = x) up to scale, for the smoother.
  std::vector<std::vector<double>> beta(static_cast<std::size_t>(T) + 1);
  beta[static_cast<std::size_t>(T)].assign(static_cast<std::size_t>(K), 1.0);
  for (int t = T - 1; t >= 0; --t) {
    std::vector<double> cur(static_cast<std::size_t>(K), 0.0);
    for (int x = 0; x < K; ++x) {
      double acc = 0.0;
      for (int xp = 0; xp < K; ++xp)
        acc += p.transition[x][xp] * g(t + 1, xp) *
               beta[static_cast<std::size_t>(t) + 1][static_cast<std::size_t>(xp)];
      cur[static_cast<std::size_t>(x)] = acc;
    }
    double scale = 0.0;
    for (double v : cur) scale = std::max(scale, v);
    for (double& v : cur) v /= scale;
    beta[static_cast<std::size_t>(t)] = cur;
  }

  for (int t = 0; t <= T; ++t) {
    out.filter[static_cast<std::size_t>(t)] = {alpha[static_cast<std::size_t>(t)], t};
    std::vector<double> psi(static_cast<std::size_t>(K));
    for (int x = 0; x < K; ++x)
      psi[static_cast<std::size_t>(x)] =
          prior.density(t, x) *
          blik[static_cast<std::size_t>(t)][static_cast<std::size_t>(x)];
    out.backward_info[static_cast<std::size_t>(t)] = {normalized(psi), t};
    std::vector<double> sm(static_cast<std::size_t>(K));
    for (int x = 0; x < K; ++x)
      sm[static_cast<std::size_t>(x)] =
          alpha[static_cast<std::size_t>(t)][static_cast<std::size_t>(x)] *
          beta[static_cast<std::size_t>(t)][static_cast<std::size_t>(x)];
    out.smoother[static_cast<std::size_t>(t)] = {normalized(sm), t};
  }

  if (std::pow(static_cast<double>(K), static_cast<double>(T) + 1.0) <=
      enumeration_cap) {
    const auto brute = hmm_enumerated(model, prior, enumeration_cap);
    auto check = [](const std::vector<DiscreteMarginal>& a,
                    const std::vector<DiscreteMarginal>& b, const char* what) {
      for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t x = 0; x < a[t].probs.size(); ++x)
          if (std::abs(a[t].probs[x] - b[t].probs[x]) > 1e-10)
            throw std::logic_error(std::string("hmm_exact: DP disagrees with "
                                               "enumeration for ") +
                                   what);
    };
    check(out.filter, brute.filter, "filter");
    check(out.backward_info, brute.backward_info, "backward_info");
    check(out.smoother, brute.smoother, "smoother");
    out.enumeration_checked = true;
  }
  return out;
}

std::vector<DiscreteMarginal> hmm_two_filter_marginals(
    const StateSpaceModel& model, const PseudoPrior& prior) {
  const auto& p = hmm_params(model);
  const int K = p.num_states();
  const int T = model.horizon;
  const auto exact = hmm_exact(model, prior, 0.0);  // DP only, no recursion guard

  auto g = [&](int t, int x) { return model.potential(t, static_cast<double>(x)); };
  auto gamma = [&](int t, int x) { return prior.density(t, static_cast<double>(x)); };

  std::vector<DiscreteMarginal> out(static_cast<std::size_t>(T) + 1);
  for (int s = 0; s <= T; ++s) {
    std::vector<double> mass(static_cast<std::size_t>(K), 0.0);
    if (s == 0) {
      // Initial law replaces the forward filter; the backward-info
      // marginal at time 1 supplies the future.
      for (int x = 0; x < K; ++x) {
        double acc = 0.0;
        if (T == 0) {
          acc = 1.0;
        } else {
          for (int xn = 0; xn < K; ++xn)
            acc += p.transition[x][xn] *
                   exact.backward_info[1].probs[static_cast<std::size_t>(xn)] /
                   gamma(1, xn);
        }
        mass[static_cast<std::size_t>(x)] =
            p.init[static_cast<std::size_t>(x)] * g(0, x) * acc;
      }
    } else if (s == T) {
      for (int x = 0; x < K; ++x) {
        double acc = 0.0;
        for (int xm = 0; xm < K; ++xm)
          acc += exact.filter[static_cast<std::size_t>(T) - 1]
                     .probs[static_cast<std::size_t>(xm)] *
                 p.transition[xm][x];
        mass[static_cast<std::size_t>(x)] = acc * g(T, x);
      }
    } else {
      for (int x = 0; x < K; ++x) {
        double acc = 0.0;
        for (int xm = 0; xm < K; ++xm)
          for (int xn = 0; xn < K; ++xn)
            acc += exact.filter[static_cast<std::size_t>(s) - 1]
                       .probs[static_cast<std::size_t>(xm)] *
                   p.transition[xm][x] *
                   p.transition[x][xn] *
                   exact.backward_info[static_cast<std::size_t>(s) + 1]
                       .probs[static_cast<std::size_t>(xn)] /
                   gamma(s + 1, xn);
        mass[static_cast<std::size_t>(x)] = acc * g(s, x);
      }
    }
    out[static_cast<std::size_t>(s)] = {normalized(mass), s};
  }
  return out;
}

HmmEnumerated hmm_enumerated(const StateSpaceModel& model,
                             const PseudoPrior& prior, double enumeration_cap) {
  const auto& p = hmm_params(model);
  const int K = p.num_states();
  const int T = model.horizon;
  if (std::pow(static_cast<double>(K), static_cast<double>(T) + 1.0) >
      enumeration_cap)
    throw std::invalid_argument("enumeration cap exceeded");

  auto g = [&](int t, int x) { return model.potential(t, static_cast<double>(x)); };

  HmmEnumerated out;
  out.filter.resize(static_cast<std::size_t>(T) + 1);
  out.backward_info.resize(static_cast<std::size_t>(T) + 1);
  out.smoother.resize(static_cast<std::size_t>(T) + 1);

  // Smoothing and filtering: enumerate prefixes x_{0..t} once per t; the
  // full-path weights at t = T also give every smoothed marginal.
  for (int t = 0; t <= T; ++t) {
    const long long paths =
        static_cast<long long>(std::pow(static_cast<double>(K), t + 1));
    std::vector<double> filter_mass(static_cast<std::size_t>(K), 0.0);
    std::vector<std::vector<double>> smooth_mass;
    if (t == T)
      smooth_mass.assign(static_cast<std::size_t>(T) + 1,
                         std::vector<double>(static_cast<std::size_t>(K), 0.0));
    std::vector<int> path(static_cast<std::size_t>(t) + 1);
    for (long long code = 0; code < paths; ++code) {
      long long c = code;
      for (int u = 0; u <= t; ++u) {
        path[static_cast<std::size_t>(u)] = static_cast<int>(c % K);
        c /= K;
      }
      double w = p.init[static_cast<std::size_t>(path[0])] * g(0, path[0]);
      for (int u = 1; u <= t; ++u)
        w *= p.transition[path[static_cast<std::size_t>(u) - 1]]
                         [path[static_cast<std::size_t>(u)]] *
             g(u, path[static_cast<std::size_t>(u)]);
      filter_mass[static_cast<std::size_t>(path[static_cast<std::size_t>(t)])] += w;
      if (t == T)
        for (int u = 0; u <= T; ++u)
          smooth_mass[static_cast<std::size_t>(u)]
                     [static_cast<std::size_t>(path[static_cast<std::size_t>(u)])] +=
              w;
    }
    out.filter[static_cast<std::size_t>(t)] = {normalized(filter_mass), t};
    if (t == T)
      for (int u = 0; u <= T; ++u)
        out.smoother[static_cast<std::size_t>(u)] = {
            normalized(smooth_mass[static_cast<std::size_t>(u)]), u};
  }

  // Backward information: enumerate suffixes x_{t..T}.
  for (int t = 0; t <= T; ++t) {
    const int len = T - t + 1;
    const long long paths =
        static_cast<long long>(std::pow(static_cast<double>(K), len));
    std::vector<double> mass(static_cast<std::size_t>(K), 0.0);
    std::vector<int> path(static_cast<std::size_t>(len));
    for (long long code = 0; code < paths; ++code) {
      long long c = code;
      for (int u = 0; u < len; ++u) {
        path[static_cast<std::size_t>(u)] = static_cast<int>(c % K);
        c /= K;
      }
      // gamma_t(x_t) prod_{u=t+1..T} g_{u-1}(x_{u-1}) q(x_{u-1}, x_u), then g_T.
      double w = prior.density(t, static_cast<double>(path[0]));
      for (int u = 1; u < len; ++u)
        w *= g(t + u - 1, path[static_cast<std::size_t>(u) - 1]) *
             p.transition[path[static_cast<std::size_t>(u) - 1]]
                         [path[static_cast<std::size_t>(u)]];
      w *= g(T, path[static_cast<std::size_t>(len) - 1]);
      mass[static_cast<std::size_t>(path[0])] += w;
    }
    out.backward_info[static_cast<std::size_t>(t)] = {normalized(mass), t};
  }
  return out;
}

}  // namespace smc
