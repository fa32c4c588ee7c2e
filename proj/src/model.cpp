#include "smc/model.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "smc/numeric.hpp"

namespace smc {

namespace {

constexpr double kRowSumTol = 1e-12;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

std::vector<double> cumulative(const std::vector<double>& row) {
  std::vector<double> c(row.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    acc += row[i];
    c[i] = acc;
  }
  return c;
}

int sample_from_cumulative(const std::vector<double>& cum, double u) {
  const double target = u * cum.back();
  for (std::size_t i = 0; i < cum.size(); ++i) {
    if (cum[i] > target) return static_cast<int>(i);
  }
  return static_cast<int>(cum.size()) - 1;
}

void validate_stochastic_rows(const std::vector<std::vector<double>>& m,
                              const char* name) {
  require(!m.empty(), std::string(name) + " must be nonempty");
  const std::size_t cols = m[0].size();
  for (const auto& row : m) {
    require(row.size() == cols, std::string(name) + " rows must be equal length");
    double s = 0.0;
    for (double v : row) {
      require(v >= 0.0 && std::isfinite(v),
              std::string(name) + " entries must be finite and nonnegative");
      s += v;
    }
    require(std::abs(s - 1.0) <= kRowSumTol,
            std::string(name) + " rows must sum to 1 within 1e-12");
  }
}

int hmm_state(double x) { return static_cast<int>(std::lround(x)); }

}  // namespace

StateSpaceModel make_lgssm(double a, double b, double sigma_u, double sigma_v,
                           double m0, double s0, ObservationSequence ys) {
  require(sigma_u > 0.0, "sigma_u must be positive");
  require(sigma_v > 0.0, "sigma_v must be positive");
  require(s0 > 0.0, "s0 must be positive");
  require(!ys.empty(), "observation sequence must be nonempty");

  StateSpaceModel m;
  m.kind = ModelKind::lgssm;
  m.horizon = static_cast<int>(ys.size()) - 1;
  m.observations = std::move(ys);
  m.lgssm = LgssmParams{a, b, sigma_u, sigma_v, m0, s0};

  // rho0 = chi, so the initial density ratio is identically one.
  m.log_init_ratio = [](double) { return 0.0; };
  m.sample_init = [m0, s0](RandomStream& rng) {
    return m0 + s0 * rng.normal();
  };
  m.log_transition = [a, sigma_u](double x, double xp) {
    return gaussian_log_pdf(xp, a * x, sigma_u);
  };
  m.sample_transition = [a, sigma_u](double x, RandomStream& rng) {
    return a * x + sigma_u * rng.normal();
  };
  const auto ys_copy = m.observations;
  m.log_potential = [b, sigma_v, ys_copy](int t, double x) {
    return gaussian_log_pdf(ys_copy.at(static_cast<std::size_t>(t)), b * x,
                            sigma_v);
  };
  return m;
}

StateSpaceModel make_finite_hmm(std::vector<std::vector<double>> transition,
                                std::vector<std::vector<double>> emission,
                                std::vector<double> init,
                                ObservationSequence ys) {
  validate_stochastic_rows(transition, "transition");
  validate_stochastic_rows(emission, "emission");
  require(transition.size() == transition[0].size(),
          "transition matrix must be square");
  require(emission.size() == transition.size(),
          "emission must have one row per state");
  require(init.size() == transition.size(), "init must have one entry per state");
  {
    double s = 0.0;
    for (double v : init) {
      require(v >= 0.0, "init entries must be nonnegative");
      s += v;
    }
    require(std::abs(s - 1.0) <= kRowSumTol, "init must sum to 1 within 1e-12");
  }
  require(!ys.empty(), "observation sequence must be nonempty");
  const int num_symbols = static_cast<int>(emission[0].size());
  for (double y : ys) {
    const int sym = hmm_state(y);
    require(sym >= 0 && sym < num_symbols && y == static_cast<double>(sym),
            "observations must be integral symbol indices");
  }

  HmmParams p;
  p.transition = std::move(transition);
  p.emission = std::move(emission);
  p.init = std::move(init);
  for (const auto& row : p.transition) p.transition_cum.push_back(cumulative(row));
  p.init_cum = cumulative(p.init);

  StateSpaceModel m;
  m.kind = ModelKind::finite_hmm;
  m.horizon = static_cast<int>(ys.size()) - 1;
  m.observations = std::move(ys);
  m.hmm = p;

  // Lambdas share the parameter block by value so the model stays valid
  // under copy and move.
  const auto hp = std::make_shared<const HmmParams>(std::move(p));
  m.log_init_ratio = [](double) { return 0.0; };  // rho0 = init
  m.sample_init = [hp](RandomStream& rng) {
    return static_cast<double>(sample_from_cumulative(hp->init_cum, rng.uniform()));
  };
  m.log_transition = [hp](double x, double xp) {
    return std::log(hp->transition[hmm_state(x)][hmm_state(xp)]);
  };
  m.sample_transition = [hp](double x, RandomStream& rng) {
    return static_cast<double>(
        sample_from_cumulative(hp->transition_cum[hmm_state(x)], rng.uniform()));
  };
  const auto ys_copy = m.observations;
  m.log_potential = [hp, ys_copy](int t, double x) {
    const int sym = hmm_state(ys_copy.at(static_cast<std::size_t>(t)));
    return std::log(hp->emission[hmm_state(x)][sym]);
  };
  return m;
}

PseudoPrior prior_marginal_pseudo_prior(const StateSpaceModel& model) {
  PseudoPrior prior;
  const int T = model.horizon;

  if (model.kind == ModelKind::lgssm) {
    const auto& p = *model.lgssm;
    std::vector<std::pair<double, double>> moments(static_cast<std::size_t>(T) + 1);
    double mean = p.m0, var = p.s0 * p.s0;
    moments[0] = {mean, var};
    for (int t = 1; t <= T; ++t) {
      mean = p.a * mean;
      var = p.a * p.a * var + p.sigma_u * p.sigma_u;
      moments[static_cast<std::size_t>(t)] = {mean, var};
    }
    prior.lgssm_moments = moments;
    prior.log_density = [moments](int t, double x) {
      const auto& [m, v] = moments.at(static_cast<std::size_t>(t));
      return gaussian_log_pdf(x, m, std::sqrt(v));
    };
    const auto [mT, vT] = moments.back();
    const double sT = std::sqrt(vT);
    prior.log_terminal = [mT, sT](double x) {
      return gaussian_log_pdf(x, mT, sT);
    };
    prior.sample_terminal = [mT, sT](RandomStream& rng) {
      return mT + sT * rng.normal();
    };
    return prior;
  }

  if (model.kind == ModelKind::finite_hmm) {
    const auto& p = *model.hmm;
    const int K = p.num_states();
    std::vector<std::vector<double>> tables;
    tables.push_back(p.init);
    for (int t = 1; t <= T; ++t) {
      const auto& prev = tables.back();
      std::vector<double> next(static_cast<std::size_t>(K), 0.0);
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j)
          next[static_cast<std::size_t>(j)] +=
              prev[static_cast<std::size_t>(i)] * p.transition[i][j];
      tables.push_back(std::move(next));
    }
    prior.hmm_tables = tables;
    prior.log_density = [tables](int t, double x) {
      return std::log(
          tables.at(static_cast<std::size_t>(t))[static_cast<std::size_t>(
              hmm_state(x))]);
    };
    const auto terminal = tables.back();
    const auto terminal_cum = cumulative(terminal);
    prior.log_terminal = [terminal](double x) {
      return std::log(terminal[static_cast<std::size_t>(hmm_state(x))]);
    };
    prior.sample_terminal = [terminal_cum](RandomStream& rng) {
      return static_cast<double>(
          sample_from_cumulative(terminal_cum, rng.uniform()));
    };
    return prior;
  }

  throw std::invalid_argument(
      "prior_marginal_pseudo_prior supports only the canonical models");
}

MixingCertificate check_mixing(const StateSpaceModel& model,
                               const PseudoPrior& prior) {
  require(model.kind == ModelKind::finite_hmm,
          "check_mixing requires a finite HMM");
  const auto& p = *model.hmm;
  const int K = p.num_states();
  const int T = model.horizon;

  MixingCertificate c;
  c.trans_min = std::numeric_limits<double>::infinity();
  c.trans_max = 0.0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      c.trans_min = std::min(c.trans_min, p.transition[i][j]);
      c.trans_max = std::max(c.trans_max, p.transition[i][j]);
    }

  auto g = [&](int t, int x) {
    return model.potential(t, static_cast<double>(x));
  };

  c.step_potential_min = std::numeric_limits<double>::infinity();
  for (int t = 0; t <= T; ++t) {
    for (int x = 0; x < K; ++x) {
      double s = 0.0;
      for (int xp = 0; xp < K; ++xp) s += p.transition[x][xp] * g(t, xp);
      c.step_potential_min = std::min(c.step_potential_min, s);
    }
  }
  {
    double s = 0.0;
    for (int x = 0; x < K; ++x) s += p.init[static_cast<std::size_t>(x)] * g(0, x);
    c.step_potential_min = std::min(c.step_potential_min, s);
  }

  c.prior_min = std::numeric_limits<double>::infinity();
  c.prior_max = 0.0;
  auto gamma = [&](int t, int x) {
    return prior.density(t, static_cast<double>(x));
  };
  for (int t = 0; t <= T; ++t)
    for (int x = 0; x < K; ++x) {
      c.prior_min = std::min(c.prior_min, gamma(t, x));
      c.prior_max = std::max(c.prior_max, gamma(t, x));
    }

  c.backward_step_min = std::numeric_limits<double>::infinity();
  {
    double s = 0.0;
    for (int x = 0; x < K; ++x) s += gamma(T, x) * g(T, x);
    c.backward_step_min = std::min(c.backward_step_min, s);
  }
  for (int t = 0; t < T; ++t) {
    for (int xp = 0; xp < K; ++xp) {
      double s = 0.0;
      for (int x = 0; x < K; ++x)
        s += gamma(t, x) * g(t, x) * p.transition[x][xp] / gamma(t + 1, xp);
      c.backward_step_min = std::min(c.backward_step_min, s);
    }
  }

  if (!(c.trans_min > 0.0) || !(c.backward_step_min > 0.0) ||
      !(c.prior_min > 0.0) || !(c.step_potential_min > 0.0)) {
    throw MixingViolation("mixing violated: a mixing constant is zero");
  }
  return c;
}

StateSpaceModel model_from_json_string(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  const std::string kind = doc.at("kind").get<std::string>();
  ObservationSequence ys = doc.at("observations").get<ObservationSequence>();
  if (kind == "lgssm") {
    return make_lgssm(doc.at("a").get<double>(), doc.at("b").get<double>(),
                      doc.at("sigma_u").get<double>(),
                      doc.at("sigma_v").get<double>(),
                      doc.at("m0").get<double>(), doc.at("s0").get<double>(),
                      std::move(ys));
  }
  if (kind == "hmm") {
    return make_finite_hmm(
        doc.at("transition").get<std::vector<std::vector<double>>>(),
        doc.at("emission").get<std::vector<std::vector<double>>>(),
        doc.at("init").get<std::vector<double>>(), std::move(ys));
  }
  throw std::invalid_argument("unknown model kind: " + kind);
}

StateSpaceModel model_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_from_json_string(buf.str());
}

}  // namespace smc
