#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "smc/random.hpp"

namespace smc {

enum class ModelKind { lgssm, finite_hmm, custom };

/// Observation records y_0..y_T; a real scalar for the linear-Gaussian
/// model, an integral symbol index (stored exactly in a double) for the
/// finite HMM.
using ObservationSequence = std::vector<double>;

struct LgssmParams {
  double a;        // state autoregression
  double b;        // observation gain
  double sigma_u;  // state noise sd
  double sigma_v;  // observation noise sd
  double m0;       // initial mean
  double s0;       // initial sd
};

struct HmmParams {
  std::vector<std::vector<double>> transition;  // K x K, row-stochastic
  std::vector<std::vector<double>> emission;    // K x M, row-stochastic
  std::vector<double> init;                     // K-simplex
  std::vector<std::vector<double>> transition_cum;  // per-row cumulative sums
  std::vector<double> init_cum;

  int num_states() const { return static_cast<int>(init.size()); }
  int num_symbols() const {
    return emission.empty() ? 0 : static_cast<int>(emission[0].size());
  }
};

/// A state-space model with observations bound in at construction: the
/// potential g_t(x) hides y_t. Densities are held in log domain; the
/// linear-domain accessors below exponentiate on demand. Immutable after
/// construction and safe to share across threads.
struct StateSpaceModel {
  ModelKind kind = ModelKind::custom;
  int state_dim = 1;
  int horizon = 0;  // T: number of observation epochs minus one
  ObservationSequence observations;

  std::function<double(double)> log_init_ratio;  // log dChi/dRho0(x)
  std::function<double(RandomStream&)> sample_init;  // draw from rho0
  std::function<double(double, double)> log_transition;  // log q(x, x')
  std::function<double(double, RandomStream&)> sample_transition;
  std::function<double(int, double)> log_potential;  // log g_t(x)

  std::optional<LgssmParams> lgssm;
  std::optional<HmmParams> hmm;

  double transition_density(double x, double xp) const {
    return std::exp(log_transition(x, xp));
  }
  double potential(int t, double x) const {
    return std::exp(log_potential(t, x));
  }
  double init_density_ratio(double x) const {
    return std::exp(log_init_ratio(x));
  }
};

/// The pseudo-prior family used by the backward information filter: a
/// positive function of (t, x), possibly unnormalized, plus the terminal
/// instrumental density the backward pass starts from.
struct PseudoPrior {
  std::function<double(int, double)> log_density;  // log of the t-th member
  std::function<double(double)> log_terminal;      // terminal instrumental
  std::function<double(RandomStream&)> sample_terminal;

  // Closed-form marginal data filled in by prior_marginal_pseudo_prior;
  // consumed by oracles and the default backward kernels.
  std::optional<std::vector<std::pair<double, double>>> lgssm_moments;
  std::optional<std::vector<std::vector<double>>> hmm_tables;

  double density(int t, double x) const {
    return std::exp(log_density(t, x));
  }
};

/// Tightest strong-mixing constants of a finite HMM, computed by
/// enumeration. All entries must be strictly positive for the
/// time-uniformity guarantees to apply.
struct MixingCertificate {
  double trans_min = 0;           // lower bound on q
  double trans_max = 0;           // upper bound on q
  double step_potential_min = 0;  // min over t,x of sum_x' q(x,x') g_t(x')
  double prior_min = 0;           // lower bound on the pseudo-prior
  double prior_max = 0;           // upper bound on the pseudo-prior
  double backward_step_min = 0;   // min of sum_x gamma_t g_t q(.,x')/gamma_{t+1}
};

/// Scalar linear-Gaussian state-space model. The instrumental initial law
/// rho0 defaults to the initial law itself, so the time-zero weight
/// reduces to the potential.
StateSpaceModel make_lgssm(double a, double b, double sigma_u, double sigma_v,
                           double m0, double s0, ObservationSequence ys);

/// Finite hidden Markov model over states {0..K-1} with the counting
/// measure as reference; densities are plain matrix lookups.
StateSpaceModel make_finite_hmm(std::vector<std::vector<double>> transition,
                                std::vector<std::vector<double>> emission,
                                std::vector<double> init,
                                ObservationSequence ys);

/// Pseudo-prior equal to the marginal law of the hidden state at each time
/// under the model's own dynamics; the terminal instrumental density is
/// the normalized terminal member.
PseudoPrior prior_marginal_pseudo_prior(const StateSpaceModel& model);

/// Enumerates the tightest mixing constants of a finite HMM and throws
/// MixingViolation if any of them is zero.
MixingCertificate check_mixing(const StateSpaceModel& model,
                               const PseudoPrior& prior);

/// Loads a model from a JSON document:
///   {"kind":"lgssm","a":..,"b":..,"sigma_u":..,"sigma_v":..,
///    "m0":..,"s0":..,"observations":[..]}
///   {"kind":"hmm","transition":[[..]],"emission":[[..]],"init":[..],
///    "observations":[..]}
StateSpaceModel model_from_json_string(const std::string& text);
StateSpaceModel model_from_json_file(const std::string& path);

}  // namespace smc
