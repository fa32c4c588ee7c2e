#pragma once

#include <vector>

#include "smc/model.hpp"

namespace smc {

struct GaussianMarginal {
  double mean = 0;
  double variance = 0;
  int time = 0;
};

struct DiscreteMarginal {
  std::vector<double> probs;
  int time = 0;
};

struct KalmanResult {
  std::vector<GaussianMarginal> filter;    // state given y_{0..t}
  std::vector<GaussianMarginal> smoother;  // state given y_{0..T}
};

/// Exact filtering and smoothing moments of the scalar linear-Gaussian
/// model: forward predict/update recursions plus the backward
/// Rauch-Tung-Striebel pass.
KalmanResult kalman_rts(const StateSpaceModel& model);

/// Exact moments of the state given the future observations y_{t..T},
/// computed by a forward Kalman pass over the time-reversed prior chain.
/// Requires the prior-marginal pseudo-prior; other families have no closed
/// form here and are rejected (see lgssm_backward_info_quadrature).
std::vector<GaussianMarginal> lgssm_backward_info(const StateSpaceModel& model,
                                                  const PseudoPrior& prior);

/// Grid fallback for arbitrary pseudo-priors: trapezoid discretization of
/// the defining integrals on [center - 10 sd, center + 10 sd]. Controlled
/// approximation, used as an independent cross-check of the closed form.
std::vector<GaussianMarginal> lgssm_backward_info_quadrature(
    const StateSpaceModel& model, const PseudoPrior& prior,
    int grid_points = 4001);

struct HmmExactResult {
  std::vector<DiscreteMarginal> filter;
  std::vector<DiscreteMarginal> backward_info;  // pseudo-prior tilted
  std::vector<DiscreteMarginal> smoother;
  bool enumeration_checked = false;
};

/// Exact HMM marginals by dynamic programming. When the path count
/// K^(T+1) is at most `enumeration_cap`, every marginal is cross-checked
/// against brute-force path enumeration to 1e-10 (a failure there is a
/// programming error and throws); beyond the cap the check is skipped and
/// `enumeration_checked` is false.
HmmExactResult hmm_exact(const StateSpaceModel& model, const PseudoPrior& prior,
                         double enumeration_cap = 1e7);

/// Marginal smoothing laws assembled by direct summation of the two-filter
/// combination identity from the exact filter and backward-info marginals.
/// Independent of the Monte Carlo code path; equality with the enumerated
/// marginals validates the identity itself.
std::vector<DiscreteMarginal> hmm_two_filter_marginals(
    const StateSpaceModel& model, const PseudoPrior& prior);

struct HmmEnumerated {
  std::vector<DiscreteMarginal> filter;
  std::vector<DiscreteMarginal> backward_info;
  std::vector<DiscreteMarginal> smoother;
};

/// Brute-force path enumeration of all HMM marginals. Exponential in T;
/// throws when K^(T+1) exceeds the cap.
HmmEnumerated hmm_enumerated(const StateSpaceModel& model,
                             const PseudoPrior& prior,
                             double enumeration_cap = 1e7);

}  // namespace smc
