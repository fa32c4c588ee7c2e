#pragma once

#include <cstdint>
#include <functional>

#include "smc/model.hpp"
#include "smc/particles.hpp"
#include "smc/random.hpp"

namespace smc {

/// Proposal for the backward information filter. The adjustment is a
/// function of the time-(t+1) particle; the kernel proposes the time-t
/// position given it. The essential bound is on adjustment divided by the
/// time-(t+1) pseudo-prior, which is why the two always enter the
/// algorithm as a log difference.
struct BackwardProposal {
  std::function<double(int, double)> log_adjustment;      // (t, x_next)
  std::function<double(int, double, double)> log_kernel;  // (t, x_next, x)
  std::function<double(int, double, RandomStream&)> sample;  // x | (t, x_next)
};

/// Default proposal: adjustment equal to the time-(t+1) pseudo-prior (the
/// selection law then depends on the backward weights alone). The kernel
/// is the time-reversed prior dynamics for the linear-Gaussian model and
/// the fully adapted kernel for the finite HMM.
BackwardProposal default_backward_proposal(const StateSpaceModel& model,
                                           const PseudoPrior& prior);

/// Fully adapted proposal, available in closed form only when the
/// adaptation integral is a finite sum:
///   adjustment(t, x') = sum_x gamma_t(x) g_t(x) q(x, x')
///   kernel(t, x', .) proportional to gamma_t(.) g_t(.) q(., x').
/// Continuous models are rejected.
BackwardProposal fully_adapted_backward_proposal(const StateSpaceModel& model,
                                                 const PseudoPrior& prior);

/// Terminal system of the backward pass: particles i.i.d. from the
/// terminal instrumental density, log-weight
///   log g_T + log gamma_T - log terminal.
ParticleSystem init_backward(const StateSpaceModel& model,
                             const PseudoPrior& prior, int num_particles,
                             std::uint64_t seed);

/// One backward-recursion step from time t+1 to t. Ancestor indices are
/// multinomial draws with probability proportional to
///   weight * adjustment(x_next) / prior_{t+1}(x_next),
/// positions come from the kernel, and the new weight is
///   gamma_t(x) g_t(x) q(x, x_anc) / (adjustment(x_anc) kernel(x_anc, x)).
/// The returned system's ancestors point into the time-(t+1) system.
ParticleSystem backward_step(const StateSpaceModel& model,
                             const PseudoPrior& prior,
                             const BackwardProposal& proposal,
                             const ParticleSystem& next, int t,
                             std::uint64_t seed);

}  // namespace smc
