#pragma once

#include <cstdint>
#include <functional>

#include "smc/model.hpp"
#include "smc/particles.hpp"
#include "smc/random.hpp"

namespace smc {

/// Proposal for the auxiliary forward filter: an adjustment multiplier
/// tilting ancestor selection plus an instrumental transition kernel.
/// Both must be strictly positive and bounded on the model support; that
/// is a caller obligation for continuous models.
struct ForwardProposal {
  std::function<double(int, double)> log_adjustment;       // (t, x)
  std::function<double(int, double, double)> log_kernel;   // (t, x, x')
  std::function<double(int, double, RandomStream&)> sample;  // x' | (t, x)
};

/// Adjustment identically one and kernel equal to the model transition;
/// the step weight then reduces to the potential.
ForwardProposal bootstrap_forward_proposal(const StateSpaceModel& model);

/// Time-zero system: particles i.i.d. from the instrumental initial law,
/// weighted by the initial density ratio times the potential.
ParticleSystem init_forward(const StateSpaceModel& model, int num_particles,
                            std::uint64_t seed);

/// One auxiliary-filter step from time t-1 to t: ancestor indices are
/// multinomial draws tilted by the adjustment, new positions come from the
/// instrumental kernel, and each particle carries the importance weight
///   q(x_anc, x) g_t(x) / (adjustment(x_anc) kernel(x_anc, x)).
/// Ancestor indices are retained on the returned system.
ParticleSystem forward_step(const StateSpaceModel& model,
                            const ForwardProposal& proposal,
                            const ParticleSystem& prev, int t,
                            std::uint64_t seed);

}  // namespace smc
