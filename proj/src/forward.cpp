#include "smc/forward.hpp"

#include <stdexcept>
#include <vector>

#include "smc/errors.hpp"

namespace smc {

ForwardProposal bootstrap_forward_proposal(const StateSpaceModel& model) {
  ForwardProposal p;
  p.log_adjustment = [](int, double) { return 0.0; };
  p.log_kernel = [q = model.log_transition](int, double x, double xp) {
    return q(x, xp);
  };
  p.sample = [s = model.sample_transition](int, double x, RandomStream& rng) {
    return s(x, rng);
  };
  return p;
}

ParticleSystem init_forward(const StateSpaceModel& model, int num_particles,
                            std::uint64_t seed) {
  if (num_particles < 1)
    throw std::invalid_argument("num_particles must be at least 1");
  const std::size_t n = static_cast<std::size_t>(num_particles);
  std::vector<double> particles(n), log_weights(n);
  RandomStream root(seed);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rng = root.child(i).child(2);
    const double x = model.sample_init(rng);
    particles[i] = x;
    log_weights[i] = model.log_init_ratio(x) + model.log_potential(0, x);
  }
  return ParticleSystem(Direction::forward, 0, std::move(particles),
                        std::move(log_weights));
}

ParticleSystem forward_step(const StateSpaceModel& model,
                            const ForwardProposal& proposal,
                            const ParticleSystem& prev, int t,
                            std::uint64_t seed) {
  if (t < 1 || t > model.horizon)
    throw std::out_of_range("forward_step: t outside [1, horizon]");
  if (prev.direction() != Direction::forward)
    throw InvariantError("forward_step requires a forward system");
  if (prev.time() != t - 1)
    throw InvariantError("forward_step time mismatch");

  const auto prev_x = prev.particles();
  const auto prev_lw = prev.log_weights();
  const std::size_t n = prev_x.size();

  std::vector<double> selection(n);
  for (std::size_t i = 0; i < n; ++i)
    selection[i] = prev_lw[i] + proposal.log_adjustment(t, prev_x[i]);
  const auto table = CategoricalTable::from_log_weights(selection);

  // Per-particle streams are split by draw role (0: forward index,
  // 2: kernel) so that estimators sharing a seed consume identical
  // uniforms for identical roles.
  std::vector<double> particles(n), log_weights(n);
  std::vector<int> ancestors(n);
  RandomStream root(seed);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream base = root.child(i);
    RandomStream idx_rng = base.child(0);
    RandomStream kernel_rng = base.child(2);
    const int a = table.sample(idx_rng.uniform());
    const double xa = prev_x[static_cast<std::size_t>(a)];
    const double x = proposal.sample(t, xa, kernel_rng);
    ancestors[i] = a;
    particles[i] = x;
    log_weights[i] = model.log_transition(xa, x) + model.log_potential(t, x) -
                     proposal.log_adjustment(t, xa) -
                     proposal.log_kernel(t, xa, x);
  }
  return ParticleSystem(Direction::forward, t, std::move(particles),
                        std::move(log_weights), std::move(ancestors));
}

}  // namespace smc
