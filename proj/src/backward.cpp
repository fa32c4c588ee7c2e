#include "smc/backward.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "smc/errors.hpp"
#include "smc/numeric.hpp"

namespace smc {

namespace {

int hmm_state(double x) { return static_cast<int>(std::lround(x)); }

// Per-time tables of the adapted backward kernel of a finite HMM:
// kernel(t, x', x) proportional to gamma_t(x) g_t(x) q(x, x').
struct AdaptedKernelTables {
  // mass[t][x'][x] and per-(t,x') cumulative sums; adj[t][x'] is the
  // normalizer, which is also the fully adapted adjustment.
  std::vector<std::vector<std::vector<double>>> mass;
  std::vector<std::vector<std::vector<double>>> cum;
  std::vector<std::vector<double>> adj;
};

std::shared_ptr<const AdaptedKernelTables> build_adapted_tables(
    const StateSpaceModel& model, const PseudoPrior& prior) {
  const auto& p = *model.hmm;
  const int K = p.num_states();
  const int T = model.horizon;
  auto tables = std::make_shared<AdaptedKernelTables>();
  tables->mass.resize(static_cast<std::size_t>(T));
  tables->cum.resize(static_cast<std::size_t>(T));
  tables->adj.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    auto& mass_t = tables->mass[static_cast<std::size_t>(t)];
    auto& cum_t = tables->cum[static_cast<std::size_t>(t)];
    auto& adj_t = tables->adj[static_cast<std::size_t>(t)];
    mass_t.assign(static_cast<std::size_t>(K),
                  std::vector<double>(static_cast<std::size_t>(K), 0.0));
    cum_t = mass_t;
    adj_t.assign(static_cast<std::size_t>(K), 0.0);
    std::vector<double> gg(static_cast<std::size_t>(K));
    for (int x = 0; x < K; ++x)
      gg[static_cast<std::size_t>(x)] =
          prior.density(t, x) * model.potential(t, static_cast<double>(x));
    for (int xp = 0; xp < K; ++xp) {
      double total = 0.0;
      for (int x = 0; x < K; ++x) {
        const double m = gg[static_cast<std::size_t>(x)] * p.transition[x][xp];
        mass_t[static_cast<std::size_t>(xp)][static_cast<std::size_t>(x)] = m;
        total += m;
        cum_t[static_cast<std::size_t>(xp)][static_cast<std::size_t>(x)] = total;
      }
      adj_t[static_cast<std::size_t>(xp)] = total;
    }
  }
  return tables;
}

std::function<double(int, double, double)> adapted_kernel_log_density(
    std::shared_ptr<const AdaptedKernelTables> tables) {
  return [tables](int t, double x_next, double x) {
    const auto& mass =
        tables->mass[static_cast<std::size_t>(t)]
                    [static_cast<std::size_t>(hmm_state(x_next))];
    const double total =
        tables->adj[static_cast<std::size_t>(t)]
                   [static_cast<std::size_t>(hmm_state(x_next))];
    return std::log(mass[static_cast<std::size_t>(hmm_state(x))] / total);
  };
}

std::function<double(int, double, RandomStream&)> adapted_kernel_sampler(
    std::shared_ptr<const AdaptedKernelTables> tables) {
  return [tables](int t, double x_next, RandomStream& rng) {
    const auto& cum = tables->cum[static_cast<std::size_t>(t)]
                                 [static_cast<std::size_t>(hmm_state(x_next))];
    const double target = rng.uniform() * cum.back();
    for (std::size_t i = 0; i < cum.size(); ++i)
      if (cum[i] > target) return static_cast<double>(i);
    return static_cast<double>(cum.size() - 1);
  };
}

}  // namespace

BackwardProposal default_backward_proposal(const StateSpaceModel& model,
                                           const PseudoPrior& prior) {
  BackwardProposal bp;
  bp.log_adjustment = [lg = prior.log_density](int t, double x_next) {
    return lg(t + 1, x_next);
  };

  if (model.kind == ModelKind::lgssm) {
    if (!prior.lgssm_moments)
      throw std::invalid_argument(
          "default backward proposal needs prior-marginal moments for the "
          "linear-Gaussian model");
    const auto moments = *prior.lgssm_moments;
    const double a = model.lgssm->a;
    // Time-reversed prior dynamics: x_t | x_{t+1} under the prior chain.
    struct Rev {
      double gain, offset, sd;
    };
    std::vector<Rev> rev(moments.size() - 1);
    for (std::size_t t = 0; t + 1 < moments.size(); ++t) {
      const auto [mt, vt] = moments[t];
      const auto [mn, vn] = moments[t + 1];
      const double gain = a * vt / vn;
      rev[t] = {gain, mt - gain * mn, std::sqrt(vt - gain * gain * vn)};
    }
    bp.log_kernel = [rev](int t, double x_next, double x) {
      const auto& r = rev[static_cast<std::size_t>(t)];
      return gaussian_log_pdf(x, r.offset + r.gain * x_next, r.sd);
    };
    bp.sample = [rev](int t, double x_next, RandomStream& rng) {
      const auto& r = rev[static_cast<std::size_t>(t)];
      return r.offset + r.gain * x_next + r.sd * rng.normal();
    };
    return bp;
  }

  if (model.kind == ModelKind::finite_hmm) {
    auto tables = build_adapted_tables(model, prior);
    bp.log_kernel = adapted_kernel_log_density(tables);
    bp.sample = adapted_kernel_sampler(tables);
    return bp;
  }

  throw std::invalid_argument(
      "default backward proposal supports only the canonical models");
}

BackwardProposal fully_adapted_backward_proposal(const StateSpaceModel& model,
                                                 const PseudoPrior& prior) {
  if (model.kind != ModelKind::finite_hmm)
    throw std::invalid_argument(
        "fully adapted proposal unavailable in closed form");
  auto tables = build_adapted_tables(model, prior);
  BackwardProposal bp;
  bp.log_adjustment = [tables](int t, double x_next) {
    return std::log(tables->adj[static_cast<std::size_t>(t)]
                               [static_cast<std::size_t>(hmm_state(x_next))]);
  };
  bp.log_kernel = adapted_kernel_log_density(tables);
  bp.sample = adapted_kernel_sampler(tables);
  return bp;
}

ParticleSystem init_backward(const StateSpaceModel& model,
                             const PseudoPrior& prior, int num_particles,
                             std::uint64_t seed) {
  if (num_particles < 1)
    throw std::invalid_argument("num_particles must be at least 1");
  const int T = model.horizon;
  const std::size_t n = static_cast<std::size_t>(num_particles);
  std::vector<double> particles(n), log_weights(n);
  RandomStream root(seed);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rng = root.child(i).child(2);
    const double x = prior.sample_terminal(rng);
    particles[i] = x;
    // Pseudo-prior and terminal density grouped first so that a constant
    // rescaling of the family shifts every weight by the same amount.
    log_weights[i] = (prior.log_density(T, x) - prior.log_terminal(x)) +
                     model.log_potential(T, x);
  }
  return ParticleSystem(Direction::backward, T, std::move(particles),
                        std::move(log_weights));
}

ParticleSystem backward_step(const StateSpaceModel& model,
                             const PseudoPrior& prior,
                             const BackwardProposal& proposal,
                             const ParticleSystem& next, int t,
                             std::uint64_t seed) {
  if (t < 0 || t > model.horizon - 1)
    throw std::out_of_range("backward_step: t outside [0, horizon-1]");
  if (next.direction() != Direction::backward)
    throw InvariantError("backward_step requires a backward system");
  if (next.time() != t + 1) throw InvariantError("backward_step time mismatch");

  const auto next_x = next.particles();
  const auto next_lw = next.log_weights();
  const std::size_t n = next_x.size();

  // Selection law: weight * adjustment / prior_{t+1}. The ratio is a log
  // difference so it cancels exactly when the adjustment is the
  // pseudo-prior itself.
  std::vector<double> selection(n);
  for (std::size_t i = 0; i < n; ++i)
    selection[i] = next_lw[i] + (proposal.log_adjustment(t, next_x[i]) -
                                 prior.log_density(t + 1, next_x[i]));
  const auto table = CategoricalTable::from_log_weights(selection);

  // Draw roles: 1 is the backward index, 2 the kernel.
  std::vector<double> particles(n), log_weights(n);
  std::vector<int> ancestors(n);
  RandomStream root(seed);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream base = root.child(i);
    RandomStream idx_rng = base.child(1);
    RandomStream kernel_rng = base.child(2);
    const int a = table.sample(idx_rng.uniform());
    const double xa = next_x[static_cast<std::size_t>(a)];
    const double x = proposal.sample(t, xa, kernel_rng);
    ancestors[i] = a;
    particles[i] = x;
    log_weights[i] =
        (prior.log_density(t, x) - proposal.log_adjustment(t, xa)) +
        (model.log_transition(x, xa) + model.log_potential(t, x) -
         proposal.log_kernel(t, xa, x));
  }
  return ParticleSystem(Direction::backward, t, std::move(particles),
                        std::move(log_weights), std::move(ancestors));
}

}  // namespace smc
