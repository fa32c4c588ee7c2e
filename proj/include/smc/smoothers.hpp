#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "smc/backward.hpp"
#include "smc/forward.hpp"
#include "smc/functions.hpp"
#include "smc/model.hpp"
#include "smc/particles.hpp"

namespace smc {

/// q(x, x'') q(x'', x'): the two-step transition factor every combiner is
/// built from.
inline double transition_pair_density(const StateSpaceModel& model, double x,
                                      double xp, double xmid) {
  return model.transition_density(x, xmid) * model.transition_density(xmid, xp);
}

/// Pointwise product f(x, x') g(x').
inline std::function<double(double, double)> odot(
    std::function<double(double, double)> f, std::function<double(double)> g) {
  return [f = std::move(f), g = std::move(g)](double x, double xp) {
    return f(x, xp) * g(xp);
  };
}

/// Proposal for the fresh-particle smoothing sampler: adjustment over a
/// (forward particle, backward particle) pair plus a kernel proposing the
/// midpoint state. `factorized` declares that the adjustment is a product
/// of a forward factor and a backward factor, which is the condition the
/// linear-cost sampler needs; it is a caller declaration, never inferred.
struct SmoothingProposal {
  std::function<double(int, double, double)> log_adjustment;  // (s, x, x')
  std::function<double(int, double, double, double)> log_kernel;
  std::function<double(int, double, double, RandomStream&)> sample;
  bool factorized = false;
  // Optional factor evaluations for factorized adjustments; used to build
  // selection tables without touching the joint function per pair.
  std::function<double(int, double)> log_adjustment_fwd;
  std::function<double(int, double)> log_adjustment_bwd;
};

/// Product-distribution estimate of Theorem-1 type: the normalized double
/// sum over a forward system at s and a backward system at t > s. O(N^2).
double product_estimate(const ParticleSystem& fwd, const ParticleSystem& bwd,
                        const std::function<double(double, double)>& h2);

/// O(N) fast path for a separable integrand h2(x, x') = f(x) g(x'),
/// declared by the caller.
double product_estimate_separable(const ParticleSystem& fwd,
                                  const ParticleSystem& bwd,
                                  const std::function<double(double)>& f,
                                  const std::function<double(double)>& g);

/// Quadratic reweighting of the forward particles at s against the
/// backward system at s+1: weight_i multiplied by
/// sum_j bwd_weight_j q(x_i, y_j) / prior_{s+1}(y_j).
ParticleSystem bdm_forward_reweight(const ParticleSystem& fwd_s,
                                    const ParticleSystem& bwd_next,
                                    const StateSpaceModel& model,
                                    const PseudoPrior& prior);

/// Mirror image: reweights the backward particles at s against the forward
/// system at s-1.
ParticleSystem bdm_backward_reweight(const ParticleSystem& fwd_prev,
                                     const ParticleSystem& bwd_s,
                                     const StateSpaceModel& model,
                                     const PseudoPrior& prior);

/// Fresh-particle smoothing sampler: materializes the N^2 joint selection
/// table over (forward, backward) index pairs, draws pairs by inverse CDF,
/// proposes midpoints from the kernel and weights them with the full
/// importance ratio. Auxiliary indices are discarded from the result.
/// Throws std::length_error when the table would exceed max_table_bytes.
ParticleSystem fwt_sample_quadratic(const ParticleSystem& fwd_prev,
                                    const ParticleSystem& bwd_next,
                                    const SmoothingProposal& proposal,
                                    const StateSpaceModel& model,
                                    const PseudoPrior& prior, int num_out,
                                    std::uint64_t seed,
                                    std::size_t max_table_bytes = std::size_t{4}
                                                                  << 30);

/// Linear-cost variant: requires a factorized adjustment, draws the
/// forward index from the forward-filter selection law and the backward
/// index from the backward-filter selection law independently.
ParticleSystem fwt_sample_linear(const ParticleSystem& fwd_prev,
                                 const ParticleSystem& bwd_next,
                                 const ForwardProposal& fwd_proposal,
                                 const BackwardProposal& bwd_proposal,
                                 const SmoothingProposal& kernel,
                                 const StateSpaceModel& model,
                                 const PseudoPrior& prior, int num_out,
                                 std::uint64_t seed);

/// Linear reweighting of the backward particles at s: fresh forward
/// indices from the forward selection law, weight
///   bwd_weight_l q(x_{I_l}, y_l) / (prior_s(y_l) fwd_adjustment(x_{I_l})).
/// The drawn forward indices are returned as the system's ancestors so the
/// factorized weight can be checked against its long form.
ParticleSystem bdm_linear_backward(const ParticleSystem& fwd_prev,
                                   const ParticleSystem& bwd_s,
                                   const ForwardProposal& fwd_proposal,
                                   const StateSpaceModel& model,
                                   const PseudoPrior& prior,
                                   std::uint64_t seed);

/// Linear reweighting of the forward particles at s: fresh backward
/// indices from the backward selection law, weight
///   fwd_weight_l q(x_l, y_{J_l}) / bwd_adjustment(y_{J_l}).
ParticleSystem bdm_linear_forward(const ParticleSystem& fwd_s,
                                  const ParticleSystem& bwd_next,
                                  const BackwardProposal& bwd_proposal,
                                  const StateSpaceModel& model,
                                  const PseudoPrior& prior, std::uint64_t seed);

/// Long-form log-weights of the two linear reweights, assembled from first
/// principles (pass proposals and both neighbor systems) rather than from
/// the stored weights; used to verify the factorized short forms.
std::vector<double> bdm_linear_backward_long_log_weights(
    const ParticleSystem& fwd_prev, const ParticleSystem& bwd_s,
    const ParticleSystem& bwd_next, const ForwardProposal& fwd_proposal,
    const BackwardProposal& bwd_proposal, const std::vector<int>& fwd_indices,
    const StateSpaceModel& model, const PseudoPrior& prior);

std::vector<double> bdm_linear_forward_long_log_weights(
    const ParticleSystem& fwd_prev, const ParticleSystem& fwd_s,
    const ParticleSystem& bwd_next, const ForwardProposal& fwd_proposal,
    const BackwardProposal& bwd_proposal, const std::vector<int>& bwd_indices,
    const StateSpaceModel& model, const PseudoPrior& prior);

enum class SmoothMethod {
  product,
  bdm_f,
  bdm_b,
  fwt_quad,
  fwt_lin,
  bdm_lin_f,
  bdm_lin_b
};

const char* to_string(SmoothMethod m);
SmoothMethod smooth_method_from_string(const std::string& name);

/// The proposals one smoothing run needs: forward filter, backward filter
/// and the midpoint proposal for the fresh-particle samplers.
struct ProposalBundle {
  ForwardProposal forward;
  BackwardProposal backward;
  SmoothingProposal smoothing;
};

/// Bootstrap forward proposal, pseudo-prior backward adjustment with the
/// model-appropriate kernel, and a factorized smoothing adjustment whose
/// kernel is the conditional law of the midpoint given the selected pair
/// (available in closed form on both canonical models). With this kernel
/// the midpoint draw contributes nothing to the weight dispersion.
ProposalBundle default_proposals(const StateSpaceModel& model,
                                 const PseudoPrior& prior);

/// The matched configuration of the variance-comparison setting: smoothing
/// kernel equal to the forward proposal kernel, adjustment equal to the
/// forward factor times the backward factor, backward factor equal to the
/// time-(s+1) pseudo-prior.
ProposalBundle matched_proposals(const StateSpaceModel& model,
                                 const PseudoPrior& prior);

/// Fully adapted smoothing proposal (finite HMM only): adjustment equal to
/// the exact pair integral and kernel proportional to the integrand, which
/// makes every sampled weight equal.
SmoothingProposal fully_adapted_smoothing_proposal(const StateSpaceModel& model);

/// One marginal-smoothing law at a fixed time. Six of the seven methods
/// return a particle system; the product method keeps the two filter
/// populations and evaluates test functions against the combination
/// formula directly (exactly on the finite grid for an HMM, by closed-form
/// Gaussian component integrals for the linear-Gaussian model).
class SmoothingMarginal {
 public:
  explicit SmoothingMarginal(ParticleSystem ps);

  struct LgssmProductForm {
    int s = 0;
    LgssmParams params{};
    double y_s = 0;
    std::vector<double> fwd_x, fwd_w;  // normalized forward weights at s-1
    std::vector<double> bwd_x, bwd_w;  // normalized weight/prior at s+1
  };
  explicit SmoothingMarginal(LgssmProductForm form);

  int time() const { return time_; }
  bool has_system() const { return system_ != nullptr; }
  const ParticleSystem& system() const;

  double estimate(const TestFunction& h) const;
  std::vector<double> estimate_all(const std::vector<TestFunction>& hs) const;

 private:
  int time_;
  std::shared_ptr<const ParticleSystem> system_;
  std::shared_ptr<const LgssmProductForm> product_;
};

struct SmoothOptions {
  std::size_t max_table_bytes = std::size_t{4} << 30;
  bool record_timing = false;
  bool compute_endpoints = true;
};

struct SmoothResult {
  std::vector<SmoothingMarginal> marginals;  // increasing time order
  std::vector<std::int64_t> combine_ns;      // indexed by time 0..T
};

/// One forward pass, one backward pass, then the chosen combiner at every
/// interior time; the passes are computed once and reused across times.
/// Endpoint marginals use the degenerate one-sided combination forms (the
/// linear variants for the linear methods) and can be skipped entirely.
SmoothResult smooth_all(const StateSpaceModel& model, const PseudoPrior& prior,
                        const ProposalBundle& proposals, SmoothMethod method,
                        int num_particles, std::uint64_t seed,
                        const SmoothOptions& options = {});

}  // namespace smc
