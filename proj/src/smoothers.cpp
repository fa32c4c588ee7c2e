#include "smc/smoothers.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "smc/errors.hpp"
#include "smc/numeric.hpp"

namespace smc {

namespace {

int hmm_state(double x) { return static_cast<int>(std::lround(x)); }

// Transition-density evaluator specialized per model kind so the O(N^2)
// loops stay free of std::function calls.
struct TransitionEval {
  enum class Kind { lgssm, hmm, generic } kind = Kind::generic;
  double a = 0, inv_var = 0, norm = 0;
  const HmmParams* hmm = nullptr;
  const StateSpaceModel* model = nullptr;

  static TransitionEval make(const StateSpaceModel& m) {
    TransitionEval e;
    if (m.kind == ModelKind::lgssm && m.lgssm) {
      e.kind = Kind::lgssm;
      e.a = m.lgssm->a;
      const double su = m.lgssm->sigma_u;
      e.inv_var = 1.0 / (su * su);
      e.norm = 1.0 / (su * std::sqrt(2.0 * kPi));
    } else if (m.kind == ModelKind::finite_hmm && m.hmm) {
      e.kind = Kind::hmm;
      e.hmm = &*m.hmm;
    } else {
      e.kind = Kind::generic;
      e.model = &m;
    }
    return e;
  }
};

std::vector<int> to_states(std::span<const double> xs) {
  std::vector<int> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = hmm_state(xs[i]);
  return out;
}

// out[i] = sum_j c[j] q(x[i], y[j])
void pair_sums_right(const TransitionEval& q, std::span<const double> x,
                     std::span<const double> y, std::span<const double> c,
                     std::span<double> out) {
  const std::size_t nx = x.size(), ny = y.size();
  switch (q.kind) {
    case TransitionEval::Kind::lgssm: {
      for (std::size_t i = 0; i < nx; ++i) {
        const double mu = q.a * x[i];
        double acc = 0.0;
        for (std::size_t j = 0; j < ny; ++j) {
          const double d = y[j] - mu;
          acc += c[j] * std::exp(-0.5 * d * d * q.inv_var);
        }
        out[i] = q.norm * acc;
      }
      return;
    }
    case TransitionEval::Kind::hmm: {
      const auto xi = to_states(x);
      const auto yj = to_states(y);
      for (std::size_t i = 0; i < nx; ++i) {
        const double* row = q.hmm->transition[static_cast<std::size_t>(xi[i])].data();
        double acc = 0.0;
        for (std::size_t j = 0; j < ny; ++j)
          acc += c[j] * row[static_cast<std::size_t>(yj[j])];
        out[i] = acc;
      }
      return;
    }
    case TransitionEval::Kind::generic: {
      for (std::size_t i = 0; i < nx; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < ny; ++j)
          acc += c[j] * q.model->transition_density(x[i], y[j]);
        out[i] = acc;
      }
      return;
    }
  }
}

// out[j] = sum_i c[i] q(x[i], y[j])
void pair_sums_left(const TransitionEval& q, std::span<const double> x,
                    std::span<const double> y, std::span<const double> c,
                    std::span<double> out) {
  const std::size_t nx = x.size(), ny = y.size();
  switch (q.kind) {
    case TransitionEval::Kind::lgssm: {
      std::vector<double> mu(nx);
      for (std::size_t i = 0; i < nx; ++i) mu[i] = q.a * x[i];
      for (std::size_t j = 0; j < ny; ++j) {
        const double yj = y[j];
        double acc = 0.0;
        for (std::size_t i = 0; i < nx; ++i) {
          const double d = yj - mu[i];
          acc += c[i] * std::exp(-0.5 * d * d * q.inv_var);
        }
        out[j] = q.norm * acc;
      }
      return;
    }
    case TransitionEval::Kind::hmm: {
      const auto xi = to_states(x);
      const auto yj = to_states(y);
      for (std::size_t j = 0; j < ny; ++j) {
        const int target = yj[j];
        double acc = 0.0;
        for (std::size_t i = 0; i < nx; ++i)
          acc += c[i] *
                 q.hmm->transition[static_cast<std::size_t>(xi[i])]
                                  [static_cast<std::size_t>(target)];
        out[j] = acc;
      }
      return;
    }
    case TransitionEval::Kind::generic: {
      for (std::size_t j = 0; j < ny; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < nx; ++i)
          acc += c[i] * q.model->transition_density(x[i], y[j]);
        out[j] = acc;
      }
      return;
    }
  }
}

// Linear-domain weights proportional to w_j / prior_t(y_j) for a backward
// system, max-shifted. The ratio is computed as a log difference.
std::vector<double> weights_over_prior(const ParticleSystem& bwd,
                                       const PseudoPrior& prior) {
  const auto lw = bwd.log_weights();
  const auto y = bwd.particles();
  std::vector<double> l(lw.size());
  for (std::size_t j = 0; j < lw.size(); ++j)
    l[j] = lw[j] - prior.log_density(bwd.time(), y[j]);
  const double m = max_of(l);
  for (double& v : l) v = std::exp(v - m);
  return l;
}

void require_pair(const ParticleSystem& fwd, const ParticleSystem& bwd,
                  int gap, const char* what) {
  if (fwd.direction() != Direction::forward ||
      bwd.direction() != Direction::backward ||
      bwd.time() != fwd.time() + gap)
    throw InvariantError(std::string(what) + ": direction/time mismatch");
}

std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

double product_estimate(const ParticleSystem& fwd, const ParticleSystem& bwd,
                        const std::function<double(double, double)>& h2) {
  require_pair(fwd, bwd, bwd.time() - fwd.time(), "product_estimate");
  if (!(fwd.time() < bwd.time()))
    throw InvariantError("product_estimate: forward time must precede backward");
  const auto wf = fwd.normalized_weights();
  const auto wb = bwd.normalized_weights();
  const auto xf = fwd.particles();
  const auto xb = bwd.particles();
  std::vector<double> outer(wf.size());
  for (std::size_t i = 0; i < wf.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < wb.size(); ++j)
      acc += wb[j] * h2(xf[i], xb[j]);
    outer[i] = wf[i] * acc;
  }
  return pairwise_sum(outer);
}

double product_estimate_separable(const ParticleSystem& fwd,
                                  const ParticleSystem& bwd,
                                  const std::function<double(double)>& f,
                                  const std::function<double(double)>& g) {
  if (!(fwd.time() < bwd.time()))
    throw InvariantError("product_estimate: forward time must precede backward");
  return estimate(fwd, f) * estimate(bwd, g);
}

ParticleSystem bdm_forward_reweight(const ParticleSystem& fwd_s,
                                    const ParticleSystem& bwd_next,
                                    const StateSpaceModel& model,
                                    const PseudoPrior& prior) {
  require_pair(fwd_s, bwd_next, 1, "bdm_forward_reweight");
  const auto q = TransitionEval::make(model);
  const auto c = weights_over_prior(bwd_next, prior);
  const std::size_t n = fwd_s.particles().size();
  std::vector<double> inner(n);
  pair_sums_right(q, fwd_s.particles(), bwd_next.particles(), c, inner);
  std::vector<double> lw(n);
  const auto fwd_lw = fwd_s.log_weights();
  for (std::size_t i = 0; i < n; ++i) lw[i] = fwd_lw[i] + std::log(inner[i]);
  return ParticleSystem(Direction::smoothing, fwd_s.time(),
                        {fwd_s.particles().begin(), fwd_s.particles().end()},
                        std::move(lw));
}

ParticleSystem bdm_backward_reweight(const ParticleSystem& fwd_prev,
                                     const ParticleSystem& bwd_s,
                                     const StateSpaceModel& model,
                                     const PseudoPrior& prior) {
  require_pair(fwd_prev, bwd_s, 1, "bdm_backward_reweight");
  const auto q = TransitionEval::make(model);
  const auto wf = fwd_prev.normalized_weights();
  const std::size_t n = bwd_s.particles().size();
  std::vector<double> inner(n);
  pair_sums_left(q, fwd_prev.particles(), bwd_s.particles(),
                 {wf.begin(), wf.end()}, inner);
  std::vector<double> lw(n);
  const auto bwd_lw = bwd_s.log_weights();
  const auto y = bwd_s.particles();
  const int s = bwd_s.time();
  for (std::size_t j = 0; j < n; ++j)
    lw[j] = (bwd_lw[j] - prior.log_density(s, y[j])) + std::log(inner[j]);
  return ParticleSystem(Direction::smoothing, s,
                        {y.begin(), y.end()}, std::move(lw));
}

ParticleSystem fwt_sample_quadratic(const ParticleSystem& fwd_prev,
                                    const ParticleSystem& bwd_next,
                                    const SmoothingProposal& proposal,
                                    const StateSpaceModel& model,
                                    const PseudoPrior& prior, int num_out,
                                    std::uint64_t seed,
                                    std::size_t max_table_bytes) {
  require_pair(fwd_prev, bwd_next, 2, "fwt_sample_quadratic");
  const int s = fwd_prev.time() + 1;
  const std::size_t nf = fwd_prev.particles().size();
  const std::size_t nb = bwd_next.particles().size();
  if (nf * nb * sizeof(double) > max_table_bytes)
    throw std::length_error(
        "fwt_sample_quadratic: joint selection table exceeds the memory cap");

  const auto xf = fwd_prev.particles();
  const auto xb = bwd_next.particles();
  const auto lwf = fwd_prev.log_weights();
  const auto lwb = bwd_next.log_weights();

  std::vector<double> lb(nb);  // log(w_j) - log prior_{s+1}(y_j)
  for (std::size_t j = 0; j < nb; ++j)
    lb[j] = lwb[j] - prior.log_density(s + 1, xb[j]);

  std::vector<double> table(nf * nb);
  if (proposal.factorized && proposal.log_adjustment_fwd &&
      proposal.log_adjustment_bwd) {
    std::vector<double> la(nf), lbb(nb);
    for (std::size_t i = 0; i < nf; ++i)
      la[i] = lwf[i] + proposal.log_adjustment_fwd(s, xf[i]);
    for (std::size_t j = 0; j < nb; ++j)
      lbb[j] = lb[j] + proposal.log_adjustment_bwd(s, xb[j]);
    const double ma = max_of(la), mb = max_of(lbb);
    if (!std::isfinite(ma) || !std::isfinite(mb))
      throw WeightDegeneracyError("fwt selection weights are all zero");
    std::vector<double> wa(nf), wb(nb);
    for (std::size_t i = 0; i < nf; ++i) wa[i] = std::exp(la[i] - ma);
    for (std::size_t j = 0; j < nb; ++j) wb[j] = std::exp(lbb[j] - mb);
    for (std::size_t i = 0; i < nf; ++i) {
      double* row = table.data() + i * nb;
      const double wi = wa[i];
      for (std::size_t j = 0; j < nb; ++j) row[j] = wi * wb[j];
    }
  } else {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nf; ++i) {
      double* row = table.data() + i * nb;
      for (std::size_t j = 0; j < nb; ++j) {
        row[j] = lwf[i] + proposal.log_adjustment(s, xf[i], xb[j]) + lb[j];
        m = std::max(m, row[j]);
      }
    }
    if (!std::isfinite(m))
      throw WeightDegeneracyError("fwt selection weights are all zero");
    for (double& v : table) v = std::exp(v - m);
  }

  // In-place cumulative scan; draws walk it by binary search, row first
  // (the strided row-end entries are the row-marginal cumulative), then
  // the conditional column inside the row slice. One uniform per
  // coordinate, with the same draw roles as the linear samplers.
  double acc = 0.0;
  for (double& v : table) {
    acc += v;
    v = acc;
  }
  if (!(acc > 0.0) || !std::isfinite(acc))
    throw WeightDegeneracyError("fwt selection table sums to zero");

  auto row_end = [&table, nb](std::size_t i) { return table[(i + 1) * nb - 1]; };

  const std::size_t n_out = static_cast<std::size_t>(num_out);
  std::vector<double> particles(n_out), lw(n_out);
  RandomStream root(seed);
  for (std::size_t l = 0; l < n_out; ++l) {
    RandomStream base = root.child(l);
    RandomStream fidx_rng = base.child(0);
    RandomStream bidx_rng = base.child(1);
    RandomStream kernel_rng = base.child(2);

    const double row_target = fidx_rng.uniform() * acc;
    std::size_t lo = 0, hi = nf - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (row_end(mid) > row_target) hi = mid; else lo = mid + 1;
    }
    const std::size_t i = lo;
    const double row_lo = i == 0 ? 0.0 : row_end(i - 1);
    const double col_target =
        row_lo + bidx_rng.uniform() * (row_end(i) - row_lo);
    auto first = table.begin() + static_cast<std::ptrdiff_t>(i * nb);
    auto last = first + static_cast<std::ptrdiff_t>(nb);
    auto it = std::upper_bound(first, last, col_target);
    if (it == last) --it;
    const std::size_t j = static_cast<std::size_t>(it - first);
    const double x = proposal.sample(s, xf[i], xb[j], kernel_rng);
    particles[l] = x;
    lw[l] = model.log_transition(xf[i], x) + model.log_potential(s, x) +
            model.log_transition(x, xb[j]) -
            proposal.log_adjustment(s, xf[i], xb[j]) -
            proposal.log_kernel(s, xf[i], xb[j], x);
  }
  return ParticleSystem(Direction::smoothing, s, std::move(particles),
                        std::move(lw));
}

ParticleSystem fwt_sample_linear(const ParticleSystem& fwd_prev,
                                 const ParticleSystem& bwd_next,
                                 const ForwardProposal& fwd_proposal,
                                 const BackwardProposal& bwd_proposal,
                                 const SmoothingProposal& kernel,
                                 const StateSpaceModel& model,
                                 const PseudoPrior& prior, int num_out,
                                 std::uint64_t seed) {
  require_pair(fwd_prev, bwd_next, 2, "fwt_sample_linear");
  if (!kernel.factorized)
    throw std::invalid_argument(
        "fwt_sample_linear: non-factorized adjustment rejected");
  const int s = fwd_prev.time() + 1;
  const auto xf = fwd_prev.particles();
  const auto xb = bwd_next.particles();
  const auto lwf = fwd_prev.log_weights();
  const auto lwb = bwd_next.log_weights();

  // Forward indices follow the forward-filter selection law, backward
  // indices the backward-filter selection law.
  std::vector<double> fsel(xf.size()), bsel(xb.size());
  for (std::size_t i = 0; i < xf.size(); ++i)
    fsel[i] = lwf[i] + fwd_proposal.log_adjustment(s, xf[i]);
  for (std::size_t j = 0; j < xb.size(); ++j)
    bsel[j] = lwb[j] + (bwd_proposal.log_adjustment(s, xb[j]) -
                        prior.log_density(s + 1, xb[j]));
  const auto ftable = CategoricalTable::from_log_weights(fsel);
  const auto btable = CategoricalTable::from_log_weights(bsel);

  // Index draws carry their filter-pass roles (0: forward, 1: backward),
  // so a run sharing the seed with the linear reweights selects the same
  // partners.
  const std::size_t n_out = static_cast<std::size_t>(num_out);
  std::vector<double> particles(n_out), lw(n_out);
  RandomStream root(seed);
  for (std::size_t l = 0; l < n_out; ++l) {
    RandomStream base = root.child(l);
    RandomStream fidx_rng = base.child(0);
    RandomStream bidx_rng = base.child(1);
    RandomStream kernel_rng = base.child(2);
    const int i = ftable.sample(fidx_rng.uniform());
    const int j = btable.sample(bidx_rng.uniform());
    const double xi = xf[static_cast<std::size_t>(i)];
    const double yj = xb[static_cast<std::size_t>(j)];
    const double x = kernel.sample(s, xi, yj, kernel_rng);
    particles[l] = x;
    lw[l] = model.log_transition(xi, x) + model.log_potential(s, x) +
            model.log_transition(x, yj) - fwd_proposal.log_adjustment(s, xi) -
            bwd_proposal.log_adjustment(s, yj) -
            kernel.log_kernel(s, xi, yj, x);
  }
  return ParticleSystem(Direction::smoothing, s, std::move(particles),
                        std::move(lw));
}

ParticleSystem bdm_linear_backward(const ParticleSystem& fwd_prev,
                                   const ParticleSystem& bwd_s,
                                   const ForwardProposal& fwd_proposal,
                                   const StateSpaceModel& model,
                                   const PseudoPrior& prior,
                                   std::uint64_t seed) {
  require_pair(fwd_prev, bwd_s, 1, "bdm_linear_backward");
  const int s = bwd_s.time();
  if (s < model.horizon && !bwd_s.ancestors())
    throw InvariantError("bdm_linear_backward: missing ancestors");

  const auto xf = fwd_prev.particles();
  const auto lwf = fwd_prev.log_weights();
  std::vector<double> fsel(xf.size());
  for (std::size_t i = 0; i < xf.size(); ++i)
    fsel[i] = lwf[i] + fwd_proposal.log_adjustment(s, xf[i]);
  const auto ftable = CategoricalTable::from_log_weights(fsel);

  const auto y = bwd_s.particles();
  const auto lwb = bwd_s.log_weights();
  const std::size_t n = y.size();
  std::vector<double> particles(y.begin(), y.end()), lw(n);
  std::vector<int> chosen(n);
  RandomStream root(seed);
  for (std::size_t l = 0; l < n; ++l) {
    RandomStream idx_rng = root.child(l).child(0);
    const int i = ftable.sample(idx_rng.uniform());
    chosen[l] = i;
    const double xi = xf[static_cast<std::size_t>(i)];
    lw[l] = lwb[l] + (model.log_transition(xi, y[l]) -
                      prior.log_density(s, y[l])) -
            fwd_proposal.log_adjustment(s, xi);
  }
  return ParticleSystem(Direction::smoothing, s, std::move(particles),
                        std::move(lw), std::move(chosen));
}

ParticleSystem bdm_linear_forward(const ParticleSystem& fwd_s,
                                  const ParticleSystem& bwd_next,
                                  const BackwardProposal& bwd_proposal,
                                  const StateSpaceModel& model,
                                  const PseudoPrior& prior,
                                  std::uint64_t seed) {
  require_pair(fwd_s, bwd_next, 1, "bdm_linear_forward");
  const int s = fwd_s.time();
  if (s > 0 && !fwd_s.ancestors())
    throw InvariantError("bdm_linear_forward: missing ancestors");

  const auto xb = bwd_next.particles();
  const auto lwb = bwd_next.log_weights();
  std::vector<double> bsel(xb.size());
  for (std::size_t j = 0; j < xb.size(); ++j)
    bsel[j] = lwb[j] + (bwd_proposal.log_adjustment(s, xb[j]) -
                        prior.log_density(s + 1, xb[j]));
  const auto btable = CategoricalTable::from_log_weights(bsel);

  const auto x = fwd_s.particles();
  const auto lwf = fwd_s.log_weights();
  const std::size_t n = x.size();
  std::vector<double> particles(x.begin(), x.end()), lw(n);
  std::vector<int> chosen(n);
  RandomStream root(seed);
  for (std::size_t l = 0; l < n; ++l) {
    RandomStream idx_rng = root.child(l).child(1);
    const int j = btable.sample(idx_rng.uniform());
    chosen[l] = j;
    const double yj = xb[static_cast<std::size_t>(j)];
    lw[l] = lwf[l] + model.log_transition(x[l], yj) -
            bwd_proposal.log_adjustment(s, yj);
  }
  return ParticleSystem(Direction::smoothing, s, std::move(particles),
                        std::move(lw), std::move(chosen));
}

std::vector<double> bdm_linear_backward_long_log_weights(
    const ParticleSystem& fwd_prev, const ParticleSystem& bwd_s,
    const ParticleSystem& bwd_next, const ForwardProposal& fwd_proposal,
    const BackwardProposal& bwd_proposal, const std::vector<int>& fwd_indices,
    const StateSpaceModel& model, const PseudoPrior& prior) {
  if (!bwd_s.ancestors())
    throw InvariantError("long-form weights need the backward ancestors");
  const int s = bwd_s.time();
  const auto y = bwd_s.particles();
  const auto& anc = *bwd_s.ancestors();
  const auto xb = bwd_next.particles();
  const auto xf = fwd_prev.particles();
  std::vector<double> out(y.size());
  for (std::size_t l = 0; l < y.size(); ++l) {
    const double xa = xb[static_cast<std::size_t>(anc[l])];
    const double xi = xf[static_cast<std::size_t>(fwd_indices[l])];
    out[l] = prior.log_density(s, y[l]) + model.log_potential(s, y[l]) +
             model.log_transition(y[l], xa) -
             bwd_proposal.log_adjustment(s, xa) -
             bwd_proposal.log_kernel(s, xa, y[l]) +
             model.log_transition(xi, y[l]) - prior.log_density(s, y[l]) -
             fwd_proposal.log_adjustment(s, xi);
  }
  return out;
}

std::vector<double> bdm_linear_forward_long_log_weights(
    const ParticleSystem& fwd_prev, const ParticleSystem& fwd_s,
    const ParticleSystem& bwd_next, const ForwardProposal& fwd_proposal,
    const BackwardProposal& bwd_proposal, const std::vector<int>& bwd_indices,
    const StateSpaceModel& model, const PseudoPrior& prior) {
  (void)prior;
  if (!fwd_s.ancestors())
    throw InvariantError("long-form weights need the forward ancestors");
  const int s = fwd_s.time();
  const auto x = fwd_s.particles();
  const auto& anc = *fwd_s.ancestors();
  const auto xf = fwd_prev.particles();
  const auto xb = bwd_next.particles();
  std::vector<double> out(x.size());
  for (std::size_t l = 0; l < x.size(); ++l) {
    const double xp = xf[static_cast<std::size_t>(anc[l])];
    const double yb = xb[static_cast<std::size_t>(bwd_indices[l])];
    out[l] = model.log_transition(xp, x[l]) + model.log_potential(s, x[l]) -
             fwd_proposal.log_adjustment(s, xp) -
             fwd_proposal.log_kernel(s, xp, x[l]) +
             model.log_transition(x[l], yb) -
             bwd_proposal.log_adjustment(s, yb);
  }
  return out;
}

const char* to_string(SmoothMethod m) {
  switch (m) {
    case SmoothMethod::product: return "product";
    case SmoothMethod::bdm_f: return "bdm-f";
    case SmoothMethod::bdm_b: return "bdm-b";
    case SmoothMethod::fwt_quad: return "fwt-quad";
    case SmoothMethod::fwt_lin: return "fwt-lin";
    case SmoothMethod::bdm_lin_f: return "bdm-lin-f";
    case SmoothMethod::bdm_lin_b: return "bdm-lin-b";
  }
  return "?";
}

SmoothMethod smooth_method_from_string(const std::string& name) {
  if (name == "product") return SmoothMethod::product;
  if (name == "bdm-f") return SmoothMethod::bdm_f;
  if (name == "bdm-b") return SmoothMethod::bdm_b;
  if (name == "fwt-quad") return SmoothMethod::fwt_quad;
  if (name == "fwt-lin") return SmoothMethod::fwt_lin;
  if (name == "bdm-lin-f") return SmoothMethod::bdm_lin_f;
  if (name == "bdm-lin-b") return SmoothMethod::bdm_lin_b;
  throw std::invalid_argument("unknown smoothing method: " + name);
}

namespace {

// Per-pair midpoint tables of a finite HMM: mass proportional to
// q(x, k) g_s(k) q(k, y) over the midpoint k, with the pair normalizer
// (the exact pair adjustment integral).
struct MidpointTables {
  // flat layout: ((s*K + x)*K + y)*K + k
  std::vector<double> mass, cum;
  std::vector<double> adj;  // (s*K + x)*K + y
  int K = 0;

  std::size_t pair_base(int s, double x, double y) const {
    return ((static_cast<std::size_t>(s) * K +
             static_cast<std::size_t>(hmm_state(x))) * K +
            static_cast<std::size_t>(hmm_state(y))) * K;
  }
  double adj_at(int s, double x, double y) const {
    return adj[(static_cast<std::size_t>(s) * K +
                static_cast<std::size_t>(hmm_state(x))) * K +
               static_cast<std::size_t>(hmm_state(y))];
  }
};

std::shared_ptr<const MidpointTables> build_midpoint_tables(
    const StateSpaceModel& model) {
  const auto& p = *model.hmm;
  const int K = p.num_states();
  const int T = model.horizon;
  auto tb = std::make_shared<MidpointTables>();
  tb->K = K;
  tb->mass.assign(static_cast<std::size_t>(T + 1) * K * K * K, 0.0);
  tb->cum = tb->mass;
  tb->adj.assign(static_cast<std::size_t>(T + 1) * K * K, 0.0);
  for (int s = 1; s <= T - 1; ++s) {
    for (int x = 0; x < K; ++x)
      for (int y = 0; y < K; ++y) {
        double total = 0.0;
        for (int k = 0; k < K; ++k) {
          const double v = p.transition[x][k] *
                           model.potential(s, static_cast<double>(k)) *
                           p.transition[k][y];
          const std::size_t idx = tb->pair_base(s, x, y) +
                                  static_cast<std::size_t>(k);
          tb->mass[idx] = v;
          total += v;
          tb->cum[idx] = total;
        }
        tb->adj[(static_cast<std::size_t>(s) * K +
                 static_cast<std::size_t>(x)) * K +
                static_cast<std::size_t>(y)] = total;
      }
  }
  return tb;
}

void attach_midpoint_kernel(SmoothingProposal& sp,
                            std::shared_ptr<const MidpointTables> tb) {
  sp.log_kernel = [tb](int s, double x, double y, double k) {
    const std::size_t base = tb->pair_base(s, x, y);
    return std::log(tb->mass[base + static_cast<std::size_t>(hmm_state(k))] /
                    tb->adj_at(s, x, y));
  };
  sp.sample = [tb](int s, double x, double y, RandomStream& rng) {
    const std::size_t base = tb->pair_base(s, x, y);
    const double total = tb->cum[base + static_cast<std::size_t>(tb->K) - 1];
    const double target = rng.uniform() * total;
    for (int k = 0; k < tb->K; ++k)
      if (tb->cum[base + static_cast<std::size_t>(k)] > target)
        return static_cast<double>(k);
    return static_cast<double>(tb->K - 1);
  };
}

// Conditional Gaussian of the midpoint given the pair for the scalar
// linear-Gaussian model: the product q(x,.) g_s(.) q(.,y) is Gaussian in
// the midpoint.
void attach_lgssm_midpoint_kernel(SmoothingProposal& sp,
                                  const StateSpaceModel& model) {
  const auto p = *model.lgssm;
  const auto ys = model.observations;
  const double inv_u = 1.0 / (p.sigma_u * p.sigma_u);
  const double inv_v = 1.0 / (p.sigma_v * p.sigma_v);
  const double alpha = inv_u + p.b * p.b * inv_v + p.a * p.a * inv_u;
  const double sd = std::sqrt(1.0 / alpha);
  auto mean = [p, ys, inv_u, inv_v, alpha](int s, double x, double y) {
    return (p.a * x * inv_u + p.b * ys.at(static_cast<std::size_t>(s)) * inv_v +
            p.a * y * inv_u) /
           alpha;
  };
  sp.log_kernel = [mean, sd](int s, double x, double y, double xm) {
    return gaussian_log_pdf(xm, mean(s, x, y), sd);
  };
  sp.sample = [mean, sd](int s, double x, double y, RandomStream& rng) {
    return mean(s, x, y) + sd * rng.normal();
  };
}

SmoothingProposal factorized_smoothing_adjustment(const PseudoPrior& prior) {
  SmoothingProposal sp;
  sp.factorized = true;
  sp.log_adjustment_fwd = [](int, double) { return 0.0; };
  sp.log_adjustment_bwd = [lg = prior.log_density](int s, double y) {
    return lg(s + 1, y);
  };
  sp.log_adjustment = [lg = prior.log_density](int s, double, double y) {
    return lg(s + 1, y);
  };
  return sp;
}

}  // namespace

ProposalBundle default_proposals(const StateSpaceModel& model,
                                 const PseudoPrior& prior) {
  ProposalBundle b;
  b.forward = bootstrap_forward_proposal(model);
  b.backward = default_backward_proposal(model, prior);
  b.smoothing = factorized_smoothing_adjustment(prior);
  if (model.kind == ModelKind::finite_hmm) {
    attach_midpoint_kernel(b.smoothing, build_midpoint_tables(model));
  } else if (model.kind == ModelKind::lgssm) {
    attach_lgssm_midpoint_kernel(b.smoothing, model);
  } else {
    throw std::invalid_argument(
        "default proposals support only the canonical models");
  }
  return b;
}

ProposalBundle matched_proposals(const StateSpaceModel& model,
                                 const PseudoPrior& prior) {
  ProposalBundle b;
  b.forward = bootstrap_forward_proposal(model);
  b.backward = default_backward_proposal(model, prior);
  b.smoothing = factorized_smoothing_adjustment(prior);
  b.smoothing.log_kernel = [q = model.log_transition](int, double x, double,
                                                      double xm) {
    return q(x, xm);
  };
  b.smoothing.sample = [st = model.sample_transition](int, double x, double,
                                                      RandomStream& rng) {
    return st(x, rng);
  };
  return b;
}

SmoothingProposal fully_adapted_smoothing_proposal(
    const StateSpaceModel& model) {
  if (model.kind != ModelKind::finite_hmm)
    throw std::invalid_argument(
        "fully adapted smoothing proposal unavailable in closed form");
  auto tb = build_midpoint_tables(model);
  SmoothingProposal sp;
  sp.factorized = false;
  sp.log_adjustment = [tb](int s, double x, double y) {
    return std::log(tb->adj_at(s, x, y));
  };
  attach_midpoint_kernel(sp, tb);
  return sp;
}

SmoothingMarginal::SmoothingMarginal(ParticleSystem ps)
    : time_(ps.time()),
      system_(std::make_shared<const ParticleSystem>(std::move(ps))) {}

SmoothingMarginal::SmoothingMarginal(LgssmProductForm form)
    : time_(form.s),
      product_(std::make_shared<const LgssmProductForm>(std::move(form))) {}

const ParticleSystem& SmoothingMarginal::system() const {
  if (!system_)
    throw InvariantError(
        "the product-form marginal does not carry a particle system");
  return *system_;
}

double SmoothingMarginal::estimate(const TestFunction& h) const {
  return estimate_all({h}).front();
}

std::vector<double> SmoothingMarginal::estimate_all(
    const std::vector<TestFunction>& hs) const {
  std::vector<double> out(hs.size());
  if (system_) {
    for (std::size_t k = 0; k < hs.size(); ++k)
      out[k] = smc::estimate(*system_, [&h = hs[k]](double x) { return h(x); });
    return out;
  }

  // Closed-form pair sweep for the linear-Gaussian product form. The
  // midpoint integral of q(x,.) g_s(.) q(.,y) is Gaussian in the midpoint;
  // constants shared by every pair cancel in the ratio and are dropped.
  const auto& f = *product_;
  const auto& p = f.params;
  const double inv_u = 1.0 / (p.sigma_u * p.sigma_u);
  const double inv_v = 1.0 / (p.sigma_v * p.sigma_v);
  const double alpha = inv_u + p.b * p.b * inv_v + p.a * p.a * inv_u;
  const double comp_sd = std::sqrt(1.0 / alpha);
  const double beta_obs = p.b * f.y_s * inv_v;

  const std::size_t nf = f.fwd_x.size(), nb = f.bwd_x.size();
  std::vector<double> u(nf), d(nf), v(nb), e(nb);
  for (std::size_t i = 0; i < nf; ++i) {
    const double m = p.a * f.fwd_x[i];
    u[i] = m * inv_u;
    d[i] = m * m * inv_u;
  }
  for (std::size_t j = 0; j < nb; ++j) {
    v[j] = p.a * f.bwd_x[j] * inv_u;
    e[j] = f.bwd_x[j] * f.bwd_x[j] * inv_u;
  }

  // Conservative exponent shift so exp never overflows.
  double shift;
  {
    double mu = 0, mv = 0, mind = d[0], mine = e[0];
    for (double x : u) mu = std::max(mu, std::abs(x));
    for (double x : v) mv = std::max(mv, std::abs(x));
    for (double x : d) mind = std::min(mind, x);
    for (double x : e) mine = std::min(mine, x);
    const double max_abs_beta = std::abs(beta_obs) + mu + mv;
    shift = 0.5 * max_abs_beta * max_abs_beta / alpha - 0.5 * (mind + mine);
  }

  for (const auto& h : hs)
    if (h.form == TestFunction::Form::indicator_state)
      throw std::invalid_argument(
          "product method cannot integrate a state indicator on a "
          "continuous model");

  double denom = 0.0;
  std::vector<double> numer(hs.size(), 0.0);
  for (std::size_t i = 0; i < nf; ++i) {
    const double wi = f.fwd_w[i];
    const double ui = u[i], di = d[i];
    for (std::size_t j = 0; j < nb; ++j) {
      const double beta = ui + v[j] + beta_obs;
      const double expo = 0.5 * beta * beta / alpha - 0.5 * (di + e[j]);
      const double z = wi * f.bwd_w[j] * std::exp(expo - shift);
      denom += z;
      const double mean = beta / alpha;
      for (std::size_t k = 0; k < hs.size(); ++k)
        numer[k] += z * hs[k].gaussian_expectation(mean, comp_sd);
    }
  }
  if (!(denom > 0.0))
    throw WeightDegeneracyError("product-form normalizer is zero");
  for (std::size_t k = 0; k < hs.size(); ++k) out[k] = numer[k] / denom;
  return out;
}

namespace {

// Exact finite-grid collapse of the product-form marginal for an HMM: the
// midpoint sum factorizes through the grid, so each grid state's mass is
// (sum_i w_i q(x_i, k)) g_s(k) (sum_j w_j q(k, y_j) / prior(y_j)).
ParticleSystem hmm_product_marginal(const ParticleSystem& fwd_prev,
                                    const ParticleSystem& bwd_next,
                                    const StateSpaceModel& model,
                                    const PseudoPrior& prior) {
  const auto& p = *model.hmm;
  const int K = p.num_states();
  const int s = fwd_prev.time() + 1;
  const auto wf = fwd_prev.normalized_weights();
  const auto c = weights_over_prior(bwd_next, prior);
  const auto xi = to_states(fwd_prev.particles());
  const auto yj = to_states(bwd_next.particles());

  std::vector<double> into(static_cast<std::size_t>(K), 0.0),
      outof(static_cast<std::size_t>(K), 0.0);
  for (std::size_t i = 0; i < wf.size(); ++i)
    for (int k = 0; k < K; ++k)
      into[static_cast<std::size_t>(k)] +=
          wf[i] * p.transition[static_cast<std::size_t>(xi[i])]
                              [static_cast<std::size_t>(k)];
  for (std::size_t j = 0; j < c.size(); ++j)
    for (int k = 0; k < K; ++k)
      outof[static_cast<std::size_t>(k)] +=
          c[j] * p.transition[static_cast<std::size_t>(k)]
                             [static_cast<std::size_t>(yj[j])];

  std::vector<double> particles(static_cast<std::size_t>(K)),
      lw(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    particles[static_cast<std::size_t>(k)] = static_cast<double>(k);
    lw[static_cast<std::size_t>(k)] =
        std::log(into[static_cast<std::size_t>(k)]) +
        model.log_potential(s, static_cast<double>(k)) +
        std::log(outof[static_cast<std::size_t>(k)]);
  }
  return ParticleSystem(Direction::smoothing, s, std::move(particles),
                        std::move(lw));
}

}  // namespace

SmoothResult smooth_all(const StateSpaceModel& model, const PseudoPrior& prior,
                        const ProposalBundle& proposals, SmoothMethod method,
                        int num_particles, std::uint64_t seed,
                        const SmoothOptions& options) {
  if (method == SmoothMethod::fwt_lin && !proposals.smoothing.factorized)
    throw std::invalid_argument(
        "smooth_all: the linear sampler needs a factorized adjustment");
  if (method == SmoothMethod::product && model.kind == ModelKind::custom)
    throw std::invalid_argument(
        "smooth_all: the product method requires a canonical model");

  const int T = model.horizon;
  SeedStream root(seed);
  const SeedStream fwd_seeds = root.child(1);
  const SeedStream bwd_seeds = root.child(2);
  const SeedStream mix_seeds = root.child(3);

  std::vector<ParticleSystem> fwd;
  fwd.reserve(static_cast<std::size_t>(T) + 1);
  fwd.push_back(init_forward(model, num_particles,
                             fwd_seeds.child(0).key()));
  for (int t = 1; t <= T; ++t)
    fwd.push_back(forward_step(model, proposals.forward, fwd.back(), t,
                               fwd_seeds.child(static_cast<std::uint64_t>(t))
                                   .key()));

  SmoothResult result;
  result.combine_ns.assign(static_cast<std::size_t>(T) + 1, 0);

  if (T == 0) {
    // A single epoch: the filter at time zero is the smoother.
    if (options.compute_endpoints) {
      std::vector<double> x(fwd[0].particles().begin(),
                            fwd[0].particles().end());
      std::vector<double> lw(fwd[0].log_weights().begin(),
                             fwd[0].log_weights().end());
      result.marginals.emplace_back(
          ParticleSystem(Direction::smoothing, 0, std::move(x), std::move(lw)));
    }
    return result;
  }

  std::vector<ParticleSystem> bwd;
  bwd.reserve(static_cast<std::size_t>(T) + 1);
  bwd.push_back(init_backward(model, prior, num_particles,
                              bwd_seeds.child(static_cast<std::uint64_t>(T))
                                  .key()));
  for (int t = T - 1; t >= 0; --t)
    bwd.push_back(backward_step(model, prior, proposals.backward, bwd.back(),
                                t,
                                bwd_seeds.child(static_cast<std::uint64_t>(t))
                                    .key()));
  // bwd was built from T down to 0; reindex by time.
  std::vector<const ParticleSystem*> bwd_at(static_cast<std::size_t>(T) + 1);
  for (const auto& ps : bwd)
    bwd_at[static_cast<std::size_t>(ps.time())] = &ps;

  const bool linear_family = method == SmoothMethod::fwt_lin ||
                             method == SmoothMethod::bdm_lin_f ||
                             method == SmoothMethod::bdm_lin_b;

  for (int s = 0; s <= T; ++s) {
    if (!options.compute_endpoints && (s == 0 || s == T)) continue;
    const std::uint64_t skey = mix_seeds.child(static_cast<std::uint64_t>(s)).key();
    const std::int64_t t0 = options.record_timing ? now_ns() : 0;
    if (s == 0) {
      result.marginals.emplace_back(
          linear_family
              ? bdm_linear_forward(fwd[0], *bwd_at[1], proposals.backward,
                                   model, prior, skey)
              : bdm_forward_reweight(fwd[0], *bwd_at[1], model, prior));
    } else if (s == T) {
      result.marginals.emplace_back(
          linear_family
              ? bdm_linear_backward(fwd[static_cast<std::size_t>(T) - 1],
                                    *bwd_at[static_cast<std::size_t>(T)],
                                    proposals.forward, model, prior, skey)
              : bdm_backward_reweight(fwd[static_cast<std::size_t>(T) - 1],
                                      *bwd_at[static_cast<std::size_t>(T)],
                                      model, prior));
    } else {
      const auto& fprev = fwd[static_cast<std::size_t>(s) - 1];
      const auto& fhere = fwd[static_cast<std::size_t>(s)];
      const auto& bnext = *bwd_at[static_cast<std::size_t>(s) + 1];
      const auto& bhere = *bwd_at[static_cast<std::size_t>(s)];
      switch (method) {
        case SmoothMethod::product:
          if (model.kind == ModelKind::finite_hmm) {
            result.marginals.emplace_back(
                hmm_product_marginal(fprev, bnext, model, prior));
          } else {
            SmoothingMarginal::LgssmProductForm form;
            form.s = s;
            form.params = *model.lgssm;
            form.y_s = model.observations[static_cast<std::size_t>(s)];
            const auto wf = fprev.normalized_weights();
            form.fwd_x.assign(fprev.particles().begin(),
                              fprev.particles().end());
            form.fwd_w.assign(wf.begin(), wf.end());
            form.bwd_x.assign(bnext.particles().begin(),
                              bnext.particles().end());
            form.bwd_w = weights_over_prior(bnext, prior);
            result.marginals.emplace_back(std::move(form));
          }
          break;
        case SmoothMethod::bdm_f:
          result.marginals.emplace_back(
              bdm_forward_reweight(fhere, bnext, model, prior));
          break;
        case SmoothMethod::bdm_b:
          result.marginals.emplace_back(
              bdm_backward_reweight(fprev, bhere, model, prior));
          break;
        case SmoothMethod::fwt_quad:
          result.marginals.emplace_back(fwt_sample_quadratic(
              fprev, bnext, proposals.smoothing, model, prior, num_particles,
              skey, options.max_table_bytes));
          break;
        case SmoothMethod::fwt_lin:
          result.marginals.emplace_back(fwt_sample_linear(
              fprev, bnext, proposals.forward, proposals.backward,
              proposals.smoothing, model, prior, num_particles, skey));
          break;
        case SmoothMethod::bdm_lin_f:
          result.marginals.emplace_back(bdm_linear_forward(
              fhere, bnext, proposals.backward, model, prior, skey));
          break;
        case SmoothMethod::bdm_lin_b:
          result.marginals.emplace_back(bdm_linear_backward(
              fprev, bhere, proposals.forward, model, prior, skey));
          break;
      }
    }
    if (options.record_timing)
      result.combine_ns[static_cast<std::size_t>(s)] = now_ns() - t0;
  }
  return result;
}

}  // namespace smc
