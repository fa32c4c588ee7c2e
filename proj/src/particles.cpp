#include "smc/particles.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "smc/errors.hpp"
#include "smc/numeric.hpp"

namespace smc {

const char* to_string(Direction d) {
  switch (d) {
    case Direction::forward: return "forward";
    case Direction::backward: return "backward";
    case Direction::smoothing: return "smoothing";
  }
  return "?";
}

ParticleSystem::ParticleSystem(Direction direction, int time,
                               std::vector<double> particles,
                               std::vector<double> log_weights,
                               std::optional<std::vector<int>> ancestors)
    : direction_(direction),
      time_(time),
      particles_(std::move(particles)),
      log_weights_(std::move(log_weights)),
      ancestors_(std::move(ancestors)) {
  const std::size_t n = particles_.size();
  if (n == 0) throw InvariantError("particle system must be nonempty");
  if (log_weights_.size() != n)
    throw InvariantError("log_weights size differs from particle count");

  bool any_positive = false;
  for (double lw : log_weights_) {
    if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity())
      throw InvariantError("non-finite log-weight in particle system");
    if (lw > -std::numeric_limits<double>::infinity()) any_positive = true;
  }
  if (!any_positive)
    throw WeightDegeneracyError("weight degeneracy: every weight is zero");
  for (double lw : log_weights_) {
    if (!std::isfinite(lw))
      throw InvariantError("zero weight (log -inf) in particle system");
  }
  if (ancestors_) {
    if (ancestors_->size() != n)
      throw InvariantError("ancestor vector size differs from particle count");
    for (int a : *ancestors_)
      if (a < 0 || a >= static_cast<int>(n))
        throw InvariantError("ancestor index out of range");
  }

  const double m = max_of(log_weights_);
  normalized_.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    normalized_[i] = std::exp(log_weights_[i] - m);
  const double total_shifted = pairwise_sum(normalized_);
  log_total_ = m + std::log(total_shifted);
  for (double& w : normalized_) w /= total_shifted;
}

double ParticleSystem::weight_sum() const { return std::exp(log_total_); }

double estimate(const ParticleSystem& ps,
                const std::function<double(double)>& h) {
  const auto w = ps.normalized_weights();
  const auto x = ps.particles();
  std::vector<double> terms(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) terms[i] = w[i] * h(x[i]);
  return pairwise_sum(terms);
}

double effective_sample_size(const ParticleSystem& ps) {
  const auto w = ps.normalized_weights();
  std::vector<double> sq(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) sq[i] = w[i] * w[i];
  return 1.0 / pairwise_sum(sq);
}

double effective_sample_size(std::span<const double> weights) {
  double total = 0.0, total_sq = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w))
      throw InvariantError("weights must be finite and nonnegative");
    total += w;
    total_sq += w * w;
  }
  if (!(total > 0.0))
    throw WeightDegeneracyError("weight degeneracy: every weight is zero");
  return total * total / total_sq;
}

void write_debug_csv(const ParticleSystem& ps, std::ostream& out) {
  out << "index,particle,log_weight,ancestor\n";
  const auto x = ps.particles();
  const auto lw = ps.log_weights();
  for (int i = 0; i < ps.size(); ++i) {
    out << i << ',' << x[static_cast<std::size_t>(i)] << ','
        << lw[static_cast<std::size_t>(i)] << ',';
    if (ps.ancestors()) out << (*ps.ancestors())[static_cast<std::size_t>(i)];
    out << '\n';
  }
}

}  // namespace smc
