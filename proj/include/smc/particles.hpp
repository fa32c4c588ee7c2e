#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace smc {

enum class Direction { forward, backward, smoothing };

const char* to_string(Direction d);

/// A weighted particle system at one time index. Weights live in log
/// domain; the linear-domain total and the normalized weights are
/// materialized once at construction with max-shift scaling. Immutable
/// after construction.
class ParticleSystem {
 public:
  ParticleSystem(Direction direction, int time, std::vector<double> particles,
                 std::vector<double> log_weights,
                 std::optional<std::vector<int>> ancestors = std::nullopt);

  Direction direction() const { return direction_; }
  int time() const { return time_; }
  int size() const { return static_cast<int>(particles_.size()); }

  std::span<const double> particles() const { return particles_; }
  std::span<const double> log_weights() const { return log_weights_; }
  const std::optional<std::vector<int>>& ancestors() const { return ancestors_; }

  /// Linear-domain weight total (sum of exponentiated log-weights).
  double weight_sum() const;
  double log_weight_sum() const { return log_total_; }

  /// Weights rescaled to sum to one.
  std::span<const double> normalized_weights() const { return normalized_; }

 private:
  Direction direction_;
  int time_;
  std::vector<double> particles_;
  std::vector<double> log_weights_;
  std::optional<std::vector<int>> ancestors_;
  std::vector<double> normalized_;
  double log_total_;
};

/// Self-normalized estimate sum_i w_i h(x_i) / sum_i w_i.
double estimate(const ParticleSystem& ps,
                const std::function<double(double)>& h);

/// (sum w)^2 / sum w^2, in [1, N].
double effective_sample_size(const ParticleSystem& ps);

/// Same diagnostic on a raw range of linear-domain weights (which may
/// contain zeros, unlike a particle system).
double effective_sample_size(std::span<const double> weights);

/// Debug dump: one line per particle, columns index,particle,log_weight,
/// ancestor (empty ancestor column when absent).
void write_debug_csv(const ParticleSystem& ps, std::ostream& out);

}  // namespace smc
