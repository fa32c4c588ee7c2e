#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "smc/errors.hpp"

namespace smc {

/// 64-bit finalizer used both as the stream generator (SplitMix64) and as
/// the key-derivation hash for splitting streams.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

/// Derive an independent child key from (key, label). Two rounds of mixing
/// so that related labels (0, 1, 2, ...) land in unrelated streams.
constexpr std::uint64_t derive_key(std::uint64_t key,
                                   std::uint64_t label) noexcept {
  return mix64(mix64(key + 0x9e3779b97f4a7c15ULL) ^
               mix64(label + 0x6a09e667f3bcc909ULL));
}

/// Counter-based pseudo-random stream (SplitMix64). Every consumer of
/// randomness in the library owns its key: a (time step, particle) pair in
/// a filter pass gets `stream.child(t).child(i)`, which makes each draw a
/// pure function of the master seed regardless of evaluation order.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) : key_(key), state_(key) {}

  /// New stream with a key derived from this stream's key (not its
  /// position), so splitting commutes with drawing.
  RandomStream child(std::uint64_t label) const {
    return RandomStream(derive_key(key_, label));
  }

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform draw strictly inside (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by Box-Muller. No caching: two uniforms per call, so
  /// the stream position stays a pure function of the call count.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t state_;
};

/// Root of a splittable seed hierarchy. Children are derived by hashing,
/// never by incrementing, so adjacent master seeds do not produce
/// overlapping streams.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t key) : key_(key) {}
  SeedStream child(std::uint64_t label) const {
    return SeedStream(derive_key(key_, label));
  }
  std::uint64_t key() const { return key_; }
  RandomStream stream() const { return RandomStream(key_); }

 private:
  std::uint64_t key_;
};

/// Inverse-CDF sampler over a fixed categorical law, built once per
/// selection step and queried with one uniform per draw. Ties break by
/// strict inequality: the sampled index is the first whose cumulative sum
/// exceeds the scaled uniform draw.
class CategoricalTable {
 public:
  /// Build from linear-domain nonnegative weights.
  static CategoricalTable from_weights(std::span<const double> weights) {
    CategoricalTable t;
    t.cumulative_.resize(weights.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      t.cumulative_[i] = acc;
    }
    if (!(acc > 0.0) || !std::isfinite(acc)) {
      throw WeightDegeneracyError(
          "categorical selection weights sum to zero or are not finite");
    }
    return t;
  }

  /// Build from log-domain weights with max-shift normalization.
  static CategoricalTable from_log_weights(std::span<const double> lw) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : lw) m = std::max(m, v);
    if (!std::isfinite(m)) {
      throw WeightDegeneracyError(
          "categorical selection weights are all zero in log domain");
    }
    std::vector<double> w(lw.size());
    for (std::size_t i = 0; i < lw.size(); ++i) w[i] = std::exp(lw[i] - m);
    return from_weights(w);
  }

  int sample(double u01) const {
    const double target = u01 * cumulative_.back();
    auto it =
        std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
    if (it == cumulative_.end()) --it;
    return static_cast<int>(it - cumulative_.begin());
  }

  double total() const { return cumulative_.back(); }
  std::size_t size() const { return cumulative_.size(); }

 private:
  std::vector<double> cumulative_;
};

}  // namespace smc
