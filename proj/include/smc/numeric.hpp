#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace smc {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log sqrt(2*pi)

/// Pairwise (tree) summation: deterministic reduction order and O(log n)
/// rounding-error growth, used for weight totals and estimator sums.
inline double pairwise_sum(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n <= 32) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double max_of(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  return m;
}

/// log(sum(exp(v))) with max shifting; pairwise reduction of the shifted
/// terms keeps the rounding error logarithmic in the system size.
inline double log_sum_exp(std::span<const double> v) {
  const double m = max_of(v);
  if (!std::isfinite(m)) return m;  // all -inf (or contains +inf)
  std::vector<double> shifted(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) shifted[i] = std::exp(v[i] - m);
  return m + std::log(pairwise_sum(shifted));
}

inline double gaussian_log_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi);
}

/// Partial moments of a standard normal on (a, b):
/// m[k] = E[Z^k 1{a < Z < b}] for k = 0..3.
struct StdNormalPartialMoments {
  double m0, m1, m2, m3;
};

inline StdNormalPartialMoments std_normal_partial_moments(double a, double b) {
  const double pa = normal_pdf(a), pb = normal_pdf(b);
  const double ca = normal_cdf(a), cb = normal_cdf(b);
  StdNormalPartialMoments r;
  r.m0 = cb - ca;
  r.m1 = pa - pb;
  r.m2 = r.m0 + a * pa - b * pb;
  r.m3 = 2.0 * (pa - pb) + a * a * pa - b * b * pb;
  return r;
}

/// E[X^k 1{lo < X < hi}] for X ~ N(mean, sd^2), k = 0..3, by binomial
/// expansion of (mean + sd Z)^k against the standard partial moments.
struct GaussianPartialMoments {
  double m0, m1, m2, m3;
};

inline GaussianPartialMoments gaussian_partial_moments(double mean, double sd,
                                                       double lo, double hi) {
  const double a = (lo - mean) / sd, b = (hi - mean) / sd;
  const auto z = std_normal_partial_moments(a, b);
  GaussianPartialMoments r;
  const double u = mean, s = sd;
  r.m0 = z.m0;
  r.m1 = u * z.m0 + s * z.m1;
  r.m2 = u * u * z.m0 + 2.0 * u * s * z.m1 + s * s * z.m2;
  r.m3 = u * u * u * z.m0 + 3.0 * u * u * s * z.m1 + 3.0 * u * s * s * z.m2 +
         s * s * s * z.m3;
  return r;
}

/// E[clamp(X, lo, hi)] for X ~ N(mean, sd^2).
inline double gaussian_clamped_mean(double mean, double sd, double lo,
                                    double hi) {
  const double a = (lo - mean) / sd, b = (hi - mean) / sd;
  const auto z = std_normal_partial_moments(a, b);
  return lo * normal_cdf(a) + hi * (1.0 - normal_cdf(b)) +
         mean * z.m0 + sd * z.m1;
}

}  // namespace smc
