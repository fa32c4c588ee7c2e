#pragma once

#include <span>
#include <vector>

namespace smc {

struct Moments {
  double mean = 0;
  double variance = 0;  // unbiased
  double skewness = 0;
  double excess_kurtosis = 0;
  int count = 0;
};

Moments sample_moments(std::span<const double> values);

struct LineFit {
  double slope = 0;
  double intercept = 0;
};

/// Ordinary least squares of y on x.
LineFit ols_fit(std::span<const double> x, std::span<const double> y);

/// Root mean square of a vector of errors.
double rms(std::span<const double> errors);

/// Standard normal quantile (Beasley-Springer-Moro rational approximation,
/// good to ~1e-9 over (0, 1)).
double normal_quantile(double p);

}  // namespace smc
