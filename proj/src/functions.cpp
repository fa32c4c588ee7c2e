#include "smc/functions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "smc/numeric.hpp"

namespace smc {

double TestFunction::operator()(double x) const {
  switch (form) {
    case Form::constant:
      return 1.0;
    case Form::indicator_state:
      return std::lround(x) == state ? 1.0 : 0.0;
    case Form::clipped_identity:
      return std::clamp(x, lo, hi);
    case Form::clipped_cubic:
      return std::clamp(scale * x * x * x, lo, hi);
  }
  return 0.0;
}

double TestFunction::gaussian_expectation(double mean, double sd) const {
  switch (form) {
    case Form::constant:
      return 1.0;
    case Form::indicator_state:
      throw std::invalid_argument(
          "state indicator has no Gaussian expectation");
    case Form::clipped_identity:
      // Past nine standard deviations the clamp carries no mass at double
      // precision; skip the erf evaluations.
      if (mean - 9.0 * sd > lo && mean + 9.0 * sd < hi) return mean;
      return gaussian_clamped_mean(mean, sd, lo, hi);
    case Form::clipped_cubic: {
      // scale x^3 lies in [lo, hi] iff x lies in [cbrt(lo/scale),
      // cbrt(hi/scale)] (scale > 0).
      const double a = std::cbrt(lo / scale), b = std::cbrt(hi / scale);
      if (mean - 9.0 * sd > a && mean + 9.0 * sd < b)
        return scale * (mean * mean * mean + 3.0 * mean * sd * sd);
      const auto pm = gaussian_partial_moments(mean, sd, a, b);
      return lo * normal_cdf((a - mean) / sd) +
             hi * (1.0 - normal_cdf((b - mean) / sd)) + scale * pm.m3;
    }
  }
  return 0.0;
}

TestFunction test_function(const std::string& name) {
  TestFunction h;
  h.name = name;
  if (name == "one") {
    h.form = TestFunction::Form::constant;
    h.oscillation = 0.0;
    return h;
  }
  if (name.rfind("ind", 0) == 0 && name.size() > 3) {
    h.form = TestFunction::Form::indicator_state;
    h.state = std::stoi(name.substr(3));
    h.oscillation = 1.0;
    return h;
  }
  if (name == "id_clip10") {
    h.form = TestFunction::Form::clipped_identity;
    h.lo = -10.0;
    h.hi = 10.0;
    h.oscillation = 20.0;
    return h;
  }
  if (name == "cubic_clip") {
    h.form = TestFunction::Form::clipped_cubic;
    h.scale = 0.1;
    h.lo = -10.0;
    h.hi = 10.0;
    h.oscillation = 20.0;
    return h;
  }
  throw std::invalid_argument("unknown test function: " + name);
}

}  // namespace smc
