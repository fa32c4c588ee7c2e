#pragma once

#include <functional>
#include <string>

namespace smc {

/// A named bounded test function with its oscillation norm. The form tag
/// lets the product-form smoother integrate the function against a
/// Gaussian component in closed form instead of sampling it.
struct TestFunction {
  enum class Form { constant, indicator_state, clipped_identity, clipped_cubic };

  std::string name;
  Form form = Form::constant;
  double oscillation = 0;
  int state = 0;                    // indicator_state
  double lo = -10, hi = 10;         // clip bounds
  double scale = 1.0;               // clipped_cubic: clamp(scale x^3, lo, hi)

  double operator()(double x) const;

  /// E[h(X)] for X ~ N(mean, sd^2); exact for every form except the state
  /// indicator, which only makes sense on a finite state space.
  double gaussian_expectation(double mean, double sd) const;
};

/// Registry lookup: "one", "ind<k>" (indicator of state k),
/// "id_clip10" (identity clamped to [-10, 10]),
/// "cubic_clip" (0.1 x^3 clamped to [-10, 10]).
TestFunction test_function(const std::string& name);

}  // namespace smc
