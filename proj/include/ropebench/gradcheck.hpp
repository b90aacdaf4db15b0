#pragma once

#include <functional>
#include <string>

#include "ropebench/types.hpp"

// Central finite-difference oracle for validating hand-written backward
// passes. Step size and error metric are fixed project-wide.

namespace ropebench {

// Step used for all finite-difference probes (on 64-bit floats).
inline constexpr double kFdStep = 1e-5;

using ScalarFn = std::function<double(const Matrix&)>;

struct GradReport {
  std::string op;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool pass = false;
};

// (f(x + step e_i) - f(x - step e_i)) / (2 step), per coordinate.
// Throws if f evaluates to a non-finite value anywhere in the probe.
Matrix finite_diff(const ScalarFn& f, const Matrix& x, double step = kFdStep);

// Relative error metric used everywhere: |a - b| / max(1, |a|, |b|).
double rel_err(double a, double b);

// Compares an analytic gradient against the finite-difference probe of f at x.
GradReport check_gradient(const std::string& op, const ScalarFn& f,
                          const Matrix& analytic, const Matrix& x,
                          double threshold, double step = kFdStep);

}  // namespace ropebench
