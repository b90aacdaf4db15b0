#include "ropebench/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ropebench {

Matrix finite_diff(const ScalarFn& f, const Matrix& x, double step) {
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      const double saved = probe(i, j);
      probe(i, j) = saved + step;
      const double up = f(probe);
      probe(i, j) = saved - step;
      const double down = f(probe);
      probe(i, j) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::runtime_error("finite_diff: non-finite evaluation at entry (" +
                                 std::to_string(i) + "," + std::to_string(j) + ")");
      }
      grad(i, j) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

GradReport check_gradient(const std::string& op, const ScalarFn& f,
                          const Matrix& analytic, const Matrix& x,
                          double threshold, double step) {
  const Matrix fd = finite_diff(f, x, step);
  GradReport report;
  report.op = op;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      report.max_rel_err =
          std::max(report.max_rel_err, rel_err(analytic(i, j), fd(i, j)));
      report.max_abs_err =
          std::max(report.max_abs_err, std::abs(analytic(i, j) - fd(i, j)));
    }
  }
  report.pass = report.max_rel_err < threshold;
  return report;
}

}  // namespace ropebench
