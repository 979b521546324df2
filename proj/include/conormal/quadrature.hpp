#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace conormal {

struct GaussRule {
  std::vector<double> nodes;    // on [-1, 1], ascending
  std::vector<double> weights;  // sum to 2
};

/// Gauss-Legendre rule of the given order (number of nodes), cached.
const GaussRule& gauss_legendre(std::size_t order);

struct AdaptiveResult {
  double value = 0.0;
  double error_estimate = 0.0;
  std::size_t evaluations = 0;
  bool converged = false;
};

/// Globally adaptive 7/15-point Gauss-Kronrod quadrature of f on [a, b]; splits the worst
/// segment until the summed error meets the tolerance or max_segments is reached.
AdaptiveResult integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                  double abs_tol = 1e-12, double rel_tol = 1e-12,
                                  std::size_t max_segments = 500);

}  // namespace conormal
