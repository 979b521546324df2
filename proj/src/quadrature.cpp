#include "conormal/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <queue>
#include <stdexcept>

namespace conormal {

namespace {

GaussRule build_gauss_legendre(std::size_t n) {
  GaussRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    // Chebyshev-like initial guess, then Newton on P_n.
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        double pk = ((2.0 * static_cast<double>(k) - 1.0) * x * p1 - (static_cast<double>(k) - 1.0) * p0) /
                    static_cast<double>(k);
        p0 = p1;
        p1 = pk;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double p0 = 1.0, p1 = x;
    for (std::size_t k = 2; k <= n; ++k) {
      double pk =
          ((2.0 * static_cast<double>(k) - 1.0) * x * p1 - (static_cast<double>(k) - 1.0) * p0) / static_cast<double>(k);
      p0 = p1;
      p1 = pk;
    }
    dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[n - 1 - i] = x;
    rule.nodes[i] = -x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

// Kronrod 15-point extension of the 7-point Gauss rule (abscissae on [0,1) half).
constexpr double kXgk[8] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                            0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                            0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                            0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr double kWgk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                            0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                            0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                            0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                           0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double value;
  double error;
};

Segment gk15(const std::function<double(double)>& f, double a, double b, std::size_t& evals) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  double fc = f(c);
  double kronrod = fc * kWgk[7];
  double gauss = fc * kWg[3];
  for (int j = 0; j < 7; ++j) {
    double dx = h * kXgk[j];
    double f1 = f(c - dx), f2 = f(c + dx);
    kronrod += kWgk[j] * (f1 + f2);
    if (j % 2 == 1) gauss += kWg[j / 2] * (f1 + f2);
  }
  evals += 15;
  return {kronrod * h, std::abs((kronrod - gauss) * h)};
}

}  // namespace

const GaussRule& gauss_legendre(std::size_t order) {
  if (order == 0) throw std::invalid_argument("Gauss-Legendre order must be positive");
  static std::mutex mutex;
  static std::map<std::size_t, GaussRule> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, build_gauss_legendre(order)).first;
  return it->second;
}

AdaptiveResult integrate_adaptive(const std::function<double(double)>& f, double a, double b, double abs_tol,
                                  double rel_tol, std::size_t max_segments) {
  AdaptiveResult out;
  if (a == b) {
    out.converged = true;
    return out;
  }
  struct Piece {
    double a, b;
    Segment seg;
    bool operator<(const Piece& o) const { return seg.error < o.seg.error; }
  };
  std::priority_queue<Piece> heap;
  Segment whole = gk15(f, a, b, out.evaluations);
  heap.push({a, b, whole});
  double value = whole.value, error = whole.error;
  while (heap.size() < std::max<std::size_t>(max_segments, 1)) {
    if (error <= std::max(abs_tol, rel_tol * std::abs(value))) break;
    Piece worst = heap.top();
    heap.pop();
    const double m = 0.5 * (worst.a + worst.b);
    Segment left = gk15(f, worst.a, m, out.evaluations);
    Segment right = gk15(f, m, worst.b, out.evaluations);
    value += left.value + right.value - worst.seg.value;
    error += left.error + right.error - worst.seg.error;
    heap.push({worst.a, m, left});
    heap.push({m, worst.b, right});
  }
  // resum to avoid drift from the running updates
  value = 0.0;
  error = 0.0;
  while (!heap.empty()) {
    value += heap.top().seg.value;
    error += heap.top().seg.error;
    heap.pop();
  }
  out.value = value;
  out.error_estimate = error;
  out.converged = error <= std::max(abs_tol, rel_tol * std::abs(value));
  return out;
}

}  // namespace conormal
