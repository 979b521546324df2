#pragma once

// Independent reference computations shared by the tests.

#include <cmath>
#include <cstdio>
#include <complex>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conormal/geometry.hpp"
#include "conormal/rng.hpp"

namespace oracle {

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

inline conormal::EuclideanPatch line(const std::string& name, const std::string& coord, double lo = -1.0,
                                     double hi = 1.0) {
  return conormal::EuclideanPatch(name, {coord}, std::vector<conormal::Interval>{{lo, hi}});
}

inline conormal::EuclideanPatch box(const std::string& name, const std::vector<std::string>& coords, double lo = -1.0,
                                    double hi = 1.0) {
  return conormal::EuclideanPatch(name, coords, std::vector<conormal::Interval>(coords.size(), {lo, hi}));
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

using Fn = std::function<double(const Eigen::VectorXd&)>;

inline Eigen::VectorXd fd_gradient(const Fn& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline Eigen::MatrixXd fd_hessian(const Fn& f, const Eigen::VectorXd& x, double h) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd hm(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      auto at = [&](double di, double dj) {
        Eigen::VectorXd y = x;
        y[i] += di;
        y[j] += dj;
        return f(y);
      };
      hm(i, j) = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
    }
  return hm;
}

/// Central differences at h and h/2 combined to cancel the h^2 term.
inline Eigen::VectorXd fd_gradient_richardson(const Fn& f, const Eigen::VectorXd& x, double h) {
  return (4.0 * fd_gradient(f, x, 0.5 * h) - fd_gradient(f, x, h)) / 3.0;
}

inline Eigen::MatrixXd fd_hessian_richardson(const Fn& f, const Eigen::VectorXd& x, double h) {
  return (4.0 * fd_hessian(f, x, 0.5 * h) - fd_hessian(f, x, h)) / 3.0;
}

/// Polynomial as explicit monomials, summed term by term.
struct Polynomial {
  std::vector<double> coeffs;
  std::vector<std::vector<int>> powers;

  double eval(const Eigen::VectorXd& x) const {
    double sum = 0.0;
    for (std::size_t t = 0; t < coeffs.size(); ++t) {
      double term = coeffs[t];
      for (std::size_t i = 0; i < powers[t].size(); ++i)
        for (int p = 0; p < powers[t][i]; ++p) term *= x[static_cast<Eigen::Index>(i)];
      sum += term;
    }
    return sum;
  }

  std::string text(const std::vector<std::string>& vars) const {
    std::string out;
    char buf[64];
    for (std::size_t t = 0; t < coeffs.size(); ++t) {
      std::snprintf(buf, sizeof buf, "%.17g", coeffs[t]);
      if (t) out += " + ";
      out += "(";
      out += buf;
      out += ")";
      for (std::size_t i = 0; i < powers[t].size(); ++i)
        if (powers[t][i] > 0) out += "*" + vars[i] + "^" + std::to_string(powers[t][i]);
    }
    return out;
  }

  static Polynomial random(conormal::CounterRng& rng, std::size_t nvars, int degree, std::size_t terms) {
    Polynomial p;
    for (std::size_t t = 0; t < terms; ++t) {
      std::vector<int> pw(nvars, 0);
      int left = static_cast<int>(rng.uniform() * (degree + 1));
      for (int d = 0; d < left; ++d) ++pw[static_cast<std::size_t>(rng.uniform() * static_cast<double>(nvars))];
      p.coeffs.push_back(rng.uniform(-2.0, 2.0));
      p.powers.push_back(pw);
    }
    return p;
  }
};

/// Random smooth expression over vars, nested to the given depth; every primitive is defined on all of R.
inline std::string random_expression(conormal::CounterRng& rng, const std::vector<std::string>& vars, int depth) {
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)); };
  if (depth == 0 || rng.uniform() < 0.15) {
    if (rng.uniform() < 0.75) return vars[pick(vars.size())];
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", rng.uniform(-2.0, 2.0));
    return std::string("(") + buf + ")";
  }
  auto sub = [&] { return random_expression(rng, vars, depth - 1); };
  switch (pick(12)) {
    case 0: return "(" + sub() + " + " + sub() + ")";
    case 1: return "(" + sub() + " - " + sub() + ")";
    case 2: return "(" + sub() + " * " + sub() + ")";
    case 3: return "(" + sub() + " / (2 + cos(" + sub() + ")))";
    case 4: return "sin(" + sub() + ")";
    case 5: return "cos(" + sub() + ")";
    case 6: return "exp(0.5*sin(" + sub() + "))";
    case 7: return "tanh(" + sub() + ")";
    case 8: return "sqrt(1 + (" + sub() + ")^2)";
    case 9: return "log(2 + (" + sub() + ")^2)";
    case 10: return "(" + sub() + ")^2";
    default: return "(" + sub() + ")^3";
  }
}

/// Fourier transform of the bump (1 - t^2)^4 on [-1, 1]: int (1-t^2)^4 e^{i w t} dt.
/// Closed form 768 j_4(w) / w^4 with j_4 the spherical Bessel function; Taylor series near 0.
inline double bump4_fourier(double w) {
  const double aw = std::abs(w);
  if (aw < 2.0) {
    // even moments int (1-t^2)^4 t^(2n) dt = B(n + 1/2, 5)
    double sum = 0.0, term_w = 1.0, fact = 1.0;
    for (int n = 0; n < 12; ++n) {
      if (n > 0) {
        term_w *= -w * w;
        fact *= static_cast<double>((2 * n - 1) * (2 * n));
      }
      const double moment = std::beta(n + 0.5, 5.0);
      sum += term_w / fact * moment;
    }
    return sum;
  }
  const double s = std::sin(w), c = std::cos(w);
  const double w2 = w * w, w3 = w2 * w, w5 = w3 * w2;
  const double j4 = (105.0 / w5 - 45.0 / w3 + 1.0 / w) * s - (105.0 / (w2 * w2) - 10.0 / w2) * c;
  return 768.0 * j4 / (w2 * w2);
}

}  // namespace oracle
