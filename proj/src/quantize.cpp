#include "conormal/quantize.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <numbers>
#include <ostream>

#include "conormal/error.hpp"
#include "conormal/hormander.hpp"
#include "conormal/quadrature.hpp"
#include "conormal/report.hpp"

namespace conormal {

namespace {

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::VectorXd;
using cplx = std::complex<double>;

Index idx(std::size_t n) { return static_cast<Index>(n); }

}  // namespace

// ---------------------------------------------------------------------------

Rational::Rational(std::int64_t num, std::int64_t den) {
  if (den == 0) throw PreconditionError("rational with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  std::int64_t g = std::gcd(num < 0 ? -num : num, den);
  if (g == 0) g = 1;
  num_ = num / g;
  den_ = den / g;
}

std::string Rational::to_string() const {
  if (den_ == 1) return std::to_string(num_);
  return std::to_string(num_) + "/" + std::to_string(den_);
}

Rational Rational::parse(const std::string& text) {
  auto slash = text.find('/');
  try {
    if (slash != std::string::npos)
      return Rational(std::stoll(text.substr(0, slash)), std::stoll(text.substr(slash + 1)));
    auto dot = text.find('.');
    if (dot == std::string::npos) return Rational(std::stoll(text));
    std::string digits = text.substr(0, dot) + text.substr(dot + 1);
    std::int64_t den = 1;
    for (std::size_t i = dot + 1; i < text.size(); ++i) den *= 10;
    return Rational(std::stoll(digits), den);
  } catch (const std::logic_error&) {
    throw PreconditionError("not a rational number: '" + text + "'");
  }
}

Rational operator+(Rational a, Rational b) { return Rational(a.num_ * b.den_ + b.num_ * a.den_, a.den_ * b.den_); }
Rational operator-(Rational a, Rational b) { return Rational(a.num_ * b.den_ - b.num_ * a.den_, a.den_ * b.den_); }
Rational operator-(Rational a) { return Rational(-a.num_, a.den_); }
Rational operator*(Rational a, Rational b) { return Rational(a.num_ * b.num_, a.den_ * b.den_); }

// ---------------------------------------------------------------------------

Grid::Grid(EuclideanPatch patch, std::vector<std::size_t> points_per_axis, std::optional<std::vector<Interval>> box)
    : patch_(std::move(patch)), points_(std::move(points_per_axis)) {
  if (points_.size() == 1 && patch_.dim() > 1) points_.assign(patch_.dim(), points_[0]);
  if (points_.size() != patch_.dim()) throw DimensionMismatch("grid needs one point count per axis");
  box_ = box ? *box : patch_.sampling_box();
  if (box_.size() != patch_.dim()) throw DimensionMismatch("grid box has the wrong dimension");
  size_ = 1;
  cell_volume_ = 1.0;
  for (std::size_t a = 0; a < points_.size(); ++a) {
    if (points_[a] == 0) throw PreconditionError("grid axis with zero points");
    size_ *= points_[a];
    cell_volume_ *= spacing(a);
  }
  nodes_.resize(idx(points_.size()), idx(size_));
  for (std::size_t j = 0; j < size_; ++j) {
    std::size_t rest = j;
    for (std::size_t a = points_.size(); a-- > 0;) {
      std::size_t i = rest % points_[a];
      rest /= points_[a];
      nodes_(idx(a), idx(j)) = box_[a].lo + (static_cast<double>(i) + 0.5) * spacing(a);
    }
  }
}

Eigen::VectorXd Grid::node(std::size_t j) const { return nodes_.col(idx(j)); }

bool Grid::operator==(const Grid& other) const {
  if (patch_.coords() != other.patch_.coords() || points_ != other.points_) return false;
  for (std::size_t a = 0; a < box_.size(); ++a)
    if (box_[a].lo != other.box_[a].lo || box_[a].hi != other.box_[a].hi) return false;
  return true;
}

// ---------------------------------------------------------------------------

double Amplitude::bump(double t, int power) {
  if (t <= -1.0 || t >= 1.0) return 0.0;
  if (power == 0) return 1.0;
  double b = 1.0 - t * t, out = 1.0;
  for (int i = 0; i < power; ++i) out *= b;
  return out;
}

double Amplitude::cutoff(const std::string& name, double v) const {
  auto it = support.find(name);
  if (it == support.end()) return 1.0;
  const Interval& iv = it->second;
  if (v < iv.lo || v > iv.hi) return 0.0;
  return bump((2.0 * v - iv.lo - iv.hi) / iv.width(), cutoff_power);
}

Amplitude Amplitude::renamed(const std::map<std::string, std::string>& names) const {
  std::vector<std::string> vars = expr.vars();
  for (auto& v : vars)
    if (auto it = names.find(v); it != names.end()) v = it->second;
  std::vector<ScalarExpr> repl;
  for (const auto& v : vars) repl.push_back(ScalarExpr::variable(v, vars));
  Amplitude out;
  out.expr = expr.substitute(repl);
  out.cutoff_power = cutoff_power;
  for (const auto& [k, iv] : support) {
    auto it = names.find(k);
    out.support[it == names.end() ? k : it->second] = iv;
  }
  return out;
}

Amplitude Amplitude::product(const Amplitude& a, const Amplitude& b) {
  if (a.cutoff_power != b.cutoff_power) throw PreconditionError("amplitudes with different cutoff exponents");
  std::vector<std::string> vars = a.expr.vars();
  for (const auto& v : b.expr.vars())
    if (std::find(vars.begin(), vars.end(), v) == vars.end()) vars.push_back(v);
  Amplitude out;
  out.expr = a.expr.rebind(vars) * b.expr.rebind(vars);
  out.cutoff_power = a.cutoff_power;
  out.support = a.support;
  for (const auto& [k, iv] : b.support) {
    auto it = out.support.find(k);
    if (it == out.support.end()) {
      out.support[k] = iv;
    } else if (it->second.lo != iv.lo || it->second.hi != iv.hi) {
      throw PreconditionError("amplitudes disagree on the support of '" + k + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Amplitude bound to a fixed variable layout, split into factor groups by the variables they use.
struct BoundAmplitude {
  std::vector<std::string> vars;
  std::vector<ScalarExpr> x_factors;          // no fiber variable
  std::vector<std::vector<ScalarExpr>> groups;  // by fiber block
  std::vector<ScalarExpr> mixed;              // more than one fiber block
  std::vector<std::pair<std::size_t, Interval>> x_support;  // slot, interval

  bool uses_any(const ScalarExpr& e, std::size_t from, std::size_t to) const {
    auto u = e.uses();
    for (std::size_t i = from; i < to; ++i)
      if (u[i]) return true;
    return false;
  }
};

// blocks: [begin, end) slot ranges of each fiber block in vars.
BoundAmplitude bind_amplitude(const Amplitude& a, const std::vector<std::string>& vars,
                              const std::vector<std::pair<std::size_t, std::size_t>>& blocks,
                              std::size_t n_coords) {
  BoundAmplitude b;
  b.vars = vars;
  ScalarExpr e = a.expr.rebind(vars);
  b.groups.resize(blocks.size());
  for (auto& f : e.factors()) {
    int hit = -1, count = 0;
    for (std::size_t g = 0; g < blocks.size(); ++g)
      if (b.uses_any(f, blocks[g].first, blocks[g].second)) {
        hit = static_cast<int>(g);
        ++count;
      }
    if (count == 0)
      b.x_factors.push_back(f);
    else if (count == 1)
      b.groups[static_cast<std::size_t>(hit)].push_back(f);
    else
      b.mixed.push_back(f);
  }
  for (std::size_t i = 0; i < n_coords; ++i)
    if (auto it = a.support.find(vars[i]); it != a.support.end()) b.x_support.emplace_back(i, it->second);
  for (const auto& [name, iv] : a.support)
    if (std::find(vars.begin(), vars.end(), name) == vars.end())
      throw UnknownIdentifier(name);
  return b;
}

double product_of(const std::vector<ScalarExpr>& fs, const std::vector<double>& point) {
  double v = 1.0;
  for (const auto& f : fs) {
    v *= f.eval(std::span<const double>(point));
    if (v == 0.0) return 0.0;
  }
  return v;
}

double x_factor(const BoundAmplitude& b, const Amplitude& a, const std::vector<double>& point) {
  double v = 1.0;
  for (const auto& [slot, iv] : b.x_support) {
    double x = point[slot];
    if (x < iv.lo || x > iv.hi) return 0.0;
    v *= Amplitude::bump((2.0 * x - iv.lo - iv.hi) / iv.width(), a.cutoff_power);
  }
  if (v == 0.0) return 0.0;
  return v * product_of(b.x_factors, point);
}

// One fiber axis: panelized Gauss-Legendre nodes with cutoff and phase folded into complex weights.
struct Axis {
  std::size_t slot = 0;
  Interval support;
  std::vector<double> nodes;
  std::vector<cplx> weights;
};

std::size_t panels_for(double u, double width, double hbar, std::size_t k, const QuadratureOptions& q) {
  // phase variation sum_i |u_i| width_i / (panels_i hbar) stays below pi/2
  const double need = std::abs(u) * width * 2.0 * static_cast<double>(k) / (std::numbers::pi * hbar);
  if (!std::isfinite(need)) throw QuadraturePanelOverflow(std::numeric_limits<std::size_t>::max(), q.panel_budget);
  std::size_t p = std::max<std::size_t>(q.min_panels, static_cast<std::size_t>(std::ceil(need)));
  p = std::max<std::size_t>(p, 1);
  if (p > q.panel_budget) throw QuadraturePanelOverflow(p, q.panel_budget);
  return p;
}

void build_axis(Axis& ax, double u, double hbar, std::size_t k, int cutoff_power, const QuadratureOptions& q,
                std::size_t* max_panels) {
  const GaussRule& rule = gauss_legendre(q.order);
  const std::size_t panels = panels_for(u, ax.support.width(), hbar, k, q);
  if (max_panels) *max_panels = std::max(*max_panels, panels);
  const double h = ax.support.width() / static_cast<double>(panels);
  ax.nodes.clear();
  ax.weights.clear();
  for (std::size_t p = 0; p < panels; ++p) {
    const double c = ax.support.lo + (static_cast<double>(p) + 0.5) * h;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double s = c + 0.5 * h * rule.nodes[i];
      const double t = (2.0 * s - ax.support.lo - ax.support.hi) / ax.support.width();
      const double w = 0.5 * h * rule.weights[i] * Amplitude::bump(t, cutoff_power);
      if (w == 0.0) continue;
      ax.nodes.push_back(s);
      ax.weights.push_back(w * std::polar(1.0, s * u / hbar));
    }
  }
}

// sum over the tensor grid of the axes of prod(weights) * prod(factors); point slots are overwritten.
cplx tensor_sum(std::vector<Axis*>& axes, const std::vector<ScalarExpr>& factors, std::vector<double>& point) {
  const std::size_t k = axes.size();
  if (k == 0) return product_of(factors, point);
  for (auto* ax : axes)
    if (ax->nodes.empty()) return 0.0;
  if (k == 1) {
    Axis& ax = *axes[0];
    cplx acc = 0.0;
    if (factors.empty()) {
      for (const auto& w : ax.weights) acc += w;
      return acc;
    }
    for (std::size_t i = 0; i < ax.nodes.size(); ++i) {
      point[ax.slot] = ax.nodes[i];
      acc += ax.weights[i] * product_of(factors, point);
    }
    return acc;
  }
  std::vector<std::size_t> it(k, 0);
  cplx acc = 0.0;
  while (true) {
    cplx w = 1.0;
    for (std::size_t a = 0; a < k; ++a) {
      point[axes[a]->slot] = axes[a]->nodes[it[a]];
      w *= axes[a]->weights[it[a]];
    }
    acc += w * product_of(factors, point);
    std::size_t a = k;
    while (a-- > 0) {
      if (++it[a] < axes[a]->nodes.size()) break;
      it[a] = 0;
    }
    if (a == static_cast<std::size_t>(-1)) break;
  }
  return acc;
}

std::vector<Axis> make_axes(const Amplitude& a, const std::vector<std::string>& vars, std::size_t first,
                            std::size_t count) {
  std::vector<Axis> axes(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string& name = vars[first + i];
    auto it = a.support.find(name);
    if (it == a.support.end())
      throw PreconditionError("amplitude needs a compact support interval for fiber variable '" + name + "'");
    axes[i].slot = first + i;
    axes[i].support = it->second;
  }
  return axes;
}

}  // namespace

std::vector<std::string> kernel_fiber_names(const CanonicalRelation& gamma) {
  return fiber_variable_names(gamma.fiber_dim(), gamma.product().coords(), "s");
}

std::pair<std::vector<std::string>, std::vector<std::string>> composed_fiber_names(const CanonicalRelation& first,
                                                                                   const CanonicalRelation& second) {
  auto coords = concat_vars(first.product().coords(), second.target().coords());
  auto s = fiber_variable_names(first.fiber_dim(), coords, "s");
  auto t = fiber_variable_names(second.fiber_dim(), concat_vars(coords, s), "t");
  return {s, t};
}

DiscretizedFIO oscillatory_kernel(const CanonicalRelation& gamma, const Amplitude& a, Rational r, double hbar,
                                  const Grid& source, const Grid& target, const QuadratureOptions& quad) {
  if (!(hbar > 0.0)) throw PreconditionError("hbar must be positive");
  if (source.patch().coords() != gamma.source().coords() || target.patch().coords() != gamma.target().coords())
    throw GridMismatch("grids do not match the relation's source and target patches");

  const std::size_t n1 = gamma.n_source(), n2 = gamma.n_target(), m = n1 + n2, k = gamma.fiber_dim();
  auto fibers = kernel_fiber_names(gamma);
  std::vector<std::string> vars = concat_vars(gamma.product().coords(), fibers);
  vars.push_back("hbar");
  BoundAmplitude amp = bind_amplitude(a, vars, {{m, m + k}}, m);
  std::vector<ScalarExpr> rest = amp.groups[0];
  const auto& cons = gamma.base().constraints();
  const auto& f = gamma.twist().extension;
  std::vector<Axis> axes = make_axes(a, vars, m, k);
  std::vector<Axis*> axis_ptrs;
  for (auto& ax : axes) axis_ptrs.push_back(&ax);

  DiscretizedFIO out;
  out.source = source;
  out.target = target;
  out.hbar = hbar;
  out.r = r;
  out.k = static_cast<int>(k);
  out.order_m = r + half(static_cast<std::int64_t>(n2));
  out.kernel = MatrixXcd::Zero(idx(target.size()), idx(source.size()));
  const double pref = std::pow(hbar, out.prefactor_exponent().to_double());

  std::vector<double> point(vars.size(), 0.0);
  point.back() = hbar;
  for (std::size_t j2 = 0; j2 < target.size(); ++j2) {
    for (std::size_t j1 = 0; j1 < source.size(); ++j1) {
      for (std::size_t i = 0; i < n1; ++i) point[i] = source.nodes()(idx(i), idx(j1));
      for (std::size_t i = 0; i < n2; ++i) point[n1 + i] = target.nodes()(idx(i), idx(j2));
      const double xf = x_factor(amp, a, point);
      if (xf == 0.0) continue;
      std::span<const double> x(point.data(), m);
      for (std::size_t i = 0; i < k; ++i)
        build_axis(axes[i], cons[i].eval(x), hbar, k, a.cutoff_power, quad, nullptr);
      const cplx integral = tensor_sum(axis_ptrs, rest, point);
      const double phase = f.eval(x) / hbar;
      out.kernel(idx(j2), idx(j1)) = pref * xf * integral * std::polar(1.0, phase);
    }
  }
  return out;
}

Eigen::VectorXcd apply(const DiscretizedFIO& f, const Eigen::VectorXcd& g) {
  if (static_cast<std::size_t>(g.size()) != f.source.size())
    throw GridMismatch("grid function has " + std::to_string(g.size()) + " values, source grid has " +
                       std::to_string(f.source.size()) + " nodes");
  return f.kernel * (g * f.source.cell_volume());
}

Eigen::VectorXcd apply(const DiscretizedFIO& f, const Grid& grid, const Eigen::VectorXcd& g) {
  if (!(grid == f.source)) throw GridMismatch("grid function lives on a different grid");
  return apply(f, g);
}

DiscretizedFIO compose_numeric(const DiscretizedFIO& second, const DiscretizedFIO& first, int e) {
  if (!(first.target == second.source)) throw GridMismatch("first target grid differs from second source grid");
  if (std::abs(first.hbar - second.hbar) > 1e-15 * first.hbar)
    throw PreconditionError("operators are discretized at different hbar");
  if (e < 0) throw PreconditionError("fiber dimension e must be nonnegative");
  DiscretizedFIO out;
  out.source = first.source;
  out.target = second.target;
  out.hbar = first.hbar;
  const auto n2 = static_cast<std::int64_t>(first.target.dim());
  out.k = static_cast<int>(n2) + first.k + second.k;
  out.r = first.r + second.r + half(n2);
  out.order_m = first.order_m + second.order_m - half(e);
  out.kernel = second.kernel * (first.kernel * first.target.cell_volume());
  return out;
}

DiscretizedFIO composed_kernel_direct(const CanonicalRelation& first, const CanonicalRelation& second,
                                      const Amplitude& a, Rational r, double hbar, const Grid& g1, const Grid& g2,
                                      const Grid& g3, const QuadratureOptions& quad, DirectKernelInfo* info,
                                      bool allow_factorization) {
  if (!(hbar > 0.0)) throw PreconditionError("hbar must be positive");
  if (first.target().coords() != second.source().coords()) throw DimensionMismatch("relations do not compose");
  if (g1.patch().coords() != first.source().coords() || g2.patch().coords() != first.target().coords() ||
      g3.patch().coords() != second.target().coords())
    throw GridMismatch("grids do not match the patches of the chain");

  const std::size_t n1 = first.n_source(), n2 = first.n_target(), n3 = second.n_target();
  const std::size_t k1 = first.fiber_dim(), k2 = second.fiber_dim();
  const std::size_t nx = n1 + n2 + n3;
  auto [snames, tnames] = composed_fiber_names(first, second);
  std::vector<std::string> vars = concat_vars(concat_vars(first.product().coords(), second.target().coords()),
                                              concat_vars(snames, tnames));
  vars.push_back("hbar");
  BoundAmplitude amp = bind_amplitude(a, vars, {{nx, nx + k1}, {nx + k1, nx + k1 + k2}}, nx);

  // Phase pieces over the triple coordinates.
  std::vector<std::string> triple(vars.begin(), vars.begin() + idx(nx));
  std::vector<ScalarExpr> u, v;
  for (const auto& c : first.base().constraints()) u.push_back(c.rebind(triple));
  for (const auto& c : second.base().constraints()) v.push_back(c.rebind(triple));
  ScalarExpr twist = first.twist().extension.rebind(triple) + second.twist().extension.rebind(triple);

  auto depends_on = [](const std::vector<ScalarExpr>& fs, std::size_t from, std::size_t to) {
    for (const auto& f : fs) {
      auto use = f.uses();
      for (std::size_t i = from; i < to; ++i)
        if (use[i]) return true;
    }
    return false;
  };
  const bool factorized = allow_factorization && amp.mixed.empty() &&
                          !depends_on(amp.groups[0], n1 + n2, nx) && !depends_on(amp.groups[1], 0, n1);
  std::size_t max_panels = 0;

  DiscretizedFIO out;
  out.source = g1;
  out.target = g3;
  out.hbar = hbar;
  out.r = r;
  out.k = static_cast<int>(n2 + k1 + k2);
  out.order_m = r + half(static_cast<std::int64_t>(n3));
  out.kernel = MatrixXcd::Zero(idx(g3.size()), idx(g1.size()));
  const double pref = std::pow(hbar, out.prefactor_exponent().to_double());
  const double dv = g2.cell_volume();

  std::vector<Axis> s_axes = make_axes(a, vars, nx, k1);
  std::vector<Axis> t_axes = make_axes(a, vars, nx + k1, k2);
  std::vector<double> point(vars.size(), 0.0);
  point.back() = hbar;
  auto set_x = [&](std::size_t j1, std::size_t j2, std::size_t j3) {
    for (std::size_t i = 0; i < n1; ++i) point[i] = g1.nodes()(idx(i), idx(j1));
    for (std::size_t i = 0; i < n2; ++i) point[n1 + i] = g2.nodes()(idx(i), idx(j2));
    for (std::size_t i = 0; i < n3; ++i) point[n1 + n2 + i] = g3.nodes()(idx(i), idx(j3));
  };
  auto build = [&](std::vector<Axis>& axes, const std::vector<ScalarExpr>& cons, std::size_t kk) {
    std::vector<Axis*> ptrs;
    std::span<const double> x(point.data(), nx);
    for (std::size_t i = 0; i < axes.size(); ++i) {
      build_axis(axes[i], cons[i].eval(x), hbar, kk, a.cutoff_power, quad, &max_panels);
      ptrs.push_back(&axes[i]);
    }
    return ptrs;
  };

  if (factorized) {
    // s-integrals depend on (x1, x2) only and t-integrals on (x2, x3) only.
    MatrixXcd s_int(idx(g2.size()), idx(g1.size())), t_int(idx(g3.size()), idx(g2.size()));
    for (std::size_t j2 = 0; j2 < g2.size(); ++j2) {
      for (std::size_t j1 = 0; j1 < g1.size(); ++j1) {
        set_x(j1, j2, 0);
        auto ptrs = build(s_axes, u, k1 + k2);
        s_int(idx(j2), idx(j1)) = tensor_sum(ptrs, amp.groups[0], point);
      }
      for (std::size_t j3 = 0; j3 < g3.size(); ++j3) {
        set_x(0, j2, j3);
        auto ptrs = build(t_axes, v, k1 + k2);
        t_int(idx(j3), idx(j2)) = tensor_sum(ptrs, amp.groups[1], point);
      }
    }
    for (std::size_t j3 = 0; j3 < g3.size(); ++j3) {
      for (std::size_t j1 = 0; j1 < g1.size(); ++j1) {
        cplx acc = 0.0;
        for (std::size_t j2 = 0; j2 < g2.size(); ++j2) {
          set_x(j1, j2, j3);
          const double xf = x_factor(amp, a, point);
          if (xf == 0.0) continue;
          std::span<const double> x(point.data(), nx);
          acc += xf * s_int(idx(j2), idx(j1)) * t_int(idx(j3), idx(j2)) * std::polar(1.0, twist.eval(x) / hbar);
        }
        out.kernel(idx(j3), idx(j1)) = pref * dv * acc;
      }
    }
  } else {
    std::vector<ScalarExpr> rest = amp.groups[0];
    rest.insert(rest.end(), amp.groups[1].begin(), amp.groups[1].end());
    rest.insert(rest.end(), amp.mixed.begin(), amp.mixed.end());
    for (std::size_t j3 = 0; j3 < g3.size(); ++j3) {
      for (std::size_t j1 = 0; j1 < g1.size(); ++j1) {
        cplx acc = 0.0;
        for (std::size_t j2 = 0; j2 < g2.size(); ++j2) {
          set_x(j1, j2, j3);
          const double xf = x_factor(amp, a, point);
          if (xf == 0.0) continue;
          auto sp = build(s_axes, u, k1 + k2);
          auto tp = build(t_axes, v, k1 + k2);
          sp.insert(sp.end(), tp.begin(), tp.end());
          std::span<const double> x(point.data(), nx);
          acc += xf * tensor_sum(sp, rest, point) * std::polar(1.0, twist.eval(x) / hbar);
        }
        out.kernel(idx(j3), idx(j1)) = pref * dv * acc;
      }
    }
  }
  if (info) {
    info->factorized = factorized;
    info->max_panels = max_panels;
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_kernel_csv(std::ostream& os, const DiscretizedFIO& f) {
  os << "j_target,j_source,re,im\n";
  for (Index i = 0; i < f.kernel.rows(); ++i)
    for (Index j = 0; j < f.kernel.cols(); ++j)
      os << i << ',' << j << ',' << format_double(f.kernel(i, j).real()) << ',' << format_double(f.kernel(i, j).imag())
         << '\n';
}

namespace {

template <class T>
void put(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw PreconditionError("truncated kernel dump");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

constexpr char kMagic[8] = {'C', 'N', 'R', 'M', 'F', 'I', 'O', '1'};

}  // namespace

void write_kernel_binary(std::ostream& os, const DiscretizedFIO& f) {
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(f.kernel.rows()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(f.kernel.cols()));
  put<double>(os, f.hbar);
  put<double>(os, f.r.to_double());
  put<std::int32_t>(os, f.k);
  put<std::int32_t>(os, 0);
  put<double>(os, f.order_m.to_double());
  for (Index i = 0; i < f.kernel.rows(); ++i)
    for (Index j = 0; j < f.kernel.cols(); ++j) {
      put<double>(os, f.kernel(i, j).real());
      put<double>(os, f.kernel(i, j).imag());
    }
}

KernelDump read_kernel_binary(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw PreconditionError("not a kernel dump");
  KernelDump d;
  d.rows = get<std::uint32_t>(is);
  d.cols = get<std::uint32_t>(is);
  d.hbar = get<double>(is);
  d.r = get<double>(is);
  d.k = get<std::int32_t>(is);
  (void)get<std::int32_t>(is);
  d.m = get<double>(is);
  d.kernel.resize(d.rows, d.cols);
  for (std::uint32_t i = 0; i < d.rows; ++i)
    for (std::uint32_t j = 0; j < d.cols; ++j) {
      double re = get<double>(is);
      double im = get<double>(is);
      d.kernel(i, j) = {re, im};
    }
  return d;
}

double relative_l2(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionMismatch("kernel shapes differ");
  const double nb = b.norm();
  if (nb == 0.0) return a.norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return (a - b).norm() / nb;
}

}  // namespace conormal
