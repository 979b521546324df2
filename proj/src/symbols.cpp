#include "conormal/symbols.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include "conormal/error.hpp"
#include "conormal/linalg.hpp"
#include "conormal/report.hpp"

namespace conormal {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using cplx = std::complex<double>;

Index idx(std::size_t n) { return static_cast<Index>(n); }

double max_abs(const MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

double abs_det(const MatrixXd& m) { return m.size() == 0 ? 1.0 : std::abs(m.fullPivLu().determinant()); }

MatrixXd random_matrix(CounterRng& rng, Index rows, Index cols) {
  MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-1.0, 1.0);
  return m;
}

double condition(const MatrixXd& m) {
  if (m.size() == 0) return 1.0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  return sv[0] == 0.0 ? 0.0 : sv[sv.size() - 1] / sv[0];
}

// Rows of relation coordinates (x, xi, y, eta) for one factor: outer = (x, xi), middle = (y, eta) of Gamma1,
// middle = (x, xi), outer = (y, eta) of Gamma2.
MatrixXd source_rows(const MatrixXd& m, std::size_t n1) { return m.topRows(idx(2 * n1)); }
MatrixXd target_rows(const MatrixXd& m, std::size_t n1, std::size_t n2) {
  return m.middleRows(idx(2 * n1), idx(2 * n2));
}

}  // namespace

CoordinateChange CoordinateChange::from_expressions(const VectorExpr& map) {
  return {[map](const VectorXd& q) { return map.eval(q); }, [map](const VectorXd& q) { return map.jacobian(q); }};
}

// ---------------------------------------------------------------------------

Parametrization ConormalChart::parametrization() const {
  const std::size_t n1 = gamma.n_source(), n2 = gamma.n_target(), m = n1 + n2, k = gamma.fiber_dim();
  const std::size_t bd = base_dim;
  // copies keep the parametrization independent of this chart's lifetime
  const CanonicalRelation g = gamma;
  auto zf = z;
  auto dzf = dz;
  Parametrization p;
  p.n_source = n1;
  p.n_target = n2;
  p.value = [g, zf, bd, n1, n2](const VectorXd& q) {
    VectorXd zz = zf(q.head(idx(bd)));
    RelationPoint r = relation_point(g, zz, q.tail(q.size() - idx(bd)));
    VectorXd out(2 * (n1 + n2));
    out << r.x, r.xi, r.y, r.eta;
    return out;
  };
  p.jacobian = [g, zf, dzf, bd, n1, m, k](const VectorXd& q) {
    VectorXd pp = q.head(idx(bd)), s = q.tail(idx(k));
    VectorXd zz = zf(pp);
    MatrixXd d = dzf(pp);
    const auto& cons = g.base().constraints();
    MatrixXd h = g.twist().extension.hessian(zz);
    MatrixXd jt = MatrixXd::Zero(idx(m), idx(k));
    for (std::size_t i = 0; i < k; ++i) {
      h += s[idx(i)] * cons[i].hessian(zz);
      jt.col(idx(i)) = cons[i].gradient(zz);
    }
    // ambient (z, c) with c the conormal covector
    MatrixXd amb = MatrixXd::Zero(idx(2 * m), idx(m));
    amb.block(0, 0, idx(m), idx(bd)) = d;
    amb.block(idx(m), 0, idx(m), idx(bd)) = h * d;
    amb.block(idx(m), idx(bd), idx(m), idx(k)) = jt;
    MatrixXd out(idx(2 * m), idx(m));
    const Index a = idx(n1), b = idx(m - n1);
    out.middleRows(0, a) = amb.middleRows(0, a);
    out.middleRows(a, a) = -amb.middleRows(idx(m), a);
    out.middleRows(2 * a, b) = amb.middleRows(a, b);
    out.middleRows(2 * a + b, b) = amb.middleRows(idx(m) + a, b);
    return out;
  };
  return p;
}

double ConormalChart::leray(const Eigen::VectorXd& p) const {
  VectorXd zz = z(p);
  MatrixXd j = gamma.base().jacobian(zz);
  if (j.rows() == 0) return abs_det(dz(p));
  MatrixXd sq(j.cols(), j.cols());
  sq << dz(p), j.transpose();
  return abs_det(sq) / abs_det(j * j.transpose());
}

ConormalChart graph_chart(const CanonicalRelation& gamma) {
  if (!gamma.graph()) throw PreconditionError("graph_chart needs a graph relation");
  const GraphSubmanifold g = *gamma.graph();
  ConormalChart c;
  c.gamma = gamma;
  c.base_dim = g.domain().dim();
  c.z = [g](const VectorXd& x) { return g.point(x); };
  c.dz = [g](const VectorXd& x) {
    const Index n1 = x.size();
    MatrixXd jac = g.map().jacobian(x);
    MatrixXd d(n1 + jac.rows(), n1);
    d << MatrixXd::Identity(n1, n1), jac;
    return d;
  };
  return c;
}

ConormalChart tangent_chart(const CanonicalRelation& gamma, const Eigen::VectorXd& z0) {
  const ConstraintSubmanifold& base = gamma.base();
  if (!base.contains(z0)) throw PreconditionError("tangent_chart base point is not on Z");
  base.require_independent(z0);
  const MatrixXd t = base.tangent_space(z0);
  const MatrixXd j0t = base.jacobian(z0).transpose();
  ConormalChart c;
  c.gamma = gamma;
  c.base_dim = static_cast<std::size_t>(t.cols());
  c.z = [base, z0, t, j0t](const VectorXd& p) {
    VectorXd lin = z0 + t * p;
    VectorXd cc = VectorXd::Zero(j0t.cols());
    for (int it = 0; it < 50; ++it) {
      VectorXd zz = lin + j0t * cc;
      VectorXd r = base.residuals(zz);
      if (r.size() == 0 || r.cwiseAbs().maxCoeff() < 1e-14) return zz;
      cc -= (base.jacobian(zz) * j0t).fullPivLu().solve(r);
    }
    VectorXd zz = lin + j0t * cc;
    if (!base.contains(zz)) throw FiberSolveFailed("tangent chart point did not converge onto Z");
    return zz;
  };
  auto zf = c.z;
  c.dz = [base, t, j0t, zf](const VectorXd& p) {
    MatrixXd j = base.jacobian(zf(p));
    if (j.rows() == 0) return MatrixXd(t);
    MatrixXd dc = -(j * j0t).fullPivLu().solve(j * t);
    return MatrixXd(t + j0t * dc);
  };
  return c;
}

// ---------------------------------------------------------------------------

double HalfDensity::evaluate(const Eigen::VectorXd& p, const Eigen::MatrixXd& vectors) const {
  const Index n = idx(param.dim());
  if (vectors.cols() != n || vectors.rows() != 2 * n) throw DimensionMismatch("half-density needs N tangent vectors");
  MatrixXd jac = param.jacobian(p);
  MatrixXd alpha = jac.colPivHouseholderQr().solve(vectors);
  double res = max_abs(MatrixXd(jac * alpha - vectors));
  if (res > 1e-8 * (1.0 + max_abs(vectors))) throw PreconditionError("vectors are not tangent to the relation");
  return coeff(p) * std::sqrt(abs_det(alpha));
}

HalfDensity reparametrize(const HalfDensity& rho, const CoordinateChange& change) {
  HalfDensity out;
  out.param.n_source = rho.param.n_source;
  out.param.n_target = rho.param.n_target;
  auto pv = rho.param.value;
  auto pj = rho.param.jacobian;
  auto coeff = rho.coeff;
  out.param.value = [pv, change](const VectorXd& q) { return pv(change.value(q)); };
  out.param.jacobian = [pj, change](const VectorXd& q) { return MatrixXd(pj(change.value(q)) * change.jacobian(q)); };
  out.coeff = [coeff, change](const VectorXd& q) { return coeff(change.value(q)) * std::sqrt(abs_det(change.jacobian(q))); };
  return out;
}

double symbol_normalization(std::size_t n_product, std::size_t k) {
  return std::pow(2.0 * std::numbers::pi, static_cast<double>(n_product + 2 * k) / 4.0);
}

double amplitude_value(const Amplitude& a, const std::vector<std::string>& vars, const Eigen::VectorXd& point) {
  double v = a.expr.rebind(vars).eval(point);
  for (std::size_t i = 0; i < vars.size() && v != 0.0; ++i) v *= a.cutoff(vars[i], point[idx(i)]);
  return v;
}

SymbolSection symbol_of(const Amplitude& a, const HormanderDescription& desc, const ConormalChart& chart,
                        const std::vector<Eigen::VectorXd>& samples) {
  const CanonicalRelation& gamma = chart.gamma;
  const std::size_t k = gamma.fiber_dim();
  if (desc.fiber_dim != k || desc.base_patch.coords() != gamma.product().coords())
    throw DimensionMismatch("description does not match the relation");
  std::vector<std::pair<VectorXd, VectorXd>> pts;
  for (const auto& q : samples) pts.emplace_back(chart.z(chart.base_part(q)), chart.fiber_part(q));
  TransversalityReport tr = transversality_check(desc, pts);
  if (!tr.all_full) throw NotTransverse("the description is not transversal at a sampled point");
  std::optional<cplx> maslov;
  for (const auto& [x, s] : pts) {
    cplx m = maslov_section(desc, x, s);
    if (maslov && *maslov != m) throw PreconditionError("Maslov factor changes across the samples");
    maslov = m;
  }

  std::vector<std::string> vars = desc.all_vars();
  vars.push_back("hbar");
  const double norm = symbol_normalization(gamma.product().dim(), k);
  SymbolSection out;
  out.maslov = maslov.value_or(cplx(1.0, 0.0));
  out.density.param = chart.parametrization();
  ConormalChart c = chart;
  out.density.coeff = [a, c, vars, norm](const VectorXd& q) {
    VectorXd p = c.base_part(q);
    VectorXd zz = c.z(p), s = c.fiber_part(q);
    VectorXd point(zz.size() + s.size() + 1);
    point << zz, s, 0.0;
    return norm * std::sqrt(c.leray(p)) * amplitude_value(a, vars, point);
  };
  return out;
}

// ---------------------------------------------------------------------------

HalfDensityComposition compose_half_densities(const HalfDensity& rho1, const Eigen::VectorXd& p1,
                                              const HalfDensity& rho2, const Eigen::VectorXd& p2,
                                              const Parametrization& composite, const Eigen::VectorXd& q,
                                              CounterRng rng, double tol) {
  const std::size_t n1 = rho1.param.n_source, n2 = rho1.param.n_target, n3 = rho2.param.n_target;
  if (rho2.param.n_source != n2 || composite.n_source != n1 || composite.n_target != n3)
    throw DimensionMismatch("half-densities do not compose");
  const Index N1 = idx(n1 + n2), N2 = idx(n2 + n3), Nc = idx(n1 + n3), m2 = idx(2 * n2);

  VectorXd v1 = rho1.param.value(p1), v2 = rho2.param.value(p2), vc = composite.value(q);
  double mid = max_abs(VectorXd(v1.segment(idx(2 * n1), m2) - v2.head(m2)));
  double outer = std::max(max_abs(VectorXd(vc.head(idx(2 * n1)) - v1.head(idx(2 * n1)))),
                          max_abs(VectorXd(vc.tail(idx(2 * n3)) - v2.tail(idx(2 * n3)))));
  if (mid > tol || outer > tol)
    throw PreconditionError("points do not form a composed point (middle " + format_double(mid) + ", outer " +
                            format_double(outer) + ")");

  MatrixXd j1 = rho1.param.jacobian(p1), j2 = rho2.param.jacobian(p2), jc = composite.jacobian(q);
  MatrixXd delta(m2, N1 + N2);
  delta << -target_rows(j1, n1, n2), source_rows(j2, n2);
  MatrixXd outer_map = MatrixXd::Zero(idx(2 * (n1 + n3)), N1 + N2);
  outer_map.topLeftCorner(idx(2 * n1), N1) = source_rows(j1, n1);
  outer_map.bottomRightCorner(idx(2 * n3), N2) = target_rows(j2, n2, n3);

  HalfDensityComposition out;
  out.delta_rank = numerical_rank(delta).rank;
  if (out.delta_rank != m2) throw NotTransverse("the difference map is not onto T(T*X2)");
  MatrixXd ker = null_space(delta);
  out.kernel_dim = static_cast<int>(ker.cols());
  if (numerical_rank(MatrixXd(outer_map * ker)).rank != ker.cols())
    throw NotTransverse("the composition has positive-dimensional fibers");

  MatrixXd r;
  do {
    r = random_matrix(rng, Nc, Nc);
  } while (condition(r) < 1e-3);
  MatrixXd b = jc * r;

  MatrixXd sys(outer_map.rows() + m2, N1 + N2);
  sys << outer_map, delta;
  MatrixXd lift(N1 + N2, Nc);
  for (Index c = 0; c < Nc; ++c) {
    VectorXd rhs = VectorXd::Zero(sys.rows());
    rhs.head(outer_map.rows()) = b.col(c);
    lift.col(c) = lstsq(sys, rhs);
    VectorXd resid = sys * lift.col(c) - rhs;
    out.lift_residual = std::max(out.lift_residual, max_abs(resid) / (1.0 + max_abs(VectorXd(b.col(c)))));
  }
  if (out.lift_residual > 1e-8) throw NotTransverse("composite tangent vectors do not lift to the star set");

  MatrixXd w = random_matrix(rng, N1 + N2, m2);
  MatrixXd dw = delta * w;
  out.delta_condition = condition(dw);
  if (out.delta_condition < 1e-10) throw DegenerateChoice("delta(w) is singular for the sampled w");
  MatrixXd full(N1 + N2, N1 + N2);
  full << lift, w;

  out.value = rho1.coeff(p1) * rho2.coeff(p2) * std::sqrt(abs_det(full)) / std::sqrt(abs_det(dw)) /
              std::sqrt(abs_det(r));
  return out;
}

ChainLift graph_chain_lift(const CanonicalRelation& first, const CanonicalRelation& second) {
  if (!first.graph() || !second.graph()) throw PreconditionError("graph_chain_lift needs two graph relations");
  const GraphSubmanifold g1 = *first.graph(), g2 = *second.graph();
  const ScalarExpr f2 = *second.graph_twist();
  const Index n1 = idx(g1.domain().dim());
  return [g1, g2, f2, n1](const VectorXd& q) {
    VectorXd x1 = q.head(n1), t = q.tail(q.size() - n1);
    VectorXd x2 = g1.map().eval(x1);
    VectorXd s = g2.map().jacobian(x2).transpose() * t - f2.gradient(x2);
    ChainPoints c;
    c.p1.resize(n1 + s.size());
    c.p1 << x1, s;
    c.p2.resize(x2.size() + t.size());
    c.p2 << x2, t;
    return c;
  };
}

SymbolSection compose_symbols(const SymbolSection& s1, const SymbolSection& s2, const Parametrization& composite,
                              ChainLift lift, CounterRng rng) {
  SymbolSection out;
  out.maslov = s1.maslov * s2.maslov;
  out.density.param = composite;
  HalfDensity r1 = s1.density, r2 = s2.density;
  out.density.coeff = [r1, r2, composite, lift, rng](const VectorXd& q) {
    ChainPoints c = lift(q);
    return compose_half_densities(r1, c.p1, r2, c.p2, composite, q, rng).value;
  };
  return out;
}

// ---------------------------------------------------------------------------

StationaryPhaseSample stationary_phase_coefficient(const DiscretizedFIO& kernel, const CanonicalRelation& graph,
                                                   const Eigen::VectorXd& t0) {
  if (!graph.graph()) throw PreconditionError("stationary phase extraction needs a graph relation");
  if (kernel.source.size() != 1) throw PreconditionError("the source grid must be the single node x*");
  const std::size_t n1 = graph.n_source(), n3 = graph.n_target();
  if (kernel.target.dim() != n3 || static_cast<std::size_t>(t0.size()) != n3)
    throw DimensionMismatch("covector does not match the target");
  const VectorXd xs = kernel.source.node(0);
  const VectorXd gx = graph.graph()->map().eval(xs);
  const double h = kernel.hbar;
  cplx acc = 0.0;
  for (std::size_t j = 0; j < kernel.target.size(); ++j) {
    VectorXd y = kernel.target.node(j);
    acc += kernel.kernel(idx(j), 0) * std::polar(1.0, -t0.dot(y - gx) / h);
  }
  acc *= kernel.target.cell_volume();
  StationaryPhaseSample out;
  out.hbar = h;
  const double scale = std::pow(2.0 * std::numbers::pi, static_cast<double>(n3)) *
                       std::pow(h, kernel.order_m.to_double());
  out.modulus = std::abs(acc) / scale * symbol_normalization(n1 + n3, n3);
  if (std::abs(acc) > 0.0) out.unit_factor = acc / std::abs(acc) * std::polar(1.0, -graph.graph_twist()->eval(xs) / h);
  return out;
}

StationaryPhaseFit stationary_phase_leading(const std::vector<DiscretizedFIO>& kernels, const CanonicalRelation& graph,
                                            const Eigen::VectorXd& t0, double fit_tol) {
  if (kernels.size() < 2) throw PreconditionError("stationary phase fit needs at least two hbar values");
  StationaryPhaseFit fit;
  for (const auto& k : kernels) fit.samples.push_back(stationary_phase_coefficient(k, graph, t0));
  const Index n = idx(fit.samples.size());
  MatrixXd a(n, 2);
  VectorXd b(n);
  for (Index i = 0; i < n; ++i) {
    a(i, 0) = 1.0;
    a(i, 1) = fit.samples[static_cast<std::size_t>(i)].hbar;
    b[i] = fit.samples[static_cast<std::size_t>(i)].modulus;
  }
  if (b.cwiseAbs().maxCoeff() == 0.0) {
    fit.drift.assign(fit.samples.size(), 0.0);
    return fit;
  }
  VectorXd c = lstsq(a, b);
  fit.c0 = c[0];
  fit.c1 = c[1];
  fit.leading = std::abs(c[0]);
  if (fit.leading == 0.0) throw FitFailed("leading coefficient vanishes while samples do not");
  fit.fit_residual = (a * c - b).cwiseAbs().maxCoeff() / fit.leading;
  for (const auto& s : fit.samples) fit.drift.push_back(std::abs(s.modulus - fit.c0) / fit.leading);
  if (fit.fit_residual > fit_tol)
    throw FitFailed("linear fit in hbar leaves relative residual " + format_double(fit.fit_residual));
  return fit;
}

void write_symbol_csv(std::ostream& os, const SymbolSection& sigma, const std::vector<std::string>& param_names,
                      const std::vector<Eigen::VectorXd>& points) {
  for (const auto& n : param_names) os << n << ',';
  os << "coefficient,maslov_re,maslov_im\n";
  for (const auto& p : points) {
    for (Index i = 0; i < p.size(); ++i) os << format_double(p[i]) << ',';
    os << format_double(sigma.density.coeff(p)) << ',' << format_double(sigma.maslov.real()) << ','
       << format_double(sigma.maslov.imag()) << '\n';
  }
}

}  // namespace conormal
