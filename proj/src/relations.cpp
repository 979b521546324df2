#include "conormal/relations.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

#include "conormal/error.hpp"
#include "conormal/linalg.hpp"
#include "conormal/quadrature.hpp"

namespace conormal {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index idx(std::size_t n) { return static_cast<Index>(n); }

double max_abs(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }
double max_abs(const MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

void require_same_patch(const EuclideanPatch& a, const EuclideanPatch& b, const char* what) {
  if (a.coords() != b.coords())
    throw DimensionMismatch(std::string(what) + ": patch '" + a.name() + "' does not match patch '" + b.name() + "'");
}

VectorXd stack(const VectorXd& a, const VectorXd& b) {
  VectorXd out(a.size() + b.size());
  out << a, b;
  return out;
}

VectorXd stack(const VectorXd& a, const VectorXd& b, const VectorXd& c) {
  VectorXd out(a.size() + b.size() + c.size());
  out << a, b, c;
  return out;
}

VectorXd uniform_vector(CounterRng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  VectorXd v(idx(n));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

EuclideanPatch triple_patch(const EuclideanPatch& a, const EuclideanPatch& b, const EuclideanPatch& c) {
  return EuclideanPatch::product(EuclideanPatch::product(a, b), c);
}

std::vector<ScalarExpr> rebind_all(const std::vector<ScalarExpr>& exprs, const std::vector<std::string>& vars) {
  std::vector<ScalarExpr> out;
  out.reserve(exprs.size());
  for (const auto& e : exprs) out.push_back(e.rebind(vars));
  return out;
}

// Shared machinery for Gamma2 o Gamma1 over X1 x X2 x X3.
struct ChainData {
  CanonicalRelation first, second;
  std::size_t n1 = 0, n2 = 0, n3 = 0, k1 = 0, k2 = 0;
  EuclideanPatch triple;
  ConstraintSubmanifold fiber_product;
  std::vector<ScalarExpr> u, v;  // over the triple coordinates

  ChainData(const CanonicalRelation& a, const CanonicalRelation& b) : first(a), second(b) {
    require_same_patch(a.target(), b.source(), "composition");
    n1 = a.n_source();
    n2 = a.n_target();
    n3 = b.n_target();
    k1 = a.fiber_dim();
    k2 = b.fiber_dim();
    triple = triple_patch(a.source(), a.target(), b.target());
    u = rebind_all(a.base().constraints(), triple.coords());
    v = rebind_all(b.base().constraints(), triple.coords());
    std::vector<ScalarExpr> all = u;
    all.insert(all.end(), v.begin(), v.end());
    fiber_product = ConstraintSubmanifold(triple, std::move(all));
  }

  VectorXd x12(const VectorXd& x1, const VectorXd& x2) const { return stack(x1, x2); }
  VectorXd x23(const VectorXd& x2, const VectorXd& x3) const { return stack(x2, x3); }

  // Pieces of the fiber equations at (x1, x2, x3).
  struct Local {
    MatrixXd j1, j2;  // k1 x (n1+n2), k2 x (n2+n3)
    VectorXd g1, g2;  // twist gradients
  };

  Local local(const VectorXd& x1, const VectorXd& x2, const VectorXd& x3) const {
    Local l;
    VectorXd a = x12(x1, x2), b = x23(x2, x3);
    l.j1 = first.base().jacobian(a);
    l.j2 = second.base().jacobian(b);
    l.g1 = first.twist().differential(a);
    l.g2 = second.twist().differential(b);
    return l;
  }

  // Middle condition A (s; t) = b.
  void middle_system(const Local& l, MatrixXd& a, VectorXd& b) const {
    a.resize(idx(n2), idx(k1 + k2));
    if (k1 > 0) a.leftCols(idx(k1)) = l.j1.middleCols(idx(n1), idx(n2)).transpose();
    if (k2 > 0) a.rightCols(idx(k2)) = l.j2.leftCols(idx(n2)).transpose();
    b = -(l.g1.tail(idx(n2)) + l.g2.head(idx(n2)));
  }

  // Full system: outer covectors prescribed as well.
  void full_system(const Local& l, const VectorXd& xi1, const VectorXd& xi3, MatrixXd& m, VectorXd& rhs) const {
    m = MatrixXd::Zero(idx(n1 + n2 + n3), idx(k1 + k2));
    rhs.resize(idx(n1 + n2 + n3));
    if (k1 > 0) {
      m.block(0, 0, idx(n1), idx(k1)) = l.j1.leftCols(idx(n1)).transpose();
      m.block(idx(n1), 0, idx(n2), idx(k1)) = l.j1.middleCols(idx(n1), idx(n2)).transpose();
    }
    if (k2 > 0) {
      m.block(idx(n1), idx(k1), idx(n2), idx(k2)) = l.j2.leftCols(idx(n2)).transpose();
      m.block(idx(n1 + n2), idx(k1), idx(n3), idx(k2)) = l.j2.rightCols(idx(n3)).transpose();
    }
    rhs.head(idx(n1)) = -xi1 - l.g1.head(idx(n1));
    rhs.segment(idx(n1), idx(n2)) = -(l.g1.tail(idx(n2)) + l.g2.head(idx(n2)));
    rhs.tail(idx(n3)) = xi3 - l.g2.tail(idx(n3));
  }

  static double solve(const MatrixXd& a, const VectorXd& b, VectorXd& sol) {
    if (a.cols() == 0) {
      sol.resize(0);
      return max_abs(b);
    }
    sol = lstsq(a, b);
    return max_abs(VectorXd(a * sol - b));
  }

  static MatrixXd kernel(const MatrixXd& a) {
    if (a.cols() == 0) return MatrixXd(0, 0);
    if (a.rows() == 0) return MatrixXd::Identity(a.cols(), a.cols());
    return null_space(a);
  }

  // Points x2 with (x1, x2) in Z1 and (x2, x3) in Z2, by multi-start Newton.
  std::vector<VectorXd> middle_points(const VectorXd& x1, const VectorXd& x3, const std::vector<VectorXd>& starts) const {
    const auto& c1 = first.source().coords();
    const auto& c2 = first.target().coords();
    const auto& c3 = second.target().coords();
    std::vector<std::pair<std::string, double>> fixed;
    for (std::size_t i = 0; i < n1; ++i) fixed.emplace_back(c1[i], x1[idx(i)]);
    for (std::size_t i = 0; i < n3; ++i) fixed.emplace_back(c3[i], x3[idx(i)]);
    std::vector<ScalarExpr> cons;
    for (const auto& e : fiber_product.constraints()) cons.push_back(e.fix(fixed).rebind(c2));
    std::vector<VectorXd> found;
    for (const auto& s : starts) {
      auto p = solve_equations(cons, s);
      if (!p || !first.target().in_box(*p)) continue;
      bool dup = false;
      for (const auto& q : found)
        if ((q - *p).cwiseAbs().maxCoeff() < 1e-8) dup = true;
      if (!dup) found.push_back(*p);
    }
    return found;
  }

  std::vector<VectorXd> make_starts(CounterRng& rng, std::size_t count) const {
    std::vector<VectorXd> starts;
    for (std::size_t i = 0; i < count; ++i) starts.push_back(first.target().random_point(rng));
    return starts;
  }
};

// Middle-factor rows of a relation tangent basis (x, xi, y, eta).
MatrixXd rows_of(const MatrixXd& b, Index start, Index count) { return b.middleRows(start, count); }

}  // namespace

// ---------------------------------------------------------------------------

CanonicalRelation::CanonicalRelation(EuclideanPatch source, EuclideanPatch target, ConstraintSubmanifold base,
                                     ScalarExpr twist)
    : source_(std::move(source)), target_(std::move(target)), base_(std::move(base)) {
  auto expected = concat_vars(source_.coords(), target_.coords());
  if (base_.ambient().coords() != expected)
    throw DimensionMismatch("relation base must live on " + source_.name() + " x " + target_.name());
  twist_.extension = twist.rebind(expected);
}

CanonicalRelation CanonicalRelation::from_graph(const GraphSubmanifold& graph, const ScalarExpr& twist_on_domain) {
  ConstraintSubmanifold z = graph.to_constraints();
  CanonicalRelation r(graph.domain(), graph.codomain(), z, twist_on_domain.rebind(z.ambient().coords()));
  r.graph_ = graph;
  r.graph_twist_ = twist_on_domain.rebind(graph.domain().coords());
  r.declared_simply_connected = true;
  return r;
}

CanonicalRelation CanonicalRelation::exact(const EuclideanPatch& source, const EuclideanPatch& target,
                                           const ScalarExpr& f) {
  EuclideanPatch prod = EuclideanPatch::product(source, target);
  CanonicalRelation r(source, target, ConstraintSubmanifold(prod, {}), f.rebind(prod.coords()));
  r.declared_simply_connected = true;
  return r;
}

CanonicalRelation CanonicalRelation::point_factor(const EuclideanPatch& source, const EuclideanPatch& target,
                                                  const Eigen::VectorXd& star, bool star_on_target,
                                                  const ScalarExpr& f) {
  const EuclideanPatch& side = star_on_target ? target : source;
  if (static_cast<std::size_t>(star.size()) != side.dim())
    throw DimensionMismatch("distinguished point has the wrong dimension");
  EuclideanPatch prod = EuclideanPatch::product(source, target);
  std::vector<ScalarExpr> cons;
  for (std::size_t i = 0; i < side.dim(); ++i)
    cons.push_back(ScalarExpr::variable(side.coords()[i], prod.coords()) + (-star[idx(i)]));
  CanonicalRelation r(source, target, ConstraintSubmanifold(prod, std::move(cons)), f.rebind(prod.coords()));
  r.star_ = star;
  r.star_on_target_ = star_on_target;
  r.declared_simply_connected = true;
  return r;
}

Eigen::VectorXd RelationPoint::base() const { return stack(x, y); }

RelationPoint relation_point(const CanonicalRelation& gamma, const Eigen::VectorXd& z, const Eigen::VectorXd& s) {
  CotangentPoint cp = conormal_point(gamma.base(), gamma.twist(), z, s);
  const Index n1 = idx(gamma.n_source()), n2 = idx(gamma.n_target());
  RelationPoint p;
  p.x = cp.base.head(n1);
  p.y = cp.base.tail(n2);
  p.xi = -cp.covector.head(n1);
  p.eta = cp.covector.tail(n2);
  return p;
}

Membership member(const CanonicalRelation& gamma, const RelationPoint& p, double tol) {
  if (static_cast<std::size_t>(p.x.size()) != gamma.n_source() || p.xi.size() != p.x.size() ||
      static_cast<std::size_t>(p.y.size()) != gamma.n_target() || p.eta.size() != p.y.size())
    throw DimensionMismatch("relation point has the wrong dimensions");
  Membership m;
  VectorXd z = p.base();
  m.base_residual = gamma.base().contains(z, tol).residual;
  VectorXd c = stack(VectorXd(-p.xi), p.eta) - gamma.twist().differential(z);
  MatrixXd t = gamma.base().tangent_space(z);
  m.covector_residual = max_abs(VectorXd(t.transpose() * c));
  m.inside = m.base_residual <= tol && m.covector_residual <= tol;
  return m;
}

Eigen::MatrixXd conormal_tangent_basis(const ConstraintSubmanifold& z, const TwistFunction& f,
                                       const Eigen::VectorXd& x, const Eigen::VectorXd& s,
                                       const ScalarExpr* covector_scale) {
  const Index m = idx(z.ambient().dim());
  const Index k = idx(z.codim());
  if (s.size() != k) throw DimensionMismatch("fiber coordinates must have length codim(Z)");
  MatrixXd t = z.tangent_space(x);
  MatrixXd j = z.jacobian(x);
  MatrixXd h = f.extension.hessian(x);
  for (Index i = 0; i < k; ++i) h += s[i] * z.constraints()[static_cast<std::size_t>(i)].hessian(x);
  VectorXd w = f.differential(x);
  if (k > 0) w += j.transpose() * s;
  double c = 1.0;
  VectorXd dc = VectorXd::Zero(m);
  if (covector_scale) {
    c = covector_scale->eval(x);
    dc = covector_scale->gradient(x);
  }
  MatrixXd basis = MatrixXd::Zero(2 * m, m);
  for (Index a = 0; a < t.cols(); ++a) {
    VectorXd v = t.col(a);
    basis.col(a).head(m) = v;
    basis.col(a).tail(m) = c * (h * v) + dc.dot(v) * w;
  }
  for (Index i = 0; i < k; ++i) basis.col(t.cols() + i).tail(m) = c * j.row(i).transpose();
  return basis;
}

double symplectic_residual(const Eigen::MatrixXd& basis) {
  const Index m = basis.rows() / 2;
  MatrixXd x = basis.topRows(m), xi = basis.bottomRows(m);
  MatrixXd omega = xi.transpose() * x - x.transpose() * xi;
  return max_abs(omega);
}

LagrangianCheck lagrangian_residual(const CanonicalRelation& gamma, const Eigen::VectorXd& z,
                                    const Eigen::VectorXd& s, const ScalarExpr* covector_scale) {
  std::optional<ScalarExpr> scale;
  if (covector_scale) scale = covector_scale->rebind(gamma.product().coords());
  MatrixXd b = conormal_tangent_basis(gamma.base(), gamma.twist(), z, s, scale ? &*scale : nullptr);
  LagrangianCheck out;
  out.rank = numerical_rank(b).rank;
  const int want = static_cast<int>(gamma.n_source() + gamma.n_target());
  if (out.rank < want)
    throw RankDeficient("Lagrangian parametrization has rank " + std::to_string(out.rank) + " < " +
                        std::to_string(want));
  out.residual = symplectic_residual(b);
  return out;
}

Eigen::MatrixXd relation_tangent_basis(const CanonicalRelation& gamma, const Eigen::VectorXd& z,
                                       const Eigen::VectorXd& s) {
  MatrixXd b = conormal_tangent_basis(gamma.base(), gamma.twist(), z, s);
  const Index n1 = idx(gamma.n_source()), n2 = idx(gamma.n_target()), m = n1 + n2;
  MatrixXd out(2 * m, b.cols());
  out.topRows(n1) = b.topRows(n1);
  out.middleRows(n1, n1) = -b.middleRows(m, n1);
  out.middleRows(2 * n1, n2) = b.middleRows(n1, n2);
  out.bottomRows(n2) = b.bottomRows(n2);
  return out;
}

// ---------------------------------------------------------------------------

CanonicalRelation compose_graphs(const CanonicalRelation& first, const CanonicalRelation& second) {
  if (!first.graph() || !second.graph()) throw PreconditionError("compose_graphs needs two graph relations");
  require_same_patch(first.target(), second.source(), "compose_graphs");
  const GraphSubmanifold& g1 = *first.graph();
  const GraphSubmanifold& g2 = *second.graph();
  VectorExpr g = g2.map().compose(g1.map());
  ScalarExpr f = *first.graph_twist() + second.graph_twist()->substitute(g1.map().components());
  return CanonicalRelation::from_graph(GraphSubmanifold(g1.domain(), g2.codomain(), g), f);
}

CanonicalRelation compose_endpoint(const CanonicalRelation& first, const CanonicalRelation& second, double tol) {
  if (!first.star() || !first.star_on_target() || !second.star() || second.star_on_target())
    throw PreconditionError("compose_endpoint needs X1 x {*} followed by {*} x X3");
  require_same_patch(first.target(), second.source(), "compose_endpoint");
  const VectorXd& a = *first.star();
  const VectorXd& b = *second.star();
  if (max_abs(VectorXd(a - b)) > tol) throw PreconditionError("the distinguished points do not match");
  std::vector<std::pair<std::string, double>> at_star;
  for (std::size_t i = 0; i < first.n_target(); ++i) at_star.emplace_back(first.target().coords()[i], a[idx(i)]);
  auto coords = concat_vars(first.source().coords(), second.target().coords());
  ScalarExpr f1 = first.twist().extension.fix(at_star).rebind(coords);
  ScalarExpr f2 = second.twist().extension.fix(at_star).rebind(coords);
  return CanonicalRelation::exact(first.source(), second.target(), f1 + f2);
}

ExactComposition compose_exact_graphs(const CanonicalRelation& first, const CanonicalRelation& second, CounterRng rng,
                                      std::size_t samples, double tol) {
  if (first.fiber_dim() != 0 || second.fiber_dim() != 0)
    throw PreconditionError("compose_exact_graphs needs relations on all of X1 x X2 and X2 x X3");
  require_same_patch(first.target(), second.source(), "compose_exact_graphs");
  EuclideanPatch triple = triple_patch(first.source(), first.target(), second.target());
  ScalarExpr sum = first.twist().extension.rebind(triple.coords()) + second.twist().extension.rebind(triple.coords());
  const Index n1 = idx(first.n_source()), n2 = idx(first.n_target()), n3 = idx(second.n_target());

  ExactComposition out;
  std::vector<VectorXd> points;
  for (std::size_t i = 0; i < samples; ++i) {
    VectorXd w = triple.random_point(rng);
    double r = max_abs(VectorXd(sum.gradient(w).segment(n1, n2)));
    if (r > out.cancellation_residual) out.cancellation_residual = r;
    if (r > tol) {
      std::string where;
      for (Index j = 0; j < w.size(); ++j) where += (j ? ", " : "") + std::to_string(w[j]);
      throw CancellationFailed("d_2 f_1 + d_2 f_2 = " + std::to_string(r) + " at (" + where + ")");
    }
    points.push_back(w);
  }

  auto box = first.target().sampling_box();
  out.reference_x2.resize(n2);
  std::vector<std::pair<std::string, double>> at_ref;
  for (Index j = 0; j < n2; ++j) {
    out.reference_x2[j] = box[static_cast<std::size_t>(j)].center();
    at_ref.emplace_back(first.target().coords()[static_cast<std::size_t>(j)], out.reference_x2[j]);
  }
  auto coords = concat_vars(first.source().coords(), second.target().coords());
  ScalarExpr f = sum.fix(at_ref).rebind(coords);
  for (const auto& w : points) {
    VectorXd z = stack(VectorXd(w.head(n1)), VectorXd(w.tail(n3)));
    out.independence_residual = std::max(out.independence_residual, std::abs(sum.eval(w) - f.eval(z)));
  }
  out.relation = CanonicalRelation::exact(first.source(), second.target(), f);
  return out;
}

// ---------------------------------------------------------------------------

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Transverse: return "transverse";
    case Verdict::Clean: return "clean";
    case Verdict::Failed: return "failed";
  }
  return "failed";
}

CompositionReport verify_composition(const CanonicalRelation& first, const CanonicalRelation& second,
                                     const ConstraintSubmanifold& candidate_z,
                                     const std::optional<ScalarExpr>& candidate_f, CounterRng rng,
                                     const CompositionOptions& options) {
  ChainData chain(first, second);
  const std::size_t n1 = chain.n1, n2 = chain.n2, n3 = chain.n3, k1 = chain.k1, k2 = chain.k2;
  auto outer_coords = concat_vars(first.source().coords(), second.target().coords());
  if (candidate_z.ambient().coords() != outer_coords)
    throw DimensionMismatch("candidate Z must live on " + first.source().name() + " x " + second.target().name());

  CompositionReport rep;

  // (a) star points
  CounterRng star_rng = rng.split(1);
  const std::size_t max_attempts = 50 * options.samples + 100;
  for (std::size_t attempt = 0; attempt < max_attempts && rep.star_points.size() < options.samples; ++attempt) {
    auto w = chain.fiber_product.project(chain.triple.random_point(star_rng));
    if (!w || !chain.triple.in_box(*w)) continue;
    StarPoint sp;
    sp.x1 = w->head(idx(n1));
    sp.x2 = w->segment(idx(n1), idx(n2));
    sp.x3 = w->tail(idx(n3));
    auto loc = chain.local(sp.x1, sp.x2, sp.x3);
    MatrixXd a;
    VectorXd b, sol;
    chain.middle_system(loc, a, b);
    if (ChainData::solve(a, b, sol) > options.tol) continue;
    MatrixXd ker = ChainData::kernel(a);
    if (ker.cols() > 0) sol += ker * uniform_vector(star_rng, static_cast<std::size_t>(ker.cols()));
    sp.s = sol.head(idx(k1));
    sp.t = sol.tail(idx(k2));
    VectorXd lam1 = loc.g1, lam2 = loc.g2;
    if (k1 > 0) lam1 += loc.j1.transpose() * sp.s;
    if (k2 > 0) lam2 += loc.j2.transpose() * sp.t;
    sp.xi1 = -lam1.head(idx(n1));
    sp.xi2 = lam1.tail(idx(n2));
    sp.xi3 = lam2.tail(idx(n3));
    rep.star_points.push_back(sp);
  }
  if (rep.star_points.empty()) throw FiberSolveFailed("no point of Gamma2 * Gamma1 found in the sampling boxes");
  if (rep.star_points.size() < options.samples)
    rep.reasons.push_back("only " + std::to_string(rep.star_points.size()) + " star points found");

  // (b) tangent condition, fiber dimension, submersion rank
  std::vector<int> fiber_dims;
  for (const auto& sp : rep.star_points) {
    MatrixXd b1 = relation_tangent_basis(first, stack(sp.x1, sp.x2), sp.s);
    MatrixXd b2 = relation_tangent_basis(second, stack(sp.x2, sp.x3), sp.t);
    const Index d1 = b1.cols(), d2 = b2.cols();
    MatrixXd delta(idx(2 * n2), d1 + d2);
    delta.leftCols(d1) = -rows_of(b1, idx(2 * n1), idx(2 * n2));
    delta.rightCols(d2) = rows_of(b2, 0, idx(2 * n2));
    const int rank = numerical_rank(delta).rank;
    MatrixXd ker = null_space(delta);
    MatrixXd outer = MatrixXd::Zero(idx(2 * n1 + 2 * n3), ker.cols());
    outer.topRows(idx(2 * n1)) = rows_of(b1, 0, idx(2 * n1)) * ker.topRows(d1);
    outer.bottomRows(idx(2 * n3)) = rows_of(b2, idx(2 * n2), idx(2 * n3)) * ker.bottomRows(d2);
    const int outer_rank = numerical_rank(outer).rank;
    MatrixXd base_part(idx(n1 + n3), ker.cols());
    base_part.topRows(idx(n1)) = outer.topRows(idx(n1));
    base_part.bottomRows(idx(n3)) = outer.middleRows(idx(2 * n1), idx(n3));
    rep.tangent_condition_rank.push_back(rank);
    rep.kernel_dim.push_back(static_cast<int>(ker.cols()));
    rep.submersion_rank.push_back(numerical_rank(base_part).rank);
    fiber_dims.push_back(static_cast<int>(ker.cols()) - outer_rank);

    VectorXd w = stack(sp.x1, sp.x2, sp.x3);
    VectorXd g = first.twist().extension.rebind(chain.triple.coords()).gradient(w) +
                 second.twist().extension.rebind(chain.triple.coords()).gradient(w);
    rep.cancellation_residual = std::max(rep.cancellation_residual, max_abs(VectorXd(g.segment(idx(n1), idx(n2)))));
  }
  rep.fiber_dim_e = fiber_dims.front();
  auto constant = [](const std::vector<int>& v) { return std::all_of(v.begin(), v.end(), [&](int x) { return x == v[0]; }); };
  bool rank_constant = constant(rep.tangent_condition_rank) && constant(rep.kernel_dim) && constant(fiber_dims);
  bool transverse = std::all_of(rep.tangent_condition_rank.begin(), rep.tangent_condition_rank.end(),
                                [&](int r) { return r == static_cast<int>(2 * n2); });
  bool submersion = std::all_of(rep.submersion_rank.begin(), rep.submersion_rank.end(),
                                [&](int r) { return r == static_cast<int>(candidate_z.dim()); });

  // candidate twist
  ScalarExpr twist;
  if (candidate_f) {
    twist = candidate_f->rebind(outer_coords);
  } else {
    LagrangianFamily fam = LagrangianFamily::composite(first, second, candidate_z, options.starts);
    CounterRng fit_rng = rng.split(3);
    auto pts = candidate_z.sample(fit_rng, std::max<std::size_t>(options.samples, 40));
    std::vector<std::vector<VectorXd>> paths;
    for (std::size_t i = 1; i < pts.size(); ++i) paths.push_back({pts[0], pts[i]});
    auto rec = reconstruct_twist(fam, pts[0], paths, rng.split(4));
    std::vector<double> vals{0.0};
    for (const auto& p : rec.values) vals.push_back(p.back());
    twist = fit_polynomial(pts, vals, outer_coords, 4);
    rep.fitted_twist = twist;
    rep.twist_source = "reconstructed";
  }
  CanonicalRelation candidate(first.source(), second.target(), candidate_z, twist);

  // (d) subset: composite points lie on the candidate
  for (const auto& sp : rep.star_points) {
    RelationPoint p{sp.x1, sp.xi1, sp.x3, sp.xi3};
    rep.subset_residual = std::max(rep.subset_residual, member(candidate, p, options.tol).residual());
  }
  rep.subset_pass = rep.subset_residual <= options.tol;

  // (d) superset: candidate points are realized through some (x2, xi2)
  CounterRng cand_rng = rng.split(2);
  auto zs = candidate_z.sample(cand_rng, options.samples);
  auto starts = chain.make_starts(cand_rng, options.starts);
  for (const auto& z : zs) {
    RelationPoint p = relation_point(candidate, z, uniform_vector(cand_rng, candidate_z.codim()));
    auto mids = chain.middle_points(p.x, p.y, starts);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& x2 : mids) {
      auto loc = chain.local(p.x, x2, p.y);
      MatrixXd m;
      VectorXd rhs, sol;
      chain.full_system(loc, p.xi, p.eta, m, rhs);
      best = std::min(best, ChainData::solve(m, rhs, sol));
    }
    if (mids.empty()) ++rep.superset_unsolved;
    rep.superset_residual = std::max(rep.superset_residual, best);
  }
  rep.superset_pass = rep.superset_residual <= options.tol;

  if (!rank_constant) rep.reasons.push_back("rank of the tangent condition is not constant over the samples");
  if (!submersion) rep.reasons.push_back("projection of the composite to Z is not a submersion");
  if (!rep.subset_pass) rep.reasons.push_back("composite points off the candidate (residual " +
                                              std::to_string(rep.subset_residual) + ")");
  if (!rep.superset_pass) rep.reasons.push_back("candidate points not realized by the composite (residual " +
                                                std::to_string(rep.superset_residual) + ")");
  if (rep.superset_unsolved > 0)
    rep.reasons.push_back(std::to_string(rep.superset_unsolved) + " candidate points without a middle point");
  if (!rank_constant || !submersion || !rep.subset_pass || !rep.superset_pass)
    rep.verdict = Verdict::Failed;
  else
    rep.verdict = transverse ? Verdict::Transverse : Verdict::Clean;
  return rep;
}

// ---------------------------------------------------------------------------

LagrangianFamily LagrangianFamily::conormal(const ConstraintSubmanifold& z, const TwistFunction& f) {
  LagrangianFamily fam;
  fam.base = z;
  fam.fiber_dim = z.codim();
  fam.covector = [z, f](const VectorXd& x, const VectorXd& s) {
    VectorXd c = f.differential(x);
    if (s.size() > 0) c += z.jacobian(x).transpose() * s;
    return c;
  };
  fam.vertical = [z](const VectorXd& x, const VectorXd&) { return MatrixXd(z.jacobian(x).transpose()); };
  return fam;
}

LagrangianFamily LagrangianFamily::composite(const CanonicalRelation& first, const CanonicalRelation& second,
                                             const ConstraintSubmanifold& candidate_z, std::size_t starts) {
  auto chain = std::make_shared<const ChainData>(first, second);
  CounterRng rng(0x5eed);
  auto start_points = std::make_shared<const std::vector<VectorXd>>(chain->make_starts(rng, starts));
  auto centre = std::make_shared<VectorXd>(chain->n2);
  auto box = first.target().sampling_box();
  for (std::size_t i = 0; i < chain->n2; ++i) (*centre)[idx(i)] = box[i].center();

  // Minimum-norm fiber solution over z, and the kernel of the middle system.
  auto fiber = [chain, start_points, centre](const VectorXd& z, ChainData::Local& loc, VectorXd& sol, MatrixXd& ker) {
    VectorXd x1 = z.head(idx(chain->n1)), x3 = z.tail(idx(chain->n3));
    auto mids = chain->middle_points(x1, x3, *start_points);
    double best_dist = std::numeric_limits<double>::infinity();
    bool ok = false;
    for (const auto& x2 : mids) {
      auto l = chain->local(x1, x2, x3);
      MatrixXd a;
      VectorXd b, s;
      chain->middle_system(l, a, b);
      if (ChainData::solve(a, b, s) > 1e-9) continue;
      double d = (x2 - *centre).norm();
      if (d < best_dist) {
        best_dist = d;
        loc = l;
        sol = s;
        ker = ChainData::kernel(a);
        ok = true;
      }
    }
    if (!ok) throw FiberSolveFailed("no middle point over the requested point of Z");
  };

  LagrangianFamily fam;
  fam.base = candidate_z;
  fam.fiber_dim = 0;
  fam.covector = [chain, fiber](const VectorXd& z, const VectorXd&) {
    ChainData::Local loc;
    VectorXd sol;
    MatrixXd ker;
    fiber(z, loc, sol, ker);
    const Index n1 = idx(chain->n1), n3 = idx(chain->n3), k1 = idx(chain->k1), k2 = idx(chain->k2);
    VectorXd lam1 = loc.g1, lam2 = loc.g2;
    if (k1 > 0) lam1 += loc.j1.transpose() * sol.head(k1);
    if (k2 > 0) lam2 += loc.j2.transpose() * sol.tail(k2);
    return stack(VectorXd(lam1.head(n1)), VectorXd(lam2.tail(n3)));
  };
  fam.vertical = [chain, fiber](const VectorXd& z, const VectorXd&) {
    ChainData::Local loc;
    VectorXd sol;
    MatrixXd ker;
    fiber(z, loc, sol, ker);
    const Index n1 = idx(chain->n1), n3 = idx(chain->n3), k1 = idx(chain->k1), k2 = idx(chain->k2);
    MatrixXd out = MatrixXd::Zero(n1 + n3, ker.cols());
    if (ker.cols() == 0) return out;
    if (k1 > 0) out.topRows(n1) = loc.j1.leftCols(n1).transpose() * ker.topRows(k1);
    if (k2 > 0) out.bottomRows(n3) = loc.j2.rightCols(n3).transpose() * ker.bottomRows(k2);
    return out;
  };
  return fam;
}

TwistReconstruction reconstruct_twist(const LagrangianFamily& family, const Eigen::VectorXd& z0,
                                      const std::vector<std::vector<Eigen::VectorXd>>& paths, CounterRng rng,
                                      double horizontal_tol) {
  const ConstraintSubmanifold& z = family.base;
  if (!z.contains(z0)) throw PreconditionError("basepoint is not on Z");
  TwistReconstruction out;

  auto check_horizontal = [&](const VectorXd& x) {
    MatrixXd t = z.tangent_space(x);
    for (int draw = 0; draw < 2; ++draw) {
      MatrixXd v = family.vertical(x, uniform_vector(rng, family.fiber_dim));
      if (v.cols() == 0) continue;
      double r = max_abs(MatrixXd(v.transpose() * t));
      out.horizontality_residual = std::max(out.horizontality_residual, r);
      if (r > horizontal_tol)
        throw NotHorizontal("vertical vectors pair nontrivially with TZ (residual " + std::to_string(r) + ")");
    }
  };
  check_horizontal(z0);

  const VectorXd s0 = VectorXd::Zero(idx(family.fiber_dim));
  // Chord a -> b retracted to Z along a fixed normal frame N: p(t) = q(t) + N c(t) with u(p) = 0,
  // so p' = q' + N c' and c' = -(J(p) N)^{-1} J(p) q'.
  struct Retraction {
    VectorXd p, dp;
  };
  auto retract = [&](const VectorXd& a, const VectorXd& b, const MatrixXd& n, VectorXd& c, double t) {
    const VectorXd dq = b - a;
    const VectorXd q = a + t * dq;
    Retraction r;
    if (n.cols() == 0) return Retraction{q, dq};
    for (int it = 0; it < kNewtonMaxIter; ++it) {
      VectorXd p = q + n * c;
      VectorXd res = z.residuals(p);
      MatrixXd jn = z.jacobian(p) * n;
      VectorXd step = jn.fullPivLu().solve(res);
      c -= step;
      if (max_abs(res) < 1e-15 || max_abs(step) < 1e-15) break;
    }
    r.p = q + n * c;
    if (max_abs(z.residuals(r.p)) > 1e-10) throw PreconditionError("path leaves Z and cannot be retracted back");
    MatrixXd jp = z.jacobian(r.p);
    r.dp = dq - n * (jp * n).fullPivLu().solve(jp * dq);
    return r;
  };

  for (const auto& path : paths) {
    if (path.empty() || max_abs(VectorXd(path.front() - z0)) > kMembershipTol)
      throw PreconditionError("every path must start at the basepoint");
    std::vector<double> vals{0.0};
    double acc = 0.0;
    for (std::size_t i = 1; i < path.size(); ++i) {
      const VectorXd& a = path[i - 1];
      const VectorXd& b = path[i];
      if (!z.contains(b)) throw PreconditionError("path vertex is not on Z");
      check_horizontal(b);
      const MatrixXd frame =
          z.codim() == 0 ? MatrixXd(idx(z.ambient().dim()), 0) : MatrixXd(z.jacobian(0.5 * (a + b)).transpose());
      auto integrand = [&](double t) {
        VectorXd c = VectorXd::Zero(frame.cols());
        Retraction r = retract(a, b, frame, c, t);
        return family.covector(r.p, s0).dot(r.dp);
      };
      acc += integrate_adaptive(integrand, 0.0, 1.0, 1e-13, 1e-12).value;
      vals.push_back(acc);
    }
    out.values.push_back(std::move(vals));
  }

  for (std::size_t i = 0; i < paths.size(); ++i)
    for (std::size_t j = i + 1; j < paths.size(); ++j)
      if (max_abs(VectorXd(paths[i].back() - paths[j].back())) <= 1e-12)
        out.holonomy = std::max(out.holonomy, std::abs(out.values[i].back() - out.values[j].back()));
  return out;
}

ScalarExpr fit_polynomial(const std::vector<Eigen::VectorXd>& points, const std::vector<double>& values,
                          const std::vector<std::string>& vars, int degree) {
  if (points.size() != values.size() || points.empty()) throw PreconditionError("fit_polynomial: bad sample set");
  const std::size_t n = vars.size();
  std::vector<std::vector<int>> monomials;
  std::vector<int> cur(n, 0);
  std::function<void(std::size_t, int)> gen = [&](std::size_t var, int left) {
    if (var == n) {
      monomials.push_back(cur);
      return;
    }
    for (int p = 0; p <= left; ++p) {
      cur[var] = p;
      gen(var + 1, left - p);
    }
    cur[var] = 0;
  };
  gen(0, degree);

  MatrixXd a(idx(points.size()), idx(monomials.size()));
  VectorXd b(idx(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    b[idx(i)] = values[i];
    for (std::size_t j = 0; j < monomials.size(); ++j) {
      double v = 1.0;
      for (std::size_t d = 0; d < n; ++d) v *= std::pow(points[i][idx(d)], monomials[j][d]);
      a(idx(i), idx(j)) = v;
    }
  }
  VectorXd c = lstsq(a, b);
  std::string text = "0";
  char buf[64];
  for (std::size_t j = 0; j < monomials.size(); ++j) {
    if (c[idx(j)] == 0.0) continue;
    std::snprintf(buf, sizeof buf, "%.17g", c[idx(j)]);
    text += " + (" + std::string(buf) + ")";
    for (std::size_t d = 0; d < n; ++d)
      if (monomials[j][d] > 0) text += "*" + vars[d] + "^" + std::to_string(monomials[j][d]);
  }
  return ScalarExpr::parse(text, vars);
}

}  // namespace conormal
