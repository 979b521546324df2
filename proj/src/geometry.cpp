#include "conormal/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "conormal/error.hpp"
#include "conormal/linalg.hpp"

namespace conormal {

EuclideanPatch::EuclideanPatch(std::string name, std::vector<std::string> coords,
                               std::optional<std::vector<Interval>> box)
    : name_(std::move(name)), coords_(std::move(coords)), box_(std::move(box)) {
  if (coords_.empty()) throw PreconditionError("patch '" + name_ + "' must have dimension >= 1");
  if (box_) {
    if (box_->size() != coords_.size())
      throw DimensionMismatch("patch '" + name_ + "': box has " + std::to_string(box_->size()) +
                              " intervals for " + std::to_string(coords_.size()) + " coordinates");
    for (const auto& iv : *box_)
      if (!(iv.lo <= iv.hi)) throw PreconditionError("patch '" + name_ + "': empty box interval");
  }
}

EuclideanPatch EuclideanPatch::product(const EuclideanPatch& a, const EuclideanPatch& b) {
  std::optional<std::vector<Interval>> box;
  if (a.box_ || b.box_) {
    box = a.sampling_box();
    auto bb = b.sampling_box();
    box->insert(box->end(), bb.begin(), bb.end());
  }
  return EuclideanPatch(a.name_ + "x" + b.name_, concat_vars(a.coords_, b.coords_), box);
}

std::vector<Interval> EuclideanPatch::sampling_box() const {
  if (box_) return *box_;
  return std::vector<Interval>(coords_.size(), Interval{-1.0, 1.0});
}

bool EuclideanPatch::in_box(const Eigen::VectorXd& x) const {
  if (!box_) return true;
  for (std::size_t i = 0; i < coords_.size(); ++i) {
    double v = x[static_cast<Eigen::Index>(i)];
    if (v < (*box_)[i].lo || v > (*box_)[i].hi) return false;
  }
  return true;
}

Eigen::VectorXd EuclideanPatch::random_point(CounterRng& rng) const {
  auto box = sampling_box();
  Eigen::VectorXd x(static_cast<Eigen::Index>(dim()));
  for (std::size_t i = 0; i < dim(); ++i) x[static_cast<Eigen::Index>(i)] = rng.uniform(box[i].lo, box[i].hi);
  return x;
}

bool EuclideanPatch::operator==(const EuclideanPatch& other) const {
  if (coords_ != other.coords_) return false;
  auto a = sampling_box(), b = other.sampling_box();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].lo != b[i].lo || a[i].hi != b[i].hi) return false;
  return true;
}

// ---------------------------------------------------------------------------

ConstraintSubmanifold::ConstraintSubmanifold(EuclideanPatch ambient, std::vector<ScalarExpr> constraints)
    : ambient_(std::move(ambient)) {
  if (constraints.size() > ambient_.dim())
    throw DimensionMismatch("more constraints than ambient dimensions");
  constraints_.reserve(constraints.size());
  for (auto& c : constraints) constraints_.push_back(c.rebind(ambient_.coords()));
}

ConstraintSubmanifold ConstraintSubmanifold::parse(EuclideanPatch ambient, const std::vector<std::string>& constraints) {
  std::vector<ScalarExpr> exprs;
  for (const auto& c : constraints) exprs.push_back(ScalarExpr::parse(c, ambient.coords()));
  return ConstraintSubmanifold(std::move(ambient), std::move(exprs));
}

Eigen::VectorXd ConstraintSubmanifold::residuals(const Eigen::VectorXd& x) const {
  Eigen::VectorXd r(static_cast<Eigen::Index>(codim()));
  for (std::size_t i = 0; i < codim(); ++i) r[static_cast<Eigen::Index>(i)] = constraints_[i].eval(x);
  return r;
}

Containment ConstraintSubmanifold::contains(const Eigen::VectorXd& x, double tol) const {
  if (static_cast<std::size_t>(x.size()) != ambient_.dim())
    throw DimensionMismatch("point dimension does not match ambient patch");
  Containment c;
  c.residual = codim() == 0 ? 0.0 : residuals(x).cwiseAbs().maxCoeff();
  c.inside = c.residual <= tol;
  return c;
}

Eigen::MatrixXd ConstraintSubmanifold::jacobian(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd j(static_cast<Eigen::Index>(codim()), static_cast<Eigen::Index>(ambient_.dim()));
  for (std::size_t i = 0; i < codim(); ++i) j.row(static_cast<Eigen::Index>(i)) = constraints_[i].gradient(x).transpose();
  return j;
}

void ConstraintSubmanifold::require_independent(const Eigen::VectorXd& x) const {
  if (codim() == 0) return;
  RankInfo r = numerical_rank(jacobian(x));
  if (r.rank < static_cast<int>(codim()))
    throw RankDeficient("constraint Jacobian has rank " + std::to_string(r.rank) + " < " +
                        std::to_string(codim()) + " (sigma_min/sigma_max = " +
                        std::to_string(r.sigma_max > 0 ? r.sigma_min / r.sigma_max : 0.0) + ")");
}

Eigen::MatrixXd ConstraintSubmanifold::tangent_space(const Eigen::VectorXd& x) const {
  const auto m = static_cast<Eigen::Index>(ambient_.dim());
  if (codim() == 0) return Eigen::MatrixXd::Identity(m, m);
  require_independent(x);
  return null_space(jacobian(x));
}

std::optional<Eigen::VectorXd> solve_equations(const std::vector<ScalarExpr>& eqs, const Eigen::VectorXd& seed) {
  Eigen::VectorXd x = seed;
  if (eqs.empty()) return x;
  const auto k = static_cast<Eigen::Index>(eqs.size());
  auto residuals = [&](const Eigen::VectorXd& y) {
    Eigen::VectorXd r(k);
    for (Eigen::Index i = 0; i < k; ++i) r[i] = eqs[static_cast<std::size_t>(i)].eval(y);
    return r;
  };
  auto jacobian = [&](const Eigen::VectorXd& y) {
    Eigen::MatrixXd j(k, y.size());
    for (Eigen::Index i = 0; i < k; ++i) j.row(i) = eqs[static_cast<std::size_t>(i)].gradient(y).transpose();
    return j;
  };
  auto norm_of = [](const Eigen::VectorXd& r) { return r.cwiseAbs().maxCoeff(); };
  Eigen::VectorXd r;
  try {
    r = residuals(x);
  } catch (const DomainError&) {
    return std::nullopt;
  }
  double res = norm_of(r);
  for (int it = 0; it < kNewtonMaxIter && res >= kNewtonAccept; ++it) {
    Eigen::VectorXd step = lstsq(jacobian(x), r);
    double alpha = 1.0;
    bool improved = false;
    for (int h = 0; h < 30; ++h, alpha *= 0.5) {
      Eigen::VectorXd trial = x - alpha * step;
      try {
        Eigen::VectorXd rt = residuals(trial);
        double nt = norm_of(rt);
        if (nt < res) {
          x = trial;
          r = rt;
          res = nt;
          improved = true;
          break;
        }
      } catch (const DomainError&) {
      }
    }
    if (!improved) break;
  }
  if (res < kNewtonAccept) return x;
  return std::nullopt;
}

std::optional<Eigen::VectorXd> ConstraintSubmanifold::project(const Eigen::VectorXd& seed) const {
  return solve_equations(constraints_, seed);
}

std::vector<Eigen::VectorXd> ConstraintSubmanifold::sample(CounterRng& rng, std::size_t count) const {
  std::vector<Eigen::VectorXd> out;
  const std::size_t max_attempts = 200 * count + 100;
  for (std::size_t attempt = 0; attempt < max_attempts && out.size() < count; ++attempt) {
    auto p = project(ambient_.random_point(rng));
    if (!p || !ambient_.in_box(*p)) continue;
    if (numerical_rank(jacobian(*p)).rank < static_cast<int>(codim())) continue;
    out.push_back(*p);
  }
  if (out.size() < count)
    throw PreconditionError("could only sample " + std::to_string(out.size()) + " of " + std::to_string(count) +
                            " points on the submanifold inside the box");
  return out;
}

// ---------------------------------------------------------------------------

GraphSubmanifold::GraphSubmanifold(EuclideanPatch domain, EuclideanPatch codomain, VectorExpr map)
    : domain_(std::move(domain)), codomain_(std::move(codomain)), map_(map.rebind(domain_.coords())) {
  if (map_.size() != codomain_.dim())
    throw DimensionMismatch("graph map has " + std::to_string(map_.size()) + " components for a " +
                            std::to_string(codomain_.dim()) + "-dimensional codomain");
}

ConstraintSubmanifold GraphSubmanifold::to_constraints() const {
  EuclideanPatch prod = EuclideanPatch::product(domain_, codomain_);
  VectorExpr g = map_.rebind(prod.coords());
  std::vector<ScalarExpr> cons;
  for (std::size_t j = 0; j < codomain_.dim(); ++j)
    cons.push_back(ScalarExpr::variable(codomain_.coords()[j], prod.coords()) - g[j]);
  return ConstraintSubmanifold(prod, std::move(cons));
}

Eigen::VectorXd GraphSubmanifold::point(const Eigen::VectorXd& x) const {
  Eigen::VectorXd p(static_cast<Eigen::Index>(domain_.dim() + codomain_.dim()));
  p << x, map_.eval(x);
  return p;
}

Eigen::MatrixXd GraphSubmanifold::tangent_space(const Eigen::VectorXd& x) const {
  const auto n1 = static_cast<Eigen::Index>(domain_.dim());
  const auto n2 = static_cast<Eigen::Index>(codomain_.dim());
  Eigen::MatrixXd span(n1 + n2, n1);
  span.topRows(n1) = Eigen::MatrixXd::Identity(n1, n1);
  span.bottomRows(n2) = map_.jacobian(x);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(span);
  return qr.householderQ() * Eigen::MatrixXd::Identity(n1 + n2, n1);
}

// ---------------------------------------------------------------------------

TwistFunction TwistFunction::zero(const EuclideanPatch& ambient) {
  return {ScalarExpr::constant(0.0, ambient.coords())};
}

CotangentPoint conormal_point(const ConstraintSubmanifold& z, const TwistFunction& f, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& s, double tol) {
  if (static_cast<std::size_t>(s.size()) != z.codim())
    throw DimensionMismatch("fiber coordinates must have length codim(Z)");
  auto c = z.contains(x, tol);
  if (!c) throw PreconditionError("point is not on Z (residual " + std::to_string(c.residual) + ")");
  z.require_independent(x);
  CotangentPoint p;
  p.base = x;
  p.covector = f.differential(x);
  if (z.codim() > 0) p.covector += z.jacobian(x).transpose() * s;
  return p;
}

}  // namespace conormal
