#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conormal/expr.hpp"
#include "conormal/rng.hpp"

namespace conormal {

/// Membership tolerance used wherever a point is tested against Z.
inline constexpr double kMembershipTol = 1e-9;
/// Newton acceptance residual for on-manifold sampling.
inline constexpr double kNewtonAccept = 1e-12;
inline constexpr int kNewtonMaxIter = 50;

struct Interval {
  double lo = -1.0;
  double hi = 1.0;
  double width() const { return hi - lo; }
  double center() const { return 0.5 * (lo + hi); }
};

/// An open box in R^n with named global coordinates; stands in for a smooth manifold.
class EuclideanPatch {
 public:
  EuclideanPatch() = default;
  EuclideanPatch(std::string name, std::vector<std::string> coords, std::optional<std::vector<Interval>> box = {});

  static EuclideanPatch product(const EuclideanPatch& a, const EuclideanPatch& b);

  const std::string& name() const { return name_; }
  const std::vector<std::string>& coords() const { return coords_; }
  std::size_t dim() const { return coords_.size(); }
  bool has_box() const { return box_.has_value(); }
  const std::optional<std::vector<Interval>>& box() const { return box_; }
  /// The declared box, or [-1, 1]^n when none was declared.
  std::vector<Interval> sampling_box() const;
  bool in_box(const Eigen::VectorXd& x) const;
  Eigen::VectorXd random_point(CounterRng& rng) const;

  bool operator==(const EuclideanPatch& other) const;

 private:
  std::string name_;
  std::vector<std::string> coords_;
  std::optional<std::vector<Interval>> box_;
};

struct Containment {
  bool inside = false;
  double residual = 0.0;  // max_i |u_i(x)|
  explicit operator bool() const { return inside; }
};

/// Damped Gauss-Newton on a possibly overdetermined system; nullopt unless max |eq| < kNewtonAccept.
std::optional<Eigen::VectorXd> solve_equations(const std::vector<ScalarExpr>& eqs, const Eigen::VectorXd& seed);

/// Z = {u_1 = ... = u_k = 0} inside an ambient patch.
class ConstraintSubmanifold {
 public:
  ConstraintSubmanifold() = default;
  ConstraintSubmanifold(EuclideanPatch ambient, std::vector<ScalarExpr> constraints);
  static ConstraintSubmanifold parse(EuclideanPatch ambient, const std::vector<std::string>& constraints);

  const EuclideanPatch& ambient() const { return ambient_; }
  const std::vector<ScalarExpr>& constraints() const { return constraints_; }
  std::size_t codim() const { return constraints_.size(); }
  std::size_t dim() const { return ambient_.dim() - codim(); }

  Eigen::VectorXd residuals(const Eigen::VectorXd& x) const;
  Containment contains(const Eigen::VectorXd& x, double tol = kMembershipTol) const;
  /// k x m Jacobian of (u_1..u_k).
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const;
  /// Throws RankDeficient unless sigma_min > 1e-8 sigma_max.
  void require_independent(const Eigen::VectorXd& x) const;
  /// Orthonormal m x (m-k) basis of T_x Z.
  Eigen::MatrixXd tangent_space(const Eigen::VectorXd& x) const;

  /// Damped Newton with pseudo-inverse steps from a seed; nullopt if not converged.
  std::optional<Eigen::VectorXd> project(const Eigen::VectorXd& seed) const;
  /// Points of Z inside the sampling box, from random seeds.
  std::vector<Eigen::VectorXd> sample(CounterRng& rng, std::size_t count) const;

 private:
  EuclideanPatch ambient_;
  std::vector<ScalarExpr> constraints_;
};

/// Graph of a smooth map g : X -> Y, as a submanifold of X x Y.
class GraphSubmanifold {
 public:
  GraphSubmanifold() = default;
  GraphSubmanifold(EuclideanPatch domain, EuclideanPatch codomain, VectorExpr map);

  const EuclideanPatch& domain() const { return domain_; }
  const EuclideanPatch& codomain() const { return codomain_; }
  const VectorExpr& map() const { return map_; }

  /// Constraints y_j - g_j(x) over the product patch.
  ConstraintSubmanifold to_constraints() const;
  /// (x, g(x)).
  Eigen::VectorXd point(const Eigen::VectorXd& x) const;
  /// Orthonormal basis of the graph tangent space at (x, g(x)), from the columns [I; Dg].
  Eigen::MatrixXd tangent_space(const Eigen::VectorXd& x) const;

 private:
  EuclideanPatch domain_;
  EuclideanPatch codomain_;
  VectorExpr map_;
};

/// An extension f of a function on Z to the ambient patch. Only f|_Z and df on Z are ever used.
struct TwistFunction {
  ScalarExpr extension;

  static TwistFunction zero(const EuclideanPatch& ambient);
  double value(const Eigen::VectorXd& x) const { return extension.eval(x); }
  Eigen::VectorXd differential(const Eigen::VectorXd& x) const { return extension.gradient(x); }
};

struct CotangentPoint {
  Eigen::VectorXd base;
  Eigen::VectorXd covector;
};

/// (x, sum_i s_i du_i(x) + df(x)): the point of N*_f Z over x with fiber coordinates s.
CotangentPoint conormal_point(const ConstraintSubmanifold& z, const TwistFunction& f, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& s, double tol = kMembershipTol);

}  // namespace conormal
