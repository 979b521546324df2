#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conormal/geometry.hpp"

namespace conormal {

/// Gamma_{Z,f} = (zeta_X x id) N*_f Z for Z inside X x Y.
///
/// Z is always held in constraint form over the product patch (X coordinates
/// first). Relations built from a graph keep the map and the X-side twist so
/// that closed-form compositions can use them.
class CanonicalRelation {
 public:
  CanonicalRelation() = default;
  /// f is bound to the product coordinates.
  CanonicalRelation(EuclideanPatch source, EuclideanPatch target, ConstraintSubmanifold base, ScalarExpr twist);
  /// Gamma_{g,f} with f on the domain of g.
  static CanonicalRelation from_graph(const GraphSubmanifold& graph, const ScalarExpr& twist_on_domain);
  /// Gamma_f for f on all of X x Y (no constraints).
  static CanonicalRelation exact(const EuclideanPatch& source, const EuclideanPatch& target, const ScalarExpr& f);
  /// X x {star} (star on the target side) or {star} x Y (star on the source side), twisted by f.
  static CanonicalRelation point_factor(const EuclideanPatch& source, const EuclideanPatch& target,
                                        const Eigen::VectorXd& star, bool star_on_target, const ScalarExpr& f);

  const EuclideanPatch& source() const { return source_; }
  const EuclideanPatch& target() const { return target_; }
  const EuclideanPatch& product() const { return base_.ambient(); }
  const ConstraintSubmanifold& base() const { return base_; }
  const TwistFunction& twist() const { return twist_; }
  std::size_t n_source() const { return source_.dim(); }
  std::size_t n_target() const { return target_.dim(); }
  std::size_t fiber_dim() const { return base_.codim(); }

  const std::optional<GraphSubmanifold>& graph() const { return graph_; }
  /// For graph relations: the twist as a function on the domain.
  const std::optional<ScalarExpr>& graph_twist() const { return graph_twist_; }
  /// For point-factor relations: the distinguished point and which side carries it.
  const std::optional<Eigen::VectorXd>& star() const { return star_; }
  bool star_on_target() const { return star_on_target_; }

  /// Value of the generating function on the critical set over z (the phase psi there).
  double phase_value(const Eigen::VectorXd& z) const { return twist_.value(z); }

  bool declared_simply_connected = false;

 private:
  EuclideanPatch source_;
  EuclideanPatch target_;
  ConstraintSubmanifold base_;
  TwistFunction twist_;
  std::optional<GraphSubmanifold> graph_;
  std::optional<ScalarExpr> graph_twist_;
  std::optional<Eigen::VectorXd> star_;
  bool star_on_target_ = true;
};

struct RelationPoint {
  Eigen::VectorXd x, xi, y, eta;
  /// (x, y) stacked.
  Eigen::VectorXd base() const;
};

RelationPoint relation_point(const CanonicalRelation& gamma, const Eigen::VectorXd& z, const Eigen::VectorXd& s);

struct Membership {
  bool inside = false;
  double base_residual = 0.0;      // max |u_i(x, y)|
  double covector_residual = 0.0;  // max |<(-xi - d_X f, eta - d_Y f), t>| over an orthonormal tangent basis
  double residual() const { return std::max(base_residual, covector_residual); }
  explicit operator bool() const { return inside; }
};

Membership member(const CanonicalRelation& gamma, const RelationPoint& p, double tol = kMembershipTol);

/// Tangent basis of N*_f Z at (z, s) in (x, xi) ambient coordinates, from the (z, s) parametrization.
/// With a covector scale c(x) the parametrization is (x, c(x)(J^T s + grad f)), a negative control.
Eigen::MatrixXd conormal_tangent_basis(const ConstraintSubmanifold& z, const TwistFunction& f,
                                       const Eigen::VectorXd& x, const Eigen::VectorXd& s,
                                       const ScalarExpr* covector_scale = nullptr);

/// Max |omega(a, b)| over pairs of columns, omega = sum d xi_i ^ d x_i, for a 2m-row tangent basis.
double symplectic_residual(const Eigen::MatrixXd& basis);

struct LagrangianCheck {
  double residual = 0.0;
  int rank = 0;
};

/// Throws RankDeficient when the parametrization does not have rank n1 + n2.
LagrangianCheck lagrangian_residual(const CanonicalRelation& gamma, const Eigen::VectorXd& z,
                                    const Eigen::VectorXd& s, const ScalarExpr* covector_scale = nullptr);

/// Tangent basis of Gamma at (z, s) in relation coordinates (x, xi, y, eta).
Eigen::MatrixXd relation_tangent_basis(const CanonicalRelation& gamma, const Eigen::VectorXd& z,
                                       const Eigen::VectorXd& s);

CanonicalRelation compose_graphs(const CanonicalRelation& first, const CanonicalRelation& second);

CanonicalRelation compose_endpoint(const CanonicalRelation& first, const CanonicalRelation& second,
                                   double tol = 1e-12);

struct ExactComposition {
  CanonicalRelation relation;
  Eigen::VectorXd reference_x2;
  double cancellation_residual = 0.0;
  double independence_residual = 0.0;
};

/// Throws CancellationFailed if d_2 f_1 + d_2 f_2 exceeds tol at a sampled (x1, x2, x3).
ExactComposition compose_exact_graphs(const CanonicalRelation& first, const CanonicalRelation& second,
                                      CounterRng rng, std::size_t samples = 64, double tol = 1e-9);

enum class Verdict { Transverse, Clean, Failed };
const char* to_string(Verdict v);

struct StarPoint {
  Eigen::VectorXd x1, x2, x3;
  Eigen::VectorXd s, t;
  Eigen::VectorXd xi1, xi2, xi3;
};

struct CompositionOptions {
  std::size_t samples = 32;
  std::size_t starts = 16;
  double tol = 1e-9;
};

struct CompositionReport {
  std::vector<StarPoint> star_points;
  std::vector<int> tangent_condition_rank;  // rank of the middle difference map
  std::vector<int> kernel_dim;              // dim of its kernel, the star tangent space
  std::vector<int> submersion_rank;         // rank of T(composite) -> TZ
  int fiber_dim_e = 0;
  double subset_residual = 0.0;    // composite points tested against the candidate
  double superset_residual = 0.0;  // candidate points realized through the star set
  double cancellation_residual = 0.0;
  std::size_t superset_unsolved = 0;
  bool subset_pass = false;
  bool superset_pass = false;
  std::string twist_source = "expression";
  std::optional<ScalarExpr> fitted_twist;
  Verdict verdict = Verdict::Failed;
  std::vector<std::string> reasons;
};

/// Samples Gamma2 * Gamma1, checks the tangent condition and both inclusions against the candidate.
/// When candidate_f is empty the twist is reconstructed from the composite and fitted by a
/// polynomial of degree <= 4.
CompositionReport verify_composition(const CanonicalRelation& first, const CanonicalRelation& second,
                                     const ConstraintSubmanifold& candidate_z,
                                     const std::optional<ScalarExpr>& candidate_f, CounterRng rng,
                                     const CompositionOptions& options = {});

/// A Lagrangian submanifold of T*X over Z, given by covectors xi(x, s) for x in Z.
struct LagrangianFamily {
  ConstraintSubmanifold base;
  std::size_t fiber_dim = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& s)> covector;
  /// m x fiber_dim matrix of d xi / d s, the covector parts of vertical vectors.
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& x, const Eigen::VectorXd& s)> vertical;

  static LagrangianFamily conormal(const ConstraintSubmanifold& z, const TwistFunction& f);
  /// Lambda = (zeta x id)(Gamma2 o Gamma1) over the candidate Z, sectioned by the minimum-norm fiber solution.
  static LagrangianFamily composite(const CanonicalRelation& first, const CanonicalRelation& second,
                                    const ConstraintSubmanifold& candidate_z, std::size_t starts = 16);
};

struct TwistReconstruction {
  /// values[p][i] = f(path p, vertex i) - f(z0).
  std::vector<std::vector<double>> values;
  double horizontality_residual = 0.0;
  /// Largest disagreement between paths ending at the same point.
  double holonomy = 0.0;
};

TwistReconstruction reconstruct_twist(const LagrangianFamily& family, const Eigen::VectorXd& z0,
                                      const std::vector<std::vector<Eigen::VectorXd>>& paths, CounterRng rng,
                                      double horizontal_tol = 1e-8);

/// Least-squares polynomial of total degree <= degree in the given coordinates.
ScalarExpr fit_polynomial(const std::vector<Eigen::VectorXd>& points, const std::vector<double>& values,
                          const std::vector<std::string>& vars, int degree);

}  // namespace conormal
