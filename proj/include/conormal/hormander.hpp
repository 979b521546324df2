#pragma once

#include <complex>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conormal/geometry.hpp"

namespace conormal {

/// (W = X x R^k, pi, phi) with phi a function of (x, s).
struct HormanderDescription {
  EuclideanPatch base_patch;
  std::size_t fiber_dim = 0;
  /// Variables: the coordinates of base_patch followed by the fiber names.
  ScalarExpr phi;
  std::vector<std::string> fiber_names;
  /// Set when built from (Z, f); hand-supplied phases leave it empty.
  std::optional<ConstraintSubmanifold> source_z;
  std::optional<TwistFunction> source_f;

  std::vector<std::string> all_vars() const;
  Eigen::VectorXd join(const Eigen::VectorXd& x, const Eigen::VectorXd& s) const;

  /// A hand-supplied phase over (x coordinates, fiber names).
  static HormanderDescription from_phase(EuclideanPatch base, std::vector<std::string> fiber_names,
                                         const std::string& phi_text);
};

/// Fiber variable names s1..sk (or with the given prefix) that avoid the given coordinates.
std::vector<std::string> fiber_variable_names(std::size_t k, const std::vector<std::string>& avoid,
                                              const std::string& prefix = "s");

/// phi(x, s) = sum_i s_i u_i(x) + f(x). Throws RankDeficient if the constraints are dependent at a
/// point found on Z from the seeded search.
HormanderDescription build_description(const ConstraintSubmanifold& z, const TwistFunction& f,
                                       std::uint64_t seed = 0);

/// max_i |d phi / d s_i|.
double vert_residual(const HormanderDescription& desc, const Eigen::VectorXd& x, const Eigen::VectorXd& s);

/// (x, d phi / d x); throws NotCritical if vert_residual exceeds tol.
CotangentPoint lambda_embedding(const HormanderDescription& desc, const Eigen::VectorXd& x, const Eigen::VectorXd& s,
                                double tol = kMembershipTol);

struct TransversalityReport {
  std::vector<int> ranks;  // rank of d(d phi / d s) in all (x, s) variables, per sample
  bool all_full = true;
};

TransversalityReport transversality_check(const HormanderDescription& desc,
                                          const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& samples);

/// n_+ - n_- of d^2 phi / ds ds; eigenvalues below 1e-9 times the largest entry count as zero.
int fiber_hessian_signature(const HormanderDescription& desc, const Eigen::VectorXd& x, const Eigen::VectorXd& s);

/// exp(i pi sgn / 4); exact for multiples of pi/2.
std::complex<double> maslov_factor(int signature);
std::complex<double> maslov_section(const HormanderDescription& desc, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& s);

struct CriticalPointRecord {
  Eigen::VectorXd x, s;
  double vert_residual = 0.0;
  CotangentPoint lambda_image;
  int fiber_signature = 0;
  std::complex<double> maslov_value{1.0, 0.0};
};

CriticalPointRecord critical_point_record(const HormanderDescription& desc, const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& s, double tol = kMembershipTol);

/// Header row followed by one row per record.
void write_description_csv(std::ostream& os, const HormanderDescription& desc,
                           const std::vector<CriticalPointRecord>& records);

}  // namespace conormal
