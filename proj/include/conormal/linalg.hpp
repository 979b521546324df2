#pragma once

#include <Eigen/Dense>

namespace conormal {

/// Relative singular-value threshold used for every rank decision.
inline constexpr double kRankRelTol = 1e-8;

struct RankInfo {
  int rank = 0;
  double sigma_max = 0.0;
  double sigma_min = 0.0;  // smallest singular value (of min(rows, cols))
};

RankInfo numerical_rank(const Eigen::MatrixXd& a, double rel_tol = kRankRelTol);

/// Orthonormal basis (columns) of ker(a), computed from the SVD.
Eigen::MatrixXd null_space(const Eigen::MatrixXd& a, double rel_tol = kRankRelTol);

/// Orthonormal basis (columns) of the column span of a.
Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& a, double rel_tol = kRankRelTol);

/// Sine of the largest principal angle between two subspaces given by orthonormal bases.
double max_principal_angle_sine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Minimum-norm least-squares solution of a x = b.
Eigen::VectorXd lstsq(const Eigen::MatrixXd& a, const Eigen::VectorXd& b);

}  // namespace conormal
