#include "conormal/linalg.hpp"

#include <algorithm>

namespace conormal {

RankInfo numerical_rank(const Eigen::MatrixXd& a, double rel_tol) {
  RankInfo info;
  if (a.size() == 0) return info;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  info.sigma_max = s[0];
  info.sigma_min = s[s.size() - 1];
  // An identically zero matrix has rank 0 whatever the relative threshold says.
  const double cut = std::max(rel_tol * info.sigma_max, 1e-300);
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > cut) ++info.rank;
  return info;
}

Eigen::MatrixXd null_space(const Eigen::MatrixXd& a, double rel_tol) {
  const Eigen::Index n = a.cols();
  if (a.rows() == 0) return Eigen::MatrixXd::Identity(n, n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const int r = numerical_rank(a, rel_tol).rank;
  return svd.matrixV().rightCols(n - r);
}

Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& a, double rel_tol) {
  if (a.cols() == 0) return Eigen::MatrixXd(a.rows(), 0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU);
  const int r = numerical_rank(a, rel_tol).rank;
  return svd.matrixU().leftCols(r);
}

double max_principal_angle_sine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) return 1.0;
  if (b.cols() == 0) return 0.0;
  Eigen::MatrixXd residual = b - a * (a.transpose() * b);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(residual);
  return svd.singularValues()[0];
}

Eigen::VectorXd lstsq(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  if (a.cols() == 0) return Eigen::VectorXd(0);
  return a.completeOrthogonalDecomposition().solve(b);
}

}  // namespace conormal
