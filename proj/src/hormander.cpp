#include "conormal/hormander.hpp"

#include <algorithm>
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

double max_abs(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

std::vector<std::string> HormanderDescription::all_vars() const {
  return concat_vars(base_patch.coords(), fiber_names);
}

Eigen::VectorXd HormanderDescription::join(const Eigen::VectorXd& x, const Eigen::VectorXd& s) const {
  if (static_cast<std::size_t>(x.size()) != base_patch.dim() || static_cast<std::size_t>(s.size()) != fiber_dim)
    throw DimensionMismatch("(x, s) does not match the description");
  VectorXd w(x.size() + s.size());
  w << x, s;
  return w;
}

HormanderDescription HormanderDescription::from_phase(EuclideanPatch base, std::vector<std::string> fiber_names,
                                                      const std::string& phi_text) {
  HormanderDescription d;
  d.base_patch = std::move(base);
  d.fiber_dim = fiber_names.size();
  d.fiber_names = std::move(fiber_names);
  d.phi = ScalarExpr::parse(phi_text, d.all_vars());
  return d;
}

std::vector<std::string> fiber_variable_names(std::size_t k, const std::vector<std::string>& avoid,
                                              const std::string& prefix) {
  std::string p = prefix;
  auto clashes = [&](const std::string& pre) {
    for (std::size_t i = 1; i <= k; ++i)
      if (std::find(avoid.begin(), avoid.end(), pre + std::to_string(i)) != avoid.end()) return true;
    return false;
  };
  while (clashes(p)) p += "_";
  std::vector<std::string> out;
  for (std::size_t i = 1; i <= k; ++i) out.push_back(p + std::to_string(i));
  return out;
}

HormanderDescription build_description(const ConstraintSubmanifold& z, const TwistFunction& f, std::uint64_t seed) {
  CounterRng rng(seed);
  for (int attempt = 0, found = 0; attempt < 64 && found < 8; ++attempt) {
    auto p = z.project(z.ambient().random_point(rng));
    if (!p) continue;
    ++found;
    z.require_independent(*p);
  }
  HormanderDescription d;
  d.base_patch = z.ambient();
  d.fiber_dim = z.codim();
  d.fiber_names = fiber_variable_names(z.codim(), z.ambient().coords());
  auto vars = d.all_vars();
  ScalarExpr phi = f.extension.rebind(vars);
  for (std::size_t i = 0; i < z.codim(); ++i)
    phi = ScalarExpr::variable(d.fiber_names[i], vars) * z.constraints()[i].rebind(vars) + phi;
  d.phi = phi;
  d.source_z = z;
  d.source_f = f;
  return d;
}

double vert_residual(const HormanderDescription& desc, const Eigen::VectorXd& x, const Eigen::VectorXd& s) {
  if (desc.fiber_dim == 0) return 0.0;
  VectorXd g = desc.phi.gradient(desc.join(x, s));
  return max_abs(VectorXd(g.tail(static_cast<Index>(desc.fiber_dim))));
}

CotangentPoint lambda_embedding(const HormanderDescription& desc, const Eigen::VectorXd& x, const Eigen::VectorXd& s,
                                double tol) {
  VectorXd g = desc.phi.gradient(desc.join(x, s));
  double r = max_abs(VectorXd(g.tail(static_cast<Index>(desc.fiber_dim))));
  if (r > tol) throw NotCritical("point is not on C_phi (|d_vert phi| = " + std::to_string(r) + ")");
  return {x, g.head(x.size())};
}

TransversalityReport transversality_check(const HormanderDescription& desc,
                                          const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& samples) {
  TransversalityReport rep;
  const Index k = static_cast<Index>(desc.fiber_dim);
  for (const auto& [x, s] : samples) {
    int rank = 0;
    if (k > 0) rank = numerical_rank(desc.phi.hessian(desc.join(x, s)).bottomRows(k)).rank;
    rep.ranks.push_back(rank);
    if (rank != static_cast<int>(k)) rep.all_full = false;
  }
  return rep;
}

int fiber_hessian_signature(const HormanderDescription& desc, const Eigen::VectorXd& x, const Eigen::VectorXd& s) {
  const Index k = static_cast<Index>(desc.fiber_dim);
  if (k == 0) return 0;
  MatrixXd h = desc.phi.hessian(desc.join(x, s)).bottomRightCorner(k, k);
  const double scale = h.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(h, Eigen::EigenvaluesOnly);
  int sig = 0;
  for (Index i = 0; i < k; ++i) {
    double l = eig.eigenvalues()[i];
    if (std::abs(l) > 1e-9 * scale) sig += l > 0 ? 1 : -1;
  }
  return sig;
}

std::complex<double> maslov_factor(int signature) {
  int r = ((signature % 8) + 8) % 8;
  switch (r) {
    case 0: return {1.0, 0.0};
    case 2: return {0.0, 1.0};
    case 4: return {-1.0, 0.0};
    case 6: return {0.0, -1.0};
    default: {
      double a = std::numbers::pi * r / 4.0;
      return {std::cos(a), std::sin(a)};
    }
  }
}

std::complex<double> maslov_section(const HormanderDescription& desc, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& s) {
  return maslov_factor(fiber_hessian_signature(desc, x, s));
}

CriticalPointRecord critical_point_record(const HormanderDescription& desc, const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& s, double tol) {
  CriticalPointRecord rec;
  rec.x = x;
  rec.s = s;
  rec.vert_residual = vert_residual(desc, x, s);
  rec.lambda_image = lambda_embedding(desc, x, s, tol);
  rec.fiber_signature = fiber_hessian_signature(desc, x, s);
  rec.maslov_value = maslov_factor(rec.fiber_signature);
  return rec;
}

void write_description_csv(std::ostream& os, const HormanderDescription& desc,
                           const std::vector<CriticalPointRecord>& records) {
  const auto& xs = desc.base_patch.coords();
  for (const auto& c : xs) os << c << ',';
  for (const auto& c : desc.fiber_names) os << c << ',';
  os << "vert_residual";
  for (const auto& c : xs) os << ",xi_" << c;
  os << ",signature,maslov_re,maslov_im\n";
  for (const auto& r : records) {
    for (Index i = 0; i < r.x.size(); ++i) os << format_double(r.x[i]) << ',';
    for (Index i = 0; i < r.s.size(); ++i) os << format_double(r.s[i]) << ',';
    os << format_double(r.vert_residual);
    for (Index i = 0; i < r.lambda_image.covector.size(); ++i) os << ',' << format_double(r.lambda_image.covector[i]);
    os << ',' << r.fiber_signature << ',' << format_double(r.maslov_value.real()) << ','
       << format_double(r.maslov_value.imag()) << '\n';
  }
}

}  // namespace conormal
