#pragma once

#include <complex>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conormal/hormander.hpp"
#include "conormal/quantize.hpp"
#include "conormal/relations.hpp"
#include "conormal/rng.hpp"

namespace conormal {

/// Local parametrization of a canonical relation: n_source + n_target parameters mapped to relation
/// coordinates (x, xi, y, eta).
struct Parametrization {
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> value;
  /// 2 (n_source + n_target) x (n_source + n_target).
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;

  std::size_t dim() const { return n_source + n_target; }
};

/// A smooth map between parameter spaces, used for coordinate changes.
struct CoordinateChange {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> value;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;

  static CoordinateChange from_expressions(const VectorExpr& map);
};

/// Chart (p, s) -> (zeta x id)(z(p), J(z)^T s + df(z)) of Gamma, p a chart of Z.
struct ConormalChart {
  CanonicalRelation gamma;
  std::size_t base_dim = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> z;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> dz;

  Parametrization parametrization() const;
  /// |det [dz, J^T]| / |det J J^T|, the density of delta(u) in the chart of Z.
  double leray(const Eigen::VectorXd& p) const;
  /// Chart point (p, s) split into the two blocks.
  Eigen::VectorXd base_part(const Eigen::VectorXd& q) const { return q.head(static_cast<Eigen::Index>(base_dim)); }
  Eigen::VectorXd fiber_part(const Eigen::VectorXd& q) const {
    return q.tail(q.size() - static_cast<Eigen::Index>(base_dim));
  }
};

/// p = x on the domain of a graph relation; z(x) = (x, g(x)).
ConormalChart graph_chart(const CanonicalRelation& gamma);
/// p in T_{z0} Z, z(p) = z0 + T p + J(z0)^T c with c solved so that z(p) lies on Z.
ConormalChart tangent_chart(const CanonicalRelation& gamma, const Eigen::VectorXd& z0);

struct HalfDensity {
  Parametrization param;
  /// Coefficient against |dp|^(1/2) of the parametrization.
  std::function<double(const Eigen::VectorXd&)> coeff;

  /// rho(v_1..v_N) for tangent vectors given in relation coordinates (columns).
  double evaluate(const Eigen::VectorXd& p, const Eigen::MatrixXd& vectors) const;
};

/// Same half-density in the parameters q with p = change(q): coefficient times |det Dchange|^(1/2).
HalfDensity reparametrize(const HalfDensity& rho, const CoordinateChange& change);

struct SymbolSection {
  std::complex<double> maslov{1.0, 0.0};
  HalfDensity density;
};

/// (2 pi)^((n + 2k)/4): the constant relating kernel amplitudes to symbol coefficients.
double symbol_normalization(std::size_t n_product, std::size_t k);

/// Value of the amplitude with its cutoffs at a point given in vars order.
double amplitude_value(const Amplitude& a, const std::vector<std::string>& vars, const Eigen::VectorXd& point);

/// sigma = s_phi times the half-density with coefficient C (2 pi)^(..) leray^(1/2) a(z(p), s, 0) in the chart.
/// The samples are chart points used for the transversality and Maslov checks.
SymbolSection symbol_of(const Amplitude& a, const HormanderDescription& desc, const ConormalChart& chart,
                        const std::vector<Eigen::VectorXd>& samples);

struct HalfDensityComposition {
  double value = 0.0;  // coefficient against the composite parametrization
  double lift_residual = 0.0;
  double delta_condition = 0.0;  // smallest / largest singular value of delta(w)
  int delta_rank = 0;
  int kernel_dim = 0;
};

/// rho1 composed with rho2 at the composed point q, p1 and p2 the matching points on Gamma1 and Gamma2.
/// Throws NotTransverse if the difference map is not onto or the fiber is positive dimensional.
HalfDensityComposition compose_half_densities(const HalfDensity& rho1, const Eigen::VectorXd& p1,
                                              const HalfDensity& rho2, const Eigen::VectorXd& p2,
                                              const Parametrization& composite, const Eigen::VectorXd& q,
                                              CounterRng rng, double tol = 1e-9);

/// Parameters on Gamma1 and Gamma2 above the composite parameter q.
struct ChainPoints {
  Eigen::VectorXd p1, p2;
};
using ChainLift = std::function<ChainPoints(const Eigen::VectorXd& q)>;

/// For graph charts of Gamma_{g1,f1}, Gamma_{g2,f2} and of their composite, q = (x1, t):
/// p2 = (g1(x1), t), p1 = (x1, Dg2^T t - df2).
ChainLift graph_chain_lift(const CanonicalRelation& first, const CanonicalRelation& second);

/// Maslov factors multiply; the density is composed pointwise through the lift.
SymbolSection compose_symbols(const SymbolSection& s1, const SymbolSection& s2, const Parametrization& composite,
                              ChainLift lift, CounterRng rng);

/// Kernel coefficient at the single source node x*: the y-Fourier coefficient at covector t0,
/// normalized so that it equals |sigma| at leading order for a graph relation.
struct StationaryPhaseSample {
  double hbar = 0.0;
  double modulus = 0.0;
  /// Phase left after removing exp(i f(x*) / hbar).
  std::complex<double> unit_factor{1.0, 0.0};
};

StationaryPhaseSample stationary_phase_coefficient(const DiscretizedFIO& kernel, const CanonicalRelation& graph,
                                                   const Eigen::VectorXd& t0);

struct StationaryPhaseFit {
  std::vector<StationaryPhaseSample> samples;
  double c0 = 0.0, c1 = 0.0;   // modulus ~ c0 + c1 hbar
  double fit_residual = 0.0;   // max |modulus - fit| / |c0|
  std::vector<double> drift;   // |modulus - c0| / |c0| per sample
  double leading = 0.0;        // |c0|
};

/// Throws FitFailed when the linear fit residual exceeds fit_tol.
StationaryPhaseFit stationary_phase_leading(const std::vector<DiscretizedFIO>& kernels, const CanonicalRelation& graph,
                                            const Eigen::VectorXd& t0, double fit_tol = 0.05);

/// Rows: parametrization coordinates, coefficient, maslov_re, maslov_im.
void write_symbol_csv(std::ostream& os, const SymbolSection& sigma, const std::vector<std::string>& param_names,
                      const std::vector<Eigen::VectorXd>& points);

}  // namespace conormal
