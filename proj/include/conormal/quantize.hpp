#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conormal/geometry.hpp"
#include "conormal/relations.hpp"

namespace conormal {

/// Exact rational for orders and prefactor exponents.
class Rational {
 public:
  constexpr Rational() = default;
  Rational(std::int64_t num, std::int64_t den = 1);

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }
  bool is_integer() const { return den_ == 1; }
  std::string to_string() const;
  /// Accepts "3", "-1/2", "1.5".
  static Rational parse(const std::string& text);

  friend Rational operator+(Rational a, Rational b);
  friend Rational operator-(Rational a, Rational b);
  friend Rational operator-(Rational a);
  friend Rational operator*(Rational a, Rational b);
  friend bool operator==(Rational a, Rational b) { return a.num_ == b.num_ && a.den_ == b.den_; }

 private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

/// Half of an integer, e.g. n/2 for a dimension n.
inline Rational half(std::int64_t n) { return Rational(n, 2); }

/// Midpoint lattice on a box: node j sits at lo + (j + 1/2) h on each axis; row-major multi-index
/// with the last axis fastest.
class Grid {
 public:
  Grid() = default;
  Grid(EuclideanPatch patch, std::vector<std::size_t> points_per_axis,
       std::optional<std::vector<Interval>> box = std::nullopt);

  const EuclideanPatch& patch() const { return patch_; }
  const std::vector<std::size_t>& points_per_axis() const { return points_; }
  const std::vector<Interval>& box() const { return box_; }
  std::size_t dim() const { return points_.size(); }
  std::size_t size() const { return size_; }
  double spacing(std::size_t axis) const { return box_[axis].width() / static_cast<double>(points_[axis]); }
  double cell_volume() const { return cell_volume_; }
  Eigen::VectorXd node(std::size_t j) const;
  /// One node per column.
  const Eigen::MatrixXd& nodes() const { return nodes_; }

  bool operator==(const Grid& other) const;

 private:
  EuclideanPatch patch_;
  std::vector<std::size_t> points_;
  std::vector<Interval> box_;
  std::size_t size_ = 0;
  double cell_volume_ = 0.0;
  Eigen::MatrixXd nodes_;
};

/// a(vars) times a bump on every supported variable; vars include fiber names and "hbar".
struct Amplitude {
  ScalarExpr expr;
  /// Compact support per variable; every fiber variable needs one.
  std::map<std::string, Interval> support;
  /// Exponent p of the bump (1 - t^2)^p on [-1, 1]; 0 disables the bump (the box still truncates).
  int cutoff_power = 4;

  static double bump(double t, int power);
  /// Value of the bump for variable name at value v (1 if the variable has no support entry).
  double cutoff(const std::string& name, double v) const;
  /// Same amplitude with variables (and support keys) renamed; unlisted names are kept.
  Amplitude renamed(const std::map<std::string, std::string>& names) const;
  /// Product of two amplitudes over the union of their variables (first's order, then new names).
  static Amplitude product(const Amplitude& a, const Amplitude& b);
};

struct QuadratureOptions {
  std::size_t order = 8;
  std::size_t min_panels = 1;
  std::size_t panel_budget = 4096;
};

struct DiscretizedFIO {
  Grid source;
  Grid target;
  Eigen::MatrixXcd kernel;  // kernel(target node, source node)
  double hbar = 0.0;
  Rational r;
  int k = 0;
  Rational order_m;
  std::string half_density_convention = "lebesgue";

  /// r - k/2, the power of hbar in front of the oscillatory integral.
  Rational prefactor_exponent() const { return r - half(k); }
};

/// K[j2, j1] = hbar^(r - k/2) int a(x, s, hbar) exp(i (sum s_i u_i(x) + f(x)) / hbar) ds, x = (x1(j1), x2(j2)).
DiscretizedFIO oscillatory_kernel(const CanonicalRelation& gamma, const Amplitude& a, Rational r, double hbar,
                                  const Grid& source, const Grid& target, const QuadratureOptions& quad = {});

/// Grid function coefficients against dx^(1/2).
Eigen::VectorXcd apply(const DiscretizedFIO& f, const Eigen::VectorXcd& g);
Eigen::VectorXcd apply(const DiscretizedFIO& f, const Grid& grid, const Eigen::VectorXcd& g);

/// K = K2 diag(cell volume) K1 with order m1 + m2 - e/2.
DiscretizedFIO compose_numeric(const DiscretizedFIO& second, const DiscretizedFIO& first, int e = 0);

struct DirectKernelInfo {
  bool factorized = false;  // the s and t integrals were sum-factorized
  std::size_t max_panels = 0;
};

/// Kernel on X1 x X3 from the composed phase sum s u + sum t v + f1 + f2, integrating x2 over the middle
/// grid with its cell volume and (s, t) by panelized Gauss-Legendre.
DiscretizedFIO composed_kernel_direct(const CanonicalRelation& first, const CanonicalRelation& second,
                                      const Amplitude& a, Rational r, double hbar, const Grid& g1, const Grid& g2,
                                      const Grid& g3, const QuadratureOptions& quad = {},
                                      DirectKernelInfo* info = nullptr, bool allow_factorization = true);

/// Fiber variable names of a single kernel (s1..sk) and of a composed kernel (s1.. then t1..).
std::vector<std::string> kernel_fiber_names(const CanonicalRelation& gamma);
std::pair<std::vector<std::string>, std::vector<std::string>> composed_fiber_names(const CanonicalRelation& first,
                                                                                   const CanonicalRelation& second);

/// CSV rows j_target,j_source,re,im.
void write_kernel_csv(std::ostream& os, const DiscretizedFIO& f);
/// Little-endian dump: "CNRMFIO1", u32 rows, u32 cols, f64 hbar, f64 r, i32 k, i32 reserved, f64 m,
/// then rows*cols (re, im) f64 pairs, row-major.
void write_kernel_binary(std::ostream& os, const DiscretizedFIO& f);

struct KernelDump {
  std::uint32_t rows = 0, cols = 0;
  double hbar = 0.0, r = 0.0, m = 0.0;
  std::int32_t k = 0;
  Eigen::MatrixXcd kernel;
};
KernelDump read_kernel_binary(std::istream& is);

/// ||a - b||_2 / ||b||_2 on the kernel matrices (Frobenius).
double relative_l2(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b);

}  // namespace conormal
