#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace conormal {

enum class Op : std::uint8_t {
  Const,
  Var,
  Neg,
  Add,
  Sub,
  Mul,
  Div,
  IntPow,  // integer exponent, evaluated by repeated multiplication
  Pow,     // real exponent, base must be positive
  Sin,
  Cos,
  Exp,
  Log,
  Sqrt,
  Tanh,
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  Op op = Op::Const;
  double value = 0.0;  // Const
  int index = 0;       // Var: variable position; IntPow: exponent
  NodePtr lhs;
  NodePtr rhs;
};

struct Tape;

/// A smooth scalar expression over an ordered list of named real variables.
///
/// Immutable after construction. Values come from a compiled postfix tape;
/// first and second derivatives come from forward-mode (nested) dual numbers,
/// so Hessians are exact up to rounding and symmetric bit-for-bit.
class ScalarExpr {
 public:
  /// The constant 0 over no variables.
  ScalarExpr();

  static ScalarExpr parse(std::string_view text, std::vector<std::string> vars);
  static ScalarExpr constant(double value, std::vector<std::string> vars);
  static ScalarExpr variable(std::string_view name, std::vector<std::string> vars);

  const std::vector<std::string>& vars() const { return *vars_; }
  std::size_t arity() const { return vars_->size(); }
  /// The text this expression was parsed from, or its printed form if built.
  const std::string& source_text() const { return source_; }
  const NodePtr& root() const { return root_; }

  double eval(std::span<const double> point) const;
  double eval(const Eigen::VectorXd& point) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& point) const;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& point) const;

  /// Fully parenthesised text that parses back to an identical tree.
  std::string to_string() const;

  /// Same expression over a new variable list; every used name must appear in it.
  ScalarExpr rebind(const std::vector<std::string>& new_vars) const;
  /// Replace variable i by replacements[i]; all replacements share one variable list.
  ScalarExpr substitute(const std::vector<ScalarExpr>& replacements) const;
  /// Replace selected variables by constants, keeping the variable list.
  ScalarExpr fix(const std::vector<std::pair<std::string, double>>& values) const;

  /// Operands of the top-level product chain (the expression itself if not a product).
  std::vector<ScalarExpr> factors() const;
  /// uses()[i] is true iff variable i occurs in the tree.
  std::vector<bool> uses() const;
  bool is_constant_zero() const;

  friend ScalarExpr operator+(const ScalarExpr& a, const ScalarExpr& b);
  friend ScalarExpr operator-(const ScalarExpr& a, const ScalarExpr& b);
  friend ScalarExpr operator*(const ScalarExpr& a, const ScalarExpr& b);
  friend ScalarExpr operator/(const ScalarExpr& a, const ScalarExpr& b);
  friend ScalarExpr operator-(const ScalarExpr& a);
  friend ScalarExpr operator*(double a, const ScalarExpr& b);
  friend ScalarExpr operator+(const ScalarExpr& a, double b);

 private:
  ScalarExpr(NodePtr root, std::shared_ptr<const std::vector<std::string>> vars,
             std::string source);
  static ScalarExpr built(NodePtr root, std::shared_ptr<const std::vector<std::string>> vars);

  NodePtr root_;
  std::shared_ptr<const std::vector<std::string>> vars_;
  std::string source_;
  std::shared_ptr<const Tape> tape_;
};

inline ScalarExpr parse(std::string_view text, std::vector<std::string> vars) {
  return ScalarExpr::parse(text, std::move(vars));
}

/// Components sharing one variable list; the Jacobian rows are component gradients.
class VectorExpr {
 public:
  VectorExpr() = default;
  explicit VectorExpr(std::vector<ScalarExpr> components);
  static VectorExpr parse(const std::vector<std::string>& texts, std::vector<std::string> vars);

  std::size_t size() const { return components_.size(); }
  const ScalarExpr& operator[](std::size_t i) const { return components_[i]; }
  const std::vector<ScalarExpr>& components() const { return components_; }
  const std::vector<std::string>& vars() const { return vars_; }

  Eigen::VectorXd eval(const Eigen::VectorXd& point) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& point) const;

  VectorExpr rebind(const std::vector<std::string>& new_vars) const;
  /// Component-wise substitute: (this ∘ inner) where inner supplies one expression per variable.
  VectorExpr compose(const VectorExpr& inner) const;

 private:
  std::vector<ScalarExpr> components_;
  std::vector<std::string> vars_;
};

/// Concatenate variable lists, rejecting duplicates.
std::vector<std::string> concat_vars(const std::vector<std::string>& a,
                                     const std::vector<std::string>& b);

}  // namespace conormal
