#include "conormal/expr.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numbers>
#include <unordered_map>
#include <unordered_set>

#include "conormal/error.hpp"

namespace conormal {

namespace {

NodePtr make_const(double v) {
  auto n = std::make_shared<Node>();
  n->op = Op::Const;
  n->value = v;
  return n;
}

NodePtr make_var(int idx) {
  auto n = std::make_shared<Node>();
  n->op = Op::Var;
  n->index = idx;
  return n;
}

NodePtr make_unary(Op op, NodePtr a) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->lhs = std::move(a);
  return n;
}

NodePtr make_binary(Op op, NodePtr a, NodePtr b) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->lhs = std::move(a);
  n->rhs = std::move(b);
  return n;
}

NodePtr make_intpow(NodePtr a, int exponent) {
  auto n = std::make_shared<Node>();
  n->op = Op::IntPow;
  n->index = exponent;
  n->lhs = std::move(a);
  return n;
}

const std::unordered_map<std::string_view, Op>& function_table() {
  static const std::unordered_map<std::string_view, Op> table = {
      {"sin", Op::Sin}, {"cos", Op::Cos},   {"exp", Op::Exp},
      {"log", Op::Log}, {"sqrt", Op::Sqrt}, {"tanh", Op::Tanh},
  };
  return table;
}

const char* function_name(Op op) {
  switch (op) {
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Tanh: return "tanh";
    default: return "?";
  }
}

// Recursive-descent parser. Grammar (see docs/expression_grammar.md):
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' exponent)?
//   exponent:= '-' exponent | power
//   primary := number | identifier | identifier '(' expr ')' | '(' expr ')'
class Parser {
 public:
  Parser(std::string_view text, const std::vector<std::string>& vars) : text_(text), vars_(vars) {}

  NodePtr parse() {
    skip_ws();
    if (at_end()) throw SyntaxError(pos_, "empty expression");
    NodePtr e = parse_expr();
    skip_ws();
    if (!at_end()) throw SyntaxError(pos_, std::string("unexpected '") + text_[pos_] + "'");
    return e;
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return at_end() ? '\0' : text_[pos_]; }
  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  NodePtr parse_expr() {
    NodePtr lhs = parse_term();
    for (;;) {
      skip_ws();
      char c = peek();
      if (c != '+' && c != '-') return lhs;
      ++pos_;
      NodePtr rhs = parse_term();
      lhs = make_binary(c == '+' ? Op::Add : Op::Sub, lhs, rhs);
    }
  }

  NodePtr parse_term() {
    NodePtr lhs = parse_unary();
    for (;;) {
      skip_ws();
      char c = peek();
      if (c != '*' && c != '/') return lhs;
      ++pos_;
      NodePtr rhs = parse_unary();
      lhs = make_binary(c == '*' ? Op::Mul : Op::Div, lhs, rhs);
    }
  }

  NodePtr parse_unary() {
    skip_ws();
    if (peek() == '-') {
      ++pos_;
      return make_unary(Op::Neg, parse_unary());
    }
    return parse_power();
  }

  NodePtr parse_power() {
    NodePtr base = parse_primary();
    skip_ws();
    if (peek() != '^') return base;
    ++pos_;
    NodePtr exponent = parse_exponent();
    // Integer literal exponents (possibly negated) become repeated multiplication.
    const Node* e = exponent.get();
    bool negated = false;
    if (e->op == Op::Neg && e->lhs->op == Op::Const) {
      negated = true;
      e = e->lhs.get();
    }
    if (e->op == Op::Const && std::floor(e->value) == e->value && std::abs(e->value) <= 1 << 20) {
      int n = static_cast<int>(e->value);
      return make_intpow(base, negated ? -n : n);
    }
    return make_binary(Op::Pow, base, exponent);
  }

  NodePtr parse_exponent() {
    skip_ws();
    if (peek() == '-') {
      ++pos_;
      return make_unary(Op::Neg, parse_exponent());
    }
    return parse_power();
  }

  NodePtr parse_primary() {
    skip_ws();
    if (at_end()) throw SyntaxError(pos_, "unexpected end of input");
    char c = peek();
    if (c == '(') {
      ++pos_;
      NodePtr inner = parse_expr();
      skip_ws();
      if (peek() != ')') throw SyntaxError(pos_, "expected ')'");
      ++pos_;
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    throw SyntaxError(pos_, std::string("unexpected '") + c + "'");
  }

  NodePtr parse_number() {
    std::size_t start = pos_;
    auto digits = [&] {
      std::size_t n = 0;
      while (!at_end() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        ++pos_;
        ++n;
      }
      return n;
    };
    std::size_t nd = digits();
    if (peek() == '.') {
      ++pos_;
      nd += digits();
    }
    if (nd == 0) throw SyntaxError(start, "malformed number");
    // Exponent only if a digit follows, so "2e" is not swallowed.
    if (peek() == 'e' || peek() == 'E') {
      std::size_t save = pos_;
      ++pos_;
      if (peek() == '+' || peek() == '-') ++pos_;
      if (digits() == 0) pos_ = save;
    }
    double value = 0.0;
    auto res = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (res.ec != std::errc()) throw SyntaxError(start, "malformed number");
    return make_const(value);
  }

  NodePtr parse_identifier() {
    std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    std::string_view name = text_.substr(start, pos_ - start);
    skip_ws();
    if (peek() == '(') {
      auto it = function_table().find(name);
      if (it == function_table().end()) throw UnknownIdentifier(std::string(name));
      ++pos_;
      NodePtr arg = parse_expr();
      skip_ws();
      if (peek() != ')') throw SyntaxError(pos_, "expected ')'");
      ++pos_;
      return make_unary(it->second, arg);
    }
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i] == name) return make_var(static_cast<int>(i));
    if (name == "pi") return make_const(std::numbers::pi);
    if (name == "e") return make_const(std::numbers::e);
    if (function_table().count(name)) throw SyntaxError(pos_, "expected '(' after " + std::string(name));
    throw UnknownIdentifier(std::string(name));
  }

  std::string_view text_;
  const std::vector<std::string>& vars_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Dual numbers. Nesting Dual<Dual<double>> gives exact second derivatives.

template <class T>
struct Dual {
  T v{};
  T d{};
};

template <class T>
struct Lift {
  static T from(double c) { return T(c); }
  static double primal(const T& x) { return x; }
};

template <class T>
struct Lift<Dual<T>> {
  static Dual<T> from(double c) { return {Lift<T>::from(c), Lift<T>::from(0.0)}; }
  static double primal(const Dual<T>& x) { return Lift<T>::primal(x.v); }
};

template <class T>
Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <class T>
Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <class T>
Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <class T>
Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
template <class T>
Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  T q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}
template <class T>
Dual<T> sin(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {sin(a.v), cos(a.v) * a.d};
}
template <class T>
Dual<T> cos(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {cos(a.v), -(sin(a.v) * a.d)};
}
template <class T>
Dual<T> exp(const Dual<T>& a) {
  using std::exp;
  T e = exp(a.v);
  return {e, e * a.d};
}
template <class T>
Dual<T> log(const Dual<T>& a) {
  using std::log;
  return {log(a.v), a.d / a.v};
}
template <class T>
Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  T r = sqrt(a.v);
  return {r, a.d / (Lift<T>::from(2.0) * r)};
}
template <class T>
Dual<T> tanh(const Dual<T>& a) {
  using std::tanh;
  T t = tanh(a.v);
  return {t, (Lift<T>::from(1.0) - t * t) * a.d};
}

template <class T>
T int_pow(const T& base, int n) {
  int m = n < 0 ? -n : n;
  T result = Lift<T>::from(1.0);
  for (int i = 0; i < m; ++i) result = result * base;
  if (n < 0) {
    if (Lift<T>::primal(result) == 0.0) throw DomainError("division by zero in negative power");
    result = Lift<T>::from(1.0) / result;
  }
  return result;
}

template <class T>
T eval_node(const Node& n, std::span<const T> x, bool derivative) {
  using std::cos;
  using std::exp;
  using std::log;
  using std::sin;
  using std::sqrt;
  using std::tanh;
  switch (n.op) {
    case Op::Const: return Lift<T>::from(n.value);
    case Op::Var: return x[static_cast<std::size_t>(n.index)];
    case Op::Neg: return -eval_node<T>(*n.lhs, x, derivative);
    case Op::Add: return eval_node<T>(*n.lhs, x, derivative) + eval_node<T>(*n.rhs, x, derivative);
    case Op::Sub: return eval_node<T>(*n.lhs, x, derivative) - eval_node<T>(*n.rhs, x, derivative);
    case Op::Mul: return eval_node<T>(*n.lhs, x, derivative) * eval_node<T>(*n.rhs, x, derivative);
    case Op::Div: {
      T b = eval_node<T>(*n.rhs, x, derivative);
      if (Lift<T>::primal(b) == 0.0) throw DomainError("division by zero");
      return eval_node<T>(*n.lhs, x, derivative) / b;
    }
    case Op::IntPow: return int_pow(eval_node<T>(*n.lhs, x, derivative), n.index);
    case Op::Pow: {
      T a = eval_node<T>(*n.lhs, x, derivative);
      if (!(Lift<T>::primal(a) > 0.0)) throw DomainError("non-integer power of nonpositive base");
      return exp(eval_node<T>(*n.rhs, x, derivative) * log(a));
    }
    case Op::Sin: return sin(eval_node<T>(*n.lhs, x, derivative));
    case Op::Cos: return cos(eval_node<T>(*n.lhs, x, derivative));
    case Op::Exp: return exp(eval_node<T>(*n.lhs, x, derivative));
    case Op::Log: {
      T a = eval_node<T>(*n.lhs, x, derivative);
      if (!(Lift<T>::primal(a) > 0.0)) throw DomainError("log of nonpositive value");
      return log(a);
    }
    case Op::Sqrt: {
      T a = eval_node<T>(*n.lhs, x, derivative);
      double p = Lift<T>::primal(a);
      if (p < 0.0) throw DomainError("sqrt of negative value");
      if (derivative && p == 0.0) throw DomainError("sqrt is not differentiable at 0");
      return sqrt(a);
    }
    case Op::Tanh: return tanh(eval_node<T>(*n.lhs, x, derivative));
  }
  throw DomainError("corrupt expression node");
}

void print_node(const Node& n, const std::vector<std::string>& vars, std::string& out) {
  auto print_number = [&](double v) {
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), std::abs(v));
    std::string digits(buf.data(), res.ptr);
    if (std::signbit(v))
      out += "(-" + digits + ")";
    else
      out += digits;
  };
  switch (n.op) {
    case Op::Const: print_number(n.value); return;
    case Op::Var: out += vars[static_cast<std::size_t>(n.index)]; return;
    case Op::Neg:
      out += "(-";
      print_node(*n.lhs, vars, out);
      out += ")";
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Pow: {
      const char* sym = n.op == Op::Add   ? " + "
                        : n.op == Op::Sub ? " - "
                        : n.op == Op::Mul ? "*"
                        : n.op == Op::Div ? "/"
                                          : "^";
      out += "(";
      print_node(*n.lhs, vars, out);
      out += sym;
      print_node(*n.rhs, vars, out);
      out += ")";
      return;
    }
    case Op::IntPow:
      out += "(";
      print_node(*n.lhs, vars, out);
      out += "^";
      if (n.index < 0)
        out += "(-" + std::to_string(-n.index) + ")";
      else
        out += std::to_string(n.index);
      out += ")";
      return;
    default:
      out += function_name(n.op);
      out += "(";
      print_node(*n.lhs, vars, out);
      out += ")";
      return;
  }
}

NodePtr substitute_node(const NodePtr& n, const std::vector<NodePtr>& repl) {
  switch (n->op) {
    case Op::Const: return n;
    case Op::Var: return repl[static_cast<std::size_t>(n->index)];
    default: break;
  }
  auto copy = std::make_shared<Node>(*n);
  if (n->lhs) copy->lhs = substitute_node(n->lhs, repl);
  if (n->rhs) copy->rhs = substitute_node(n->rhs, repl);
  return copy;
}

void mark_uses(const Node& n, std::vector<bool>& used) {
  if (n.op == Op::Var) used[static_cast<std::size_t>(n.index)] = true;
  if (n.lhs) mark_uses(*n.lhs, used);
  if (n.rhs) mark_uses(*n.rhs, used);
}

void collect_factors(const NodePtr& n, std::vector<NodePtr>& out) {
  if (n->op == Op::Mul) {
    collect_factors(n->lhs, out);
    collect_factors(n->rhs, out);
  } else {
    out.push_back(n);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Postfix tape for fast value evaluation.

struct Instr {
  Op op;
  int index;
  double value;
};

struct Tape {
  std::vector<Instr> code;
  std::size_t max_depth = 0;
};

namespace {

std::size_t emit(const Node& n, std::vector<Instr>& code) {
  std::size_t depth = 1;
  if (n.lhs && n.rhs) {
    std::size_t a = emit(*n.lhs, code);
    std::size_t b = emit(*n.rhs, code);
    depth = std::max(a, b + 1);
  } else if (n.lhs) {
    depth = emit(*n.lhs, code);
  }
  code.push_back({n.op, n.index, n.value});
  return depth;
}

std::shared_ptr<const Tape> compile(const Node& root) {
  auto tape = std::make_shared<Tape>();
  tape->max_depth = emit(root, tape->code);
  return tape;
}

double run_tape(const Tape& tape, std::span<const double> x, double* stack) {
  std::size_t sp = 0;
  for (const Instr& in : tape.code) {
    switch (in.op) {
      case Op::Const: stack[sp++] = in.value; break;
      case Op::Var: stack[sp++] = x[static_cast<std::size_t>(in.index)]; break;
      case Op::Neg: stack[sp - 1] = -stack[sp - 1]; break;
      case Op::Add: --sp; stack[sp - 1] += stack[sp]; break;
      case Op::Sub: --sp; stack[sp - 1] -= stack[sp]; break;
      case Op::Mul: --sp; stack[sp - 1] *= stack[sp]; break;
      case Op::Div:
        --sp;
        if (stack[sp] == 0.0) throw DomainError("division by zero");
        stack[sp - 1] /= stack[sp];
        break;
      case Op::IntPow: stack[sp - 1] = int_pow(stack[sp - 1], in.index); break;
      case Op::Pow:
        --sp;
        if (!(stack[sp - 1] > 0.0)) throw DomainError("non-integer power of nonpositive base");
        stack[sp - 1] = std::pow(stack[sp - 1], stack[sp]);
        break;
      case Op::Sin: stack[sp - 1] = std::sin(stack[sp - 1]); break;
      case Op::Cos: stack[sp - 1] = std::cos(stack[sp - 1]); break;
      case Op::Exp: stack[sp - 1] = std::exp(stack[sp - 1]); break;
      case Op::Log:
        if (!(stack[sp - 1] > 0.0)) throw DomainError("log of nonpositive value");
        stack[sp - 1] = std::log(stack[sp - 1]);
        break;
      case Op::Sqrt:
        if (stack[sp - 1] < 0.0) throw DomainError("sqrt of negative value");
        stack[sp - 1] = std::sqrt(stack[sp - 1]);
        break;
      case Op::Tanh: stack[sp - 1] = std::tanh(stack[sp - 1]); break;
    }
  }
  return stack[0];
}

}  // namespace

// ---------------------------------------------------------------------------

ScalarExpr::ScalarExpr()
    : ScalarExpr(make_const(0.0), std::make_shared<const std::vector<std::string>>(), "0") {}

ScalarExpr::ScalarExpr(NodePtr root, std::shared_ptr<const std::vector<std::string>> vars,
                       std::string source)
    : root_(std::move(root)), vars_(std::move(vars)), source_(std::move(source)) {
  tape_ = compile(*root_);
}

ScalarExpr ScalarExpr::built(NodePtr root, std::shared_ptr<const std::vector<std::string>> vars) {
  std::string text;
  print_node(*root, *vars, text);
  return ScalarExpr(std::move(root), std::move(vars), std::move(text));
}

ScalarExpr ScalarExpr::parse(std::string_view text, std::vector<std::string> vars) {
  Parser p(text, vars);
  NodePtr root = p.parse();
  return ScalarExpr(std::move(root), std::make_shared<const std::vector<std::string>>(std::move(vars)),
                    std::string(text));
}

ScalarExpr ScalarExpr::constant(double value, std::vector<std::string> vars) {
  return built(make_const(value), std::make_shared<const std::vector<std::string>>(std::move(vars)));
}

ScalarExpr ScalarExpr::variable(std::string_view name, std::vector<std::string> vars) {
  for (std::size_t i = 0; i < vars.size(); ++i)
    if (vars[i] == name)
      return built(make_var(static_cast<int>(i)),
                   std::make_shared<const std::vector<std::string>>(std::move(vars)));
  throw UnknownIdentifier(std::string(name));
}

double ScalarExpr::eval(std::span<const double> point) const {
  if (point.size() != vars_->size())
    throw DimensionMismatch("expression expects " + std::to_string(vars_->size()) +
                            " coordinates, got " + std::to_string(point.size()));
  if (tape_->max_depth <= 64) {
    std::array<double, 64> stack;
    return run_tape(*tape_, point, stack.data());
  }
  std::vector<double> stack(tape_->max_depth);
  return run_tape(*tape_, point, stack.data());
}

double ScalarExpr::eval(const Eigen::VectorXd& point) const {
  return eval(std::span<const double>(point.data(), static_cast<std::size_t>(point.size())));
}

Eigen::VectorXd ScalarExpr::gradient(const Eigen::VectorXd& point) const {
  const std::size_t n = vars_->size();
  if (static_cast<std::size_t>(point.size()) != n)
    throw DimensionMismatch("gradient: point dimension mismatch");
  using D = Dual<double>;
  std::vector<D> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = {point[static_cast<Eigen::Index>(i)], 0.0};
  Eigen::VectorXd g(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    x[i].d = 1.0;
    g[static_cast<Eigen::Index>(i)] = eval_node<D>(*root_, x, true).d;
    x[i].d = 0.0;
  }
  return g;
}

Eigen::MatrixXd ScalarExpr::hessian(const Eigen::VectorXd& point) const {
  const std::size_t n = vars_->size();
  if (static_cast<std::size_t>(point.size()) != n)
    throw DimensionMismatch("hessian: point dimension mismatch");
  using D = Dual<double>;
  using DD = Dual<D>;
  std::vector<DD> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = {{point[static_cast<Eigen::Index>(i)], 0.0}, {0.0, 0.0}};
  const auto ni = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd h(ni, ni);
  for (std::size_t i = 0; i < n; ++i) {
    x[i].d.v = 1.0;
    for (std::size_t j = i; j < n; ++j) {
      x[j].v.d = 1.0;
      double hij = eval_node<DD>(*root_, x, true).d.d;
      x[j].v.d = 0.0;
      h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = hij;
      h(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = hij;
    }
    x[i].d.v = 0.0;
  }
  return h;
}

std::string ScalarExpr::to_string() const {
  std::string out;
  print_node(*root_, *vars_, out);
  return out;
}

ScalarExpr ScalarExpr::rebind(const std::vector<std::string>& new_vars) const {
  std::vector<bool> used = uses();
  std::vector<NodePtr> repl(vars_->size());
  for (std::size_t i = 0; i < vars_->size(); ++i) {
    auto it = std::find(new_vars.begin(), new_vars.end(), (*vars_)[i]);
    if (it == new_vars.end()) {
      if (used[i]) throw UnknownIdentifier((*vars_)[i]);
      repl[i] = make_const(0.0);
      continue;
    }
    repl[i] = make_var(static_cast<int>(it - new_vars.begin()));
  }
  return built(substitute_node(root_, repl), std::make_shared<const std::vector<std::string>>(new_vars));
}

ScalarExpr ScalarExpr::substitute(const std::vector<ScalarExpr>& replacements) const {
  if (replacements.size() != vars_->size())
    throw DimensionMismatch("substitute: one replacement per variable required");
  if (replacements.empty()) return built(root_, std::make_shared<const std::vector<std::string>>());
  const auto& target_vars = replacements.front().vars_;
  std::vector<NodePtr> repl;
  repl.reserve(replacements.size());
  for (const auto& r : replacements) {
    if (*r.vars_ != *target_vars)
      throw DimensionMismatch("substitute: replacements must share one variable list");
    repl.push_back(r.root_);
  }
  return built(substitute_node(root_, repl), target_vars);
}

ScalarExpr ScalarExpr::fix(const std::vector<std::pair<std::string, double>>& values) const {
  std::vector<NodePtr> repl(vars_->size());
  for (std::size_t i = 0; i < vars_->size(); ++i) repl[i] = make_var(static_cast<int>(i));
  for (const auto& [name, v] : values) {
    auto it = std::find(vars_->begin(), vars_->end(), name);
    if (it == vars_->end()) throw UnknownIdentifier(name);
    repl[static_cast<std::size_t>(it - vars_->begin())] = make_const(v);
  }
  return built(substitute_node(root_, repl), vars_);
}

std::vector<ScalarExpr> ScalarExpr::factors() const {
  std::vector<NodePtr> nodes;
  collect_factors(root_, nodes);
  std::vector<ScalarExpr> out;
  out.reserve(nodes.size());
  for (auto& n : nodes) out.push_back(built(n, vars_));
  return out;
}

std::vector<bool> ScalarExpr::uses() const {
  std::vector<bool> used(vars_->size(), false);
  mark_uses(*root_, used);
  return used;
}

bool ScalarExpr::is_constant_zero() const { return root_->op == Op::Const && root_->value == 0.0; }

namespace {
void require_same_vars(const ScalarExpr& a, const ScalarExpr& b) {
  if (a.vars() != b.vars()) throw DimensionMismatch("expressions are over different variable lists");
}
}  // namespace

ScalarExpr operator+(const ScalarExpr& a, const ScalarExpr& b) {
  require_same_vars(a, b);
  return ScalarExpr::built(make_binary(Op::Add, a.root_, b.root_), a.vars_);
}
ScalarExpr operator-(const ScalarExpr& a, const ScalarExpr& b) {
  require_same_vars(a, b);
  return ScalarExpr::built(make_binary(Op::Sub, a.root_, b.root_), a.vars_);
}
ScalarExpr operator*(const ScalarExpr& a, const ScalarExpr& b) {
  require_same_vars(a, b);
  return ScalarExpr::built(make_binary(Op::Mul, a.root_, b.root_), a.vars_);
}
ScalarExpr operator/(const ScalarExpr& a, const ScalarExpr& b) {
  require_same_vars(a, b);
  return ScalarExpr::built(make_binary(Op::Div, a.root_, b.root_), a.vars_);
}
ScalarExpr operator-(const ScalarExpr& a) { return ScalarExpr::built(make_unary(Op::Neg, a.root_), a.vars_); }
ScalarExpr operator*(double a, const ScalarExpr& b) {
  return ScalarExpr::built(make_binary(Op::Mul, make_const(a), b.root_), b.vars_);
}
ScalarExpr operator+(const ScalarExpr& a, double b) {
  return ScalarExpr::built(make_binary(Op::Add, a.root_, make_const(b)), a.vars_);
}

// ---------------------------------------------------------------------------

VectorExpr::VectorExpr(std::vector<ScalarExpr> components) : components_(std::move(components)) {
  if (!components_.empty()) {
    vars_ = components_.front().vars();
    for (const auto& c : components_)
      if (c.vars() != vars_) throw DimensionMismatch("vector components must share one variable list");
  }
}

VectorExpr VectorExpr::parse(const std::vector<std::string>& texts, std::vector<std::string> vars) {
  std::vector<ScalarExpr> comps;
  comps.reserve(texts.size());
  for (const auto& t : texts) comps.push_back(ScalarExpr::parse(t, vars));
  VectorExpr v(std::move(comps));
  v.vars_ = std::move(vars);
  return v;
}

Eigen::VectorXd VectorExpr::eval(const Eigen::VectorXd& point) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(components_.size()));
  for (std::size_t i = 0; i < components_.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = components_[i].eval(point);
  return out;
}

Eigen::MatrixXd VectorExpr::jacobian(const Eigen::VectorXd& point) const {
  Eigen::MatrixXd j(static_cast<Eigen::Index>(components_.size()), point.size());
  for (std::size_t i = 0; i < components_.size(); ++i)
    j.row(static_cast<Eigen::Index>(i)) = components_[i].gradient(point).transpose();
  return j;
}

VectorExpr VectorExpr::rebind(const std::vector<std::string>& new_vars) const {
  std::vector<ScalarExpr> comps;
  for (const auto& c : components_) comps.push_back(c.rebind(new_vars));
  VectorExpr v(std::move(comps));
  v.vars_ = new_vars;
  return v;
}

VectorExpr VectorExpr::compose(const VectorExpr& inner) const {
  if (inner.size() != vars_.size())
    throw DimensionMismatch("compose: inner map has " + std::to_string(inner.size()) +
                            " components, outer expects " + std::to_string(vars_.size()));
  std::vector<ScalarExpr> comps;
  for (const auto& c : components_) comps.push_back(c.substitute(inner.components()));
  VectorExpr v(std::move(comps));
  v.vars_ = inner.vars();
  return v;
}

std::vector<std::string> concat_vars(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> out = a;
  std::unordered_set<std::string> seen(a.begin(), a.end());
  for (const auto& n : b) {
    if (!seen.insert(n).second) throw DimensionMismatch("duplicate coordinate name '" + n + "'");
    out.push_back(n);
  }
  return out;
}

}  // namespace conormal
