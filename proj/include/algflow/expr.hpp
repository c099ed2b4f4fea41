#pragma once

// Immutable scalar expression trees over a fixed node set:
//   constant, variable, -u, sin u, cos u, exp u, log u, sqrt u,
//   a+b, a-b, a*b, a/b, a^b.
// Construction applies constant folding and 0/1 identity absorption only;
// there is no general simplifier, so differentiation stays closed over this
// node set and printed output re-parses to the identical tree.
//
// Grammar (source form):
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := atom ('^' factor)?
//   atom   := number | ident | ident '(' expr ')' | '(' expr ')' | '-' atom
//
// Evaluation raises DomainError for log of a non-positive value, division by
// zero, sqrt of a negative value, invalid powers, or a non-finite result;
// it never returns a silent NaN.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace algflow {

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t byte_offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

enum class ExprKind : std::uint8_t {
  Constant,
  Variable,
  Neg,
  Sin,
  Cos,
  Exp,
  Log,
  Sqrt,
  Add,
  Sub,
  Mul,
  Div,
  Pow
};

class Expr {
 public:
  struct Node {
    ExprKind kind;
    double value = 0.0;          // Constant
    int var = -1;                // Variable index into the evaluation point
    std::string name;            // Variable spelling
    std::shared_ptr<const Node> a, b;
  };

  Expr() : node_(zero_node()) {}
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

  const Node& node() const { return *node_; }
  const std::shared_ptr<const Node>& ptr() const { return node_; }
  ExprKind kind() const { return node_->kind; }

  bool is_constant() const { return node_->kind == ExprKind::Constant; }
  bool is_constant(double v) const { return is_constant() && node_->value == v; }
  double constant_value() const { return node_->value; }

  double eval(std::span<const double> point) const { return eval_node(node_.get(), point); }

 private:
  static const std::shared_ptr<const Node>& zero_node() {
    static const std::shared_ptr<const Node> z =
        std::make_shared<Node>(Node{ExprKind::Constant, 0.0, -1, {}, nullptr, nullptr});
    return z;
  }

  static double checked(double v, const char* what) {
    if (!std::isfinite(v)) throw DomainError(std::string("non-finite result in ") + what);
    return v;
  }

  static double eval_node(const Node* n, std::span<const double> p) {
    switch (n->kind) {
      case ExprKind::Constant:
        return n->value;
      case ExprKind::Variable:
        if (n->var < 0 || static_cast<std::size_t>(n->var) >= p.size())
          throw DomainError("variable '" + n->name + "' not bound at evaluation point");
        return p[static_cast<std::size_t>(n->var)];
      case ExprKind::Neg:
        return -eval_node(n->a.get(), p);
      case ExprKind::Sin:
        return checked(std::sin(eval_node(n->a.get(), p)), "sin");
      case ExprKind::Cos:
        return checked(std::cos(eval_node(n->a.get(), p)), "cos");
      case ExprKind::Exp:
        return checked(std::exp(eval_node(n->a.get(), p)), "exp");
      case ExprKind::Log: {
        const double v = eval_node(n->a.get(), p);
        if (v <= 0.0) throw DomainError("log of non-positive value");
        return checked(std::log(v), "log");
      }
      case ExprKind::Sqrt: {
        const double v = eval_node(n->a.get(), p);
        if (v < 0.0) throw DomainError("sqrt of negative value");
        return checked(std::sqrt(v), "sqrt");
      }
      case ExprKind::Add:
        return checked(eval_node(n->a.get(), p) + eval_node(n->b.get(), p), "+");
      case ExprKind::Sub:
        return checked(eval_node(n->a.get(), p) - eval_node(n->b.get(), p), "-");
      case ExprKind::Mul:
        return checked(eval_node(n->a.get(), p) * eval_node(n->b.get(), p), "*");
      case ExprKind::Div: {
        const double den = eval_node(n->b.get(), p);
        if (den == 0.0) throw DomainError("division by zero");
        return checked(eval_node(n->a.get(), p) / den, "/");
      }
      case ExprKind::Pow: {
        const double base = eval_node(n->a.get(), p);
        const double e = eval_node(n->b.get(), p);
        if (base == 0.0 && e < 0.0) throw DomainError("zero base with negative exponent");
        if (base < 0.0 && std::floor(e) != e)
          throw DomainError("negative base with non-integer exponent");
        return checked(std::pow(base, e), "^");
      }
    }
    throw DomainError("corrupt expression node");
  }

  std::shared_ptr<const Node> node_;
};

namespace detail {
inline Expr make_node(ExprKind k, double value, int var, std::string name, Expr a, Expr b) {
  auto n = std::make_shared<Expr::Node>();
  n->kind = k;
  n->value = value;
  n->var = var;
  n->name = std::move(name);
  if (k != ExprKind::Constant && k != ExprKind::Variable) n->a = a.ptr();
  switch (k) {
    case ExprKind::Add:
    case ExprKind::Sub:
    case ExprKind::Mul:
    case ExprKind::Div:
    case ExprKind::Pow:
      n->b = b.ptr();
      break;
    default:
      break;
  }
  return Expr(std::move(n));
}
}  // namespace detail

inline Expr constant(double v) {
  return detail::make_node(ExprKind::Constant, v, -1, {}, Expr(), Expr());
}

inline Expr variable(int index, std::string name) {
  return detail::make_node(ExprKind::Variable, 0.0, index, std::move(name), Expr(), Expr());
}

inline Expr neg(const Expr& u) {
  if (u.is_constant()) return constant(-u.constant_value());
  if (u.kind() == ExprKind::Neg) return Expr(u.node().a);
  return detail::make_node(ExprKind::Neg, 0, -1, {}, u, Expr());
}

inline Expr add(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) {
    const double v = a.constant_value() + b.constant_value();
    if (std::isfinite(v)) return constant(v);
  }
  if (a.is_constant(0.0)) return b;
  if (b.is_constant(0.0)) return a;
  return detail::make_node(ExprKind::Add, 0, -1, {}, a, b);
}

inline Expr sub(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) {
    const double v = a.constant_value() - b.constant_value();
    if (std::isfinite(v)) return constant(v);
  }
  if (b.is_constant(0.0)) return a;
  if (a.is_constant(0.0)) return neg(b);
  return detail::make_node(ExprKind::Sub, 0, -1, {}, a, b);
}

inline Expr mul(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) {
    const double v = a.constant_value() * b.constant_value();
    if (std::isfinite(v)) return constant(v);
  }
  if (a.is_constant(0.0) || b.is_constant(0.0)) return constant(0.0);
  if (a.is_constant(1.0)) return b;
  if (b.is_constant(1.0)) return a;
  return detail::make_node(ExprKind::Mul, 0, -1, {}, a, b);
}

inline Expr div(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant() && b.constant_value() != 0.0) {
    const double v = a.constant_value() / b.constant_value();
    if (std::isfinite(v)) return constant(v);
  }
  if (b.is_constant(1.0)) return a;
  return detail::make_node(ExprKind::Div, 0, -1, {}, a, b);
}

inline Expr pow(const Expr& a, const Expr& b) {
  if (b.is_constant(1.0)) return a;
  if (b.is_constant(0.0)) return constant(1.0);
  if (a.is_constant() && b.is_constant()) {
    const double base = a.constant_value(), e = b.constant_value();
    const bool ok = !(base == 0.0 && e < 0.0) && !(base < 0.0 && std::floor(e) != e);
    if (ok) {
      const double v = std::pow(base, e);
      if (std::isfinite(v)) return constant(v);
    }
  }
  return detail::make_node(ExprKind::Pow, 0, -1, {}, a, b);
}

inline Expr sin(const Expr& u) {
  if (u.is_constant()) return constant(std::sin(u.constant_value()));
  return detail::make_node(ExprKind::Sin, 0, -1, {}, u, Expr());
}
inline Expr cos(const Expr& u) {
  if (u.is_constant()) return constant(std::cos(u.constant_value()));
  return detail::make_node(ExprKind::Cos, 0, -1, {}, u, Expr());
}
inline Expr exp(const Expr& u) {
  if (u.is_constant()) {
    const double v = std::exp(u.constant_value());
    if (std::isfinite(v)) return constant(v);
  }
  return detail::make_node(ExprKind::Exp, 0, -1, {}, u, Expr());
}
inline Expr log(const Expr& u) {
  if (u.is_constant() && u.constant_value() > 0.0) return constant(std::log(u.constant_value()));
  return detail::make_node(ExprKind::Log, 0, -1, {}, u, Expr());
}
inline Expr sqrt(const Expr& u) {
  if (u.is_constant() && u.constant_value() >= 0.0)
    return constant(std::sqrt(u.constant_value()));
  return detail::make_node(ExprKind::Sqrt, 0, -1, {}, u, Expr());
}

inline bool structurally_equal(const Expr& x, const Expr& y) {
  const Expr::Node* a = &x.node();
  const Expr::Node* b = &y.node();
  if (a == b) return true;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case ExprKind::Constant:
      return a->value == b->value;
    case ExprKind::Variable:
      return a->var == b->var && a->name == b->name;
    default:
      break;
  }
  if (static_cast<bool>(a->a) != static_cast<bool>(b->a)) return false;
  if (a->a && !structurally_equal(Expr(a->a), Expr(b->a))) return false;
  if (static_cast<bool>(a->b) != static_cast<bool>(b->b)) return false;
  if (a->b && !structurally_equal(Expr(a->b), Expr(b->b))) return false;
  return true;
}

// d expr / d variable(var).  Exact, closed over the node set; repeated
// application supports arbitrary order.
inline Expr differentiate(const Expr& e, int var) {
  std::unordered_map<const Expr::Node*, Expr> memo;
  struct Walker {
    int var;
    std::unordered_map<const Expr::Node*, Expr>& memo;
    Expr d(const Expr& e) {
      const Expr::Node* n = &e.node();
      auto it = memo.find(n);
      if (it != memo.end()) return it->second;
      Expr r = compute(e);
      memo.emplace(n, r);
      return r;
    }
    Expr compute(const Expr& e) {
      const Expr::Node& n = e.node();
      const auto A = [&] { return Expr(n.a); };
      const auto B = [&] { return Expr(n.b); };
      switch (n.kind) {
        case ExprKind::Constant:
          return constant(0.0);
        case ExprKind::Variable:
          return constant(n.var == var ? 1.0 : 0.0);
        case ExprKind::Neg:
          return neg(d(A()));
        case ExprKind::Sin:
          return mul(cos(A()), d(A()));
        case ExprKind::Cos:
          return neg(mul(sin(A()), d(A())));
        case ExprKind::Exp:
          return mul(exp(A()), d(A()));
        case ExprKind::Log:
          return div(d(A()), A());
        case ExprKind::Sqrt:
          return div(d(A()), mul(constant(2.0), sqrt(A())));
        case ExprKind::Add:
          return add(d(A()), d(B()));
        case ExprKind::Sub:
          return sub(d(A()), d(B()));
        case ExprKind::Mul:
          return add(mul(d(A()), B()), mul(A(), d(B())));
        case ExprKind::Div:
          return div(sub(mul(d(A()), B()), mul(A(), d(B()))), mul(B(), B()));
        case ExprKind::Pow: {
          if (B().is_constant()) {
            const double c = B().constant_value();
            return mul(mul(constant(c), pow(A(), constant(c - 1.0))), d(A()));
          }
          // d(u^v) = u^v (v' log u + v u'/u)
          return mul(e, add(mul(d(B()), log(A())), mul(B(), div(d(A()), A()))));
        }
      }
      return constant(0.0);
    }
  } w{var, memo};
  return w.d(e);
}

namespace detail {
inline void print_number(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

inline void print_node(std::string& out, const Expr::Node& n);

inline void print_child(std::string& out, const Expr::Node& n) {
  const bool atom = n.kind == ExprKind::Variable ||
                    (n.kind == ExprKind::Constant && n.value >= 0.0 &&
                     !std::signbit(n.value)) ||
                    n.kind == ExprKind::Sin || n.kind == ExprKind::Cos ||
                    n.kind == ExprKind::Exp || n.kind == ExprKind::Log ||
                    n.kind == ExprKind::Sqrt;
  if (atom) {
    print_node(out, n);
  } else {
    out += '(';
    print_node(out, n);
    out += ')';
  }
}

inline void print_node(std::string& out, const Expr::Node& n) {
  const auto binary = [&](const char* op) {
    print_child(out, *n.a);
    out += ' ';
    out += op;
    out += ' ';
    print_child(out, *n.b);
  };
  switch (n.kind) {
    case ExprKind::Constant:
      print_number(out, n.value);
      return;
    case ExprKind::Variable:
      out += n.name;
      return;
    case ExprKind::Neg:
      out += '-';
      print_child(out, *n.a);
      return;
    case ExprKind::Sin:
      out += "sin(";
      print_node(out, *n.a);
      out += ')';
      return;
    case ExprKind::Cos:
      out += "cos(";
      print_node(out, *n.a);
      out += ')';
      return;
    case ExprKind::Exp:
      out += "exp(";
      print_node(out, *n.a);
      out += ')';
      return;
    case ExprKind::Log:
      out += "log(";
      print_node(out, *n.a);
      out += ')';
      return;
    case ExprKind::Sqrt:
      out += "sqrt(";
      print_node(out, *n.a);
      out += ')';
      return;
    case ExprKind::Add:
      binary("+");
      return;
    case ExprKind::Sub:
      binary("-");
      return;
    case ExprKind::Mul:
      binary("*");
      return;
    case ExprKind::Div:
      binary("/");
      return;
    case ExprKind::Pow:
      binary("^");
      return;
  }
}
}  // namespace detail

inline std::string print(const Expr& e) {
  std::string out;
  detail::print_node(out, e.node());
  return out;
}

// Recursive-descent parser over the grammar above.  `vars` supplies the
// declared names in evaluation-point order; any other identifier not naming
// a function is rejected with its byte offset.
class Parser {
 public:
  Parser(std::string_view src, const std::vector<std::string>& vars)
      : src_(src), vars_(vars) {}

  Expr parse() {
    skip_ws();
    Expr e = parse_expr();
    skip_ws();
    if (pos_ != src_.size()) throw ParseError("unexpected trailing input", pos_);
    return e;
  }

 private:
  std::string_view src_;
  const std::vector<std::string>& vars_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < src_.size() &&
           (src_[pos_] == ' ' || src_[pos_] == '\t' || src_[pos_] == '\n' || src_[pos_] == '\r'))
      ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  char peek() {
    skip_ws();
    return pos_ < src_.size() ? src_[pos_] : '\0';
  }

  Expr parse_expr() {
    Expr e = parse_term();
    for (;;) {
      if (eat('+'))
        e = add(e, parse_term());
      else if (eat('-'))
        e = sub(e, parse_term());
      else
        return e;
    }
  }

  Expr parse_term() {
    Expr e = parse_factor();
    for (;;) {
      if (eat('*'))
        e = mul(e, parse_factor());
      else if (eat('/'))
        e = div(e, parse_factor());
      else
        return e;
    }
  }

  Expr parse_factor() {
    Expr base = parse_atom();
    if (eat('^')) return pow(base, parse_factor());
    return base;
  }

  static bool ident_start(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
  }
  static bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }

  Expr parse_atom() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("unexpected end of input", pos_);
    const char c = src_[pos_];
    if (c == '-') {
      ++pos_;
      return neg(parse_atom());
    }
    if (c == '(') {
      ++pos_;
      Expr e = parse_expr();
      if (!eat(')')) throw ParseError("expected ')'", pos_);
      return e;
    }
    if ((c >= '0' && c <= '9') || c == '.') return parse_number();
    if (ident_start(c)) return parse_ident();
    throw ParseError(std::string("unexpected character '") + c + "'", pos_);
  }

  Expr parse_number() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && ((src_[pos_] >= '0' && src_[pos_] <= '9') || src_[pos_] == '.'))
      ++pos_;
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < src_.size() && (src_[p] == '+' || src_[p] == '-')) ++p;
      if (p < src_.size() && src_[p] >= '0' && src_[p] <= '9') {
        pos_ = p;
        while (pos_ < src_.size() && src_[pos_] >= '0' && src_[pos_] <= '9') ++pos_;
      }
    }
    const std::string text(src_.substr(start, pos_ - start));
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size() || !std::isfinite(v))
      throw ParseError("malformed number '" + text + "'", start);
    return constant(v);
  }

  Expr parse_ident() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && ident_char(src_[pos_])) ++pos_;
    const std::string name(src_.substr(start, pos_ - start));
    if (peek() == '(') {
      ++pos_;  // consume '('
      Expr arg = parse_expr();
      if (!eat(')')) throw ParseError("expected ')'", pos_);
      if (name == "sin") return sin(arg);
      if (name == "cos") return cos(arg);
      if (name == "exp") return exp(arg);
      if (name == "log") return log(arg);
      if (name == "sqrt") return sqrt(arg);
      throw ParseError("unknown function '" + name + "'", start);
    }
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i] == name) return variable(static_cast<int>(i), name);
    throw ParseError("unknown variable '" + name + "'", start);
  }
};

inline Expr parse(std::string_view src, const std::vector<std::string>& vars) {
  return Parser(src, vars).parse();
}

// Coordinate layout shared by all modules: x1..xn then y1..ym, with any
// scenario parameters substituted away before expressions reach this layer.
struct Coords {
  int n = 0;
  int m = 0;
  std::vector<std::string> names;

  static Coords make(int n, int m) {
    Coords c;
    c.n = n;
    c.m = m;
    for (int i = 1; i <= n; ++i) c.names.push_back("x" + std::to_string(i));
    for (int a = 1; a <= m; ++a) c.names.push_back("y" + std::to_string(a));
    return c;
  }

  int dim() const { return n + m; }
  int x_index(int i) const { return i; }          // 0-based base slot
  int y_index(int a) const { return n + a; }      // 0-based fiber slot
  Expr x(int i) const { return variable(i, names[i]); }
  Expr y(int a) const { return variable(n + a, names[n + a]); }
};

// Replaces every occurrence of variable `var` with `repl` (used to bind
// named scenario parameters to their values before geometry sees them).
inline Expr substitute(const Expr& e, int var, const Expr& repl) {
  const Expr::Node& n = e.node();
  switch (n.kind) {
    case ExprKind::Constant:
      return e;
    case ExprKind::Variable:
      return n.var == var ? repl : e;
    default:
      break;
  }
  const Expr a = n.a ? substitute(Expr(n.a), var, repl) : Expr();
  const Expr b = n.b ? substitute(Expr(n.b), var, repl) : Expr();
  switch (n.kind) {
    case ExprKind::Neg:
      return neg(a);
    case ExprKind::Sin:
      return sin(a);
    case ExprKind::Cos:
      return cos(a);
    case ExprKind::Exp:
      return exp(a);
    case ExprKind::Log:
      return log(a);
    case ExprKind::Sqrt:
      return sqrt(a);
    case ExprKind::Add:
      return add(a, b);
    case ExprKind::Sub:
      return sub(a, b);
    case ExprKind::Mul:
      return mul(a, b);
    case ExprKind::Div:
      return div(a, b);
    case ExprKind::Pow:
      return pow(a, b);
    default:
      return e;
  }
}

}  // namespace algflow
