#pragma once

// Differentiable scalar fields assembled from expression leaves, arithmetic,
// and components of linear solves.  A solve node A(p) u = b(p) differentiates
// to another solve against the same matrix:
//   A u' = b' - A' u,
// so quantities defined through an inverse Hessian stay exact to all
// derivative orders while only ever factoring the matrix numerically.
//
// Evaluation is per-point through an EvalContext that memoizes node values,
// LU factorizations (one per shared matrix) and solve solutions.  The whole
// layer is single threaded; derivative results are cached on the nodes so a
// shared subterm differentiates once.

#include <map>
#include <memory>
#include <span>
#include <utility>
#include <unordered_map>
#include <vector>

#include "algflow/expr.hpp"
#include "algflow/linalg.hpp"

namespace algflow {

enum class FieldKind : std::uint8_t { Const, Leaf, Add, Sub, Mul, Neg, SolveComp };

class Field;
struct MatrixField;
struct SolveSystem;

struct FieldNode {
  FieldKind kind;
  double cval = 0.0;                        // Const
  Expr leaf;                                // Leaf
  std::shared_ptr<const FieldNode> a, b;    // Add/Sub/Mul/Neg
  std::shared_ptr<const SolveSystem> sys;   // SolveComp
  int comp = -1;                            // SolveComp

  mutable std::map<int, std::shared_ptr<const FieldNode>> diff_cache;
};

class Field {
 public:
  Field() : node_(zero_node()) {}
  explicit Field(std::shared_ptr<const FieldNode> n) : node_(std::move(n)) {}

  const FieldNode& node() const { return *node_; }
  const std::shared_ptr<const FieldNode>& ptr() const { return node_; }
  bool is_const() const { return node_->kind == FieldKind::Const; }
  bool is_const(double v) const { return is_const() && node_->cval == v; }
  double const_value() const { return node_->cval; }

 private:
  static const std::shared_ptr<const FieldNode>& zero_node() {
    static const std::shared_ptr<const FieldNode> z = [] {
      auto n = std::make_shared<FieldNode>();
      n->kind = FieldKind::Const;
      n->cval = 0.0;
      return n;
    }();
    return z;
  }

  std::shared_ptr<const FieldNode> node_;
};

// Square matrix of fields, shared so every solve against it reuses one
// factorization per evaluation point.
struct MatrixField {
  int dim = 0;
  std::vector<Field> entries;  // row-major dim*dim

  const Field& at(int i, int j) const {
    return entries[static_cast<std::size_t>(i) * static_cast<std::size_t>(dim) +
                   static_cast<std::size_t>(j)];
  }
};

struct SolveSystem {
  std::shared_ptr<const MatrixField> matrix;
  std::vector<Field> rhs;

  mutable std::map<int, std::shared_ptr<const SolveSystem>> diff_cache;
};

inline Field field_const(double v) {
  auto n = std::make_shared<FieldNode>();
  n->kind = FieldKind::Const;
  n->cval = v;
  return Field(std::move(n));
}

inline Field field_expr(Expr e) {
  if (e.is_constant()) return field_const(e.constant_value());
  auto n = std::make_shared<FieldNode>();
  n->kind = FieldKind::Leaf;
  n->leaf = std::move(e);
  return Field(std::move(n));
}

namespace detail {
inline Field field_binary(FieldKind k, const Field& a, const Field& b) {
  auto n = std::make_shared<FieldNode>();
  n->kind = k;
  n->a = a.ptr();
  n->b = b.ptr();
  return Field(std::move(n));
}
}  // namespace detail

inline Field fneg(const Field& u) {
  if (u.is_const()) return field_const(-u.const_value());
  if (u.node().kind == FieldKind::Neg) return Field(u.node().a);
  auto n = std::make_shared<FieldNode>();
  n->kind = FieldKind::Neg;
  n->a = u.ptr();
  return Field(std::move(n));
}

inline Field fadd(const Field& a, const Field& b) {
  if (a.is_const() && b.is_const()) return field_const(a.const_value() + b.const_value());
  if (a.is_const(0.0)) return b;
  if (b.is_const(0.0)) return a;
  return detail::field_binary(FieldKind::Add, a, b);
}

inline Field fsub(const Field& a, const Field& b) {
  if (a.is_const() && b.is_const()) return field_const(a.const_value() - b.const_value());
  if (b.is_const(0.0)) return a;
  if (a.is_const(0.0)) return fneg(b);
  return detail::field_binary(FieldKind::Sub, a, b);
}

inline Field fmul(const Field& a, const Field& b) {
  if (a.is_const() && b.is_const()) return field_const(a.const_value() * b.const_value());
  if (a.is_const(0.0) || b.is_const(0.0)) return field_const(0.0);
  if (a.is_const(1.0)) return b;
  if (b.is_const(1.0)) return a;
  return detail::field_binary(FieldKind::Mul, a, b);
}

inline Field fscale(double c, const Field& u) { return fmul(field_const(c), u); }

// Components of matrix^{-1} rhs as fields.
inline std::vector<Field> solve_fields(std::shared_ptr<const MatrixField> matrix,
                                       std::vector<Field> rhs) {
  bool zero_rhs = true;
  for (const auto& r : rhs)
    if (!r.is_const(0.0)) {
      zero_rhs = false;
      break;
    }
  if (zero_rhs) return std::vector<Field>(rhs.size(), field_const(0.0));
  auto sys = std::make_shared<SolveSystem>();
  sys->matrix = std::move(matrix);
  sys->rhs = std::move(rhs);
  std::vector<Field> out;
  const int dim = sys->matrix->dim;
  out.reserve(static_cast<std::size_t>(dim));
  for (int k = 0; k < dim; ++k) {
    auto n = std::make_shared<FieldNode>();
    n->kind = FieldKind::SolveComp;
    n->sys = sys;
    n->comp = k;
    out.push_back(Field(std::move(n)));
  }
  return out;
}

inline Field fdiff(const Field& f, int var);

namespace detail {
inline std::shared_ptr<const SolveSystem> diff_system(
    const std::shared_ptr<const SolveSystem>& sys, int var) {
  auto it = sys->diff_cache.find(var);
  if (it != sys->diff_cache.end()) return it->second;

  const MatrixField& A = *sys->matrix;
  const int dim = A.dim;
  // The solution components of the base system, reconstructed as fields.
  std::vector<Field> u;
  u.reserve(static_cast<std::size_t>(dim));
  for (int k = 0; k < dim; ++k) {
    auto n = std::make_shared<FieldNode>();
    n->kind = FieldKind::SolveComp;
    n->sys = sys;
    n->comp = k;
    u.push_back(Field(std::move(n)));
  }

  auto d = std::make_shared<SolveSystem>();
  d->matrix = sys->matrix;
  d->rhs.reserve(static_cast<std::size_t>(dim));
  for (int j = 0; j < dim; ++j) {
    Field r = fdiff(sys->rhs[static_cast<std::size_t>(j)], var);
    for (int l = 0; l < dim; ++l)
      r = fsub(r, fmul(fdiff(A.at(j, l), var), u[static_cast<std::size_t>(l)]));
    d->rhs.push_back(std::move(r));
  }
  sys->diff_cache.emplace(var, d);
  return d;
}
}  // namespace detail

inline Field fdiff(const Field& f, int var) {
  const FieldNode& n = f.node();
  auto it = n.diff_cache.find(var);
  if (it != n.diff_cache.end()) return Field(it->second);

  Field r;
  switch (n.kind) {
    case FieldKind::Const:
      r = field_const(0.0);
      break;
    case FieldKind::Leaf:
      r = field_expr(differentiate(n.leaf, var));
      break;
    case FieldKind::Add:
      r = fadd(fdiff(Field(n.a), var), fdiff(Field(n.b), var));
      break;
    case FieldKind::Sub:
      r = fsub(fdiff(Field(n.a), var), fdiff(Field(n.b), var));
      break;
    case FieldKind::Mul:
      r = fadd(fmul(fdiff(Field(n.a), var), Field(n.b)),
               fmul(Field(n.a), fdiff(Field(n.b), var)));
      break;
    case FieldKind::Neg:
      r = fneg(fdiff(Field(n.a), var));
      break;
    case FieldKind::SolveComp: {
      auto dsys = detail::diff_system(n.sys, var);
      auto out = std::make_shared<FieldNode>();
      out->kind = FieldKind::SolveComp;
      out->sys = std::move(dsys);
      out->comp = n.comp;
      r = Field(std::move(out));
      break;
    }
  }
  n.diff_cache.emplace(var, r.ptr());
  return r;
}

class EvalContext {
 public:
  explicit EvalContext(std::vector<double> point) : point_(std::move(point)) {}

  std::span<const double> point() const { return point_; }

  // The root is pinned for the lifetime of the context: the caches key on
  // node addresses, so every node that may have a cache entry has to stay
  // alive as long as the context does.
  double eval(const Field& f) {
    pinned_.push_back(f.ptr());
    return eval_node(f.node());
  }

 private:
  double eval_node(const FieldNode& n) {
    if (n.kind == FieldKind::Const) return n.cval;
    auto it = values_.find(&n);
    if (it != values_.end()) return it->second;
    double v = 0.0;
    switch (n.kind) {
      case FieldKind::Const:
        break;
      case FieldKind::Leaf:
        v = n.leaf.eval(point_);
        break;
      case FieldKind::Add:
        v = eval_node(*n.a) + eval_node(*n.b);
        break;
      case FieldKind::Sub:
        v = eval_node(*n.a) - eval_node(*n.b);
        break;
      case FieldKind::Mul:
        v = eval_node(*n.a) * eval_node(*n.b);
        break;
      case FieldKind::Neg:
        v = -eval_node(*n.a);
        break;
      case FieldKind::SolveComp:
        v = solve(*n.sys)[static_cast<std::size_t>(n.comp)];
        break;
    }
    values_.emplace(&n, v);
    return v;
  }

  const Lu& factor(const MatrixField& m) {
    auto it = lus_.find(&m);
    if (it != lus_.end()) return it->second;
    Mat a(m.dim, m.dim);
    for (int i = 0; i < m.dim; ++i)
      for (int j = 0; j < m.dim; ++j) a(i, j) = eval_node(m.at(i, j).node());
    return lus_.emplace(&m, lu_factor(std::move(a))).first->second;
  }

  const std::vector<double>& solve(const SolveSystem& sys) {
    auto it = solutions_.find(&sys);
    if (it != solutions_.end()) return it->second;
    const Lu& lu = factor(*sys.matrix);
    std::vector<double> b(sys.rhs.size());
    for (std::size_t j = 0; j < sys.rhs.size(); ++j) b[j] = eval_node(sys.rhs[j].node());
    return solutions_.emplace(&sys, lu_solve(lu, b)).first->second;
  }

  std::vector<double> point_;
  std::vector<std::shared_ptr<const FieldNode>> pinned_;
  std::unordered_map<const FieldNode*, double> values_;
  std::unordered_map<const MatrixField*, Lu> lus_;
  std::unordered_map<const SolveSystem*, std::vector<double>> solutions_;
};

}  // namespace algflow
