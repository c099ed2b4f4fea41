#pragma once

// Anchored structure data in a single chart: an anchor matrix rho[alpha][i]
// mapping section directions to base directions, and structure functions
// C[alpha][beta][gamma], all expressions in the base coordinates.  C is
// antisymmetrized in its lower pair at construction.
//
// Validity in the chart means two residuals vanish:
//   (1) rho_a^i d_i rho_b^j - rho_b^i d_i rho_a^j = rho_g^j C_ab^g
//   (2) sum over cyclic (a,b,g) of [rho_a^i d_i C_bg^n + C_bg^m C_am^n] = 0
// Both are evaluated pointwise; sweeps live with the caller.

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "algflow/expr.hpp"
#include "algflow/linalg.hpp"

namespace algflow {

enum class AlgebroidKind { TangentLike, LieAlgebra, General };

inline const char* kind_name(AlgebroidKind k) {
  switch (k) {
    case AlgebroidKind::TangentLike: return "tangent-like";
    case AlgebroidKind::LieAlgebra: return "lie-algebra";
    case AlgebroidKind::General: return "general";
  }
  return "?";
}

class Algebroid {
 public:
  // rho is m*n row-major (section index first), c is m*m*m with layout
  // c[((a*m)+b)*m+g] for C_ab^g.
  static Algebroid make(Coords coords, std::vector<Expr> rho, std::vector<Expr> c) {
    Algebroid a;
    a.coords_ = std::move(coords);
    const int n = a.coords_.n, m = a.coords_.m;
    if (static_cast<int>(rho.size()) != m * n)
      throw std::runtime_error("anchor entry count does not match dimensions");
    if (static_cast<int>(c.size()) != m * m * m)
      throw std::runtime_error("structure function count does not match dimensions");
    a.rho_ = std::move(rho);

    a.c_.resize(c.size());
    for (int al = 0; al < m; ++al)
      for (int be = 0; be < m; ++be)
        for (int ga = 0; ga < m; ++ga) {
          const auto ij = static_cast<std::size_t>((al * m + be) * m + ga);
          const auto ji = static_cast<std::size_t>((be * m + al) * m + ga);
          a.c_[ij] = mul(constant(0.5), sub(c[ij], c[ji]));
        }

    a.drho_.resize(static_cast<std::size_t>(m * n * n));
    for (int al = 0; al < m; ++al)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          a.drho_[static_cast<std::size_t>((al * n + i) * n + j)] =
              differentiate(a.rho_at(al, i), a.coords_.x_index(j));

    a.dc_.resize(static_cast<std::size_t>(m * m * m * n));
    for (int al = 0; al < m; ++al)
      for (int be = 0; be < m; ++be)
        for (int ga = 0; ga < m; ++ga)
          for (int j = 0; j < n; ++j)
            a.dc_[static_cast<std::size_t>(((al * m + be) * m + ga) * n + j)] =
                differentiate(a.c_at(al, be, ga), a.coords_.x_index(j));
    return a;
  }

  const Coords& coords() const { return coords_; }
  int n() const { return coords_.n; }
  int m() const { return coords_.m; }

  const Expr& rho_at(int alpha, int i) const {
    return rho_[static_cast<std::size_t>(alpha * coords_.n + i)];
  }
  const Expr& drho_at(int alpha, int i, int j) const {
    return drho_[static_cast<std::size_t>((alpha * coords_.n + i) * coords_.n + j)];
  }
  const Expr& c_at(int alpha, int beta, int gamma) const {
    return c_[static_cast<std::size_t>((alpha * coords_.m + beta) * coords_.m + gamma)];
  }
  const Expr& dc_at(int alpha, int beta, int gamma, int j) const {
    return dc_[static_cast<std::size_t>(((alpha * coords_.m + beta) * coords_.m + gamma) *
                                            coords_.n +
                                        j)];
  }

  bool rho_structurally_zero() const {
    for (const auto& e : rho_)
      if (!e.is_constant(0.0)) return false;
    return true;
  }

  bool c_structurally_zero() const {
    for (const auto& e : c_)
      if (!e.is_constant(0.0)) return false;
    return true;
  }

  bool c_structurally_constant() const {
    for (const auto& e : c_)
      if (!e.is_constant()) return false;
    return true;
  }

  // Max-abs residual of the anchor compatibility equation at p.
  double eq1_residual(std::span<const double> p) const {
    const int n = coords_.n, m = coords_.m;
    std::vector<double> rho_v(static_cast<std::size_t>(m * n));
    std::vector<double> drho_v(static_cast<std::size_t>(m * n * n));
    std::vector<double> c_v(static_cast<std::size_t>(m * m * m));
    for (int al = 0; al < m; ++al)
      for (int i = 0; i < n; ++i) {
        rho_v[static_cast<std::size_t>(al * n + i)] = rho_at(al, i).eval(p);
        for (int j = 0; j < n; ++j)
          drho_v[static_cast<std::size_t>((al * n + i) * n + j)] = drho_at(al, i, j).eval(p);
      }
    for (int al = 0; al < m; ++al)
      for (int be = 0; be < m; ++be)
        for (int ga = 0; ga < m; ++ga)
          c_v[static_cast<std::size_t>((al * m + be) * m + ga)] = c_at(al, be, ga).eval(p);

    double worst = 0.0;
    for (int al = 0; al < m; ++al)
      for (int be = al + 1; be < m; ++be)
        for (int j = 0; j < n; ++j) {
          double lhs = 0.0;
          for (int i = 0; i < n; ++i)
            lhs += rho_v[static_cast<std::size_t>(al * n + i)] *
                       drho_v[static_cast<std::size_t>((be * n + j) * n + i)] -
                   rho_v[static_cast<std::size_t>(be * n + i)] *
                       drho_v[static_cast<std::size_t>((al * n + j) * n + i)];
          double rhs = 0.0;
          for (int ga = 0; ga < m; ++ga)
            rhs += rho_v[static_cast<std::size_t>(ga * n + j)] *
                   c_v[static_cast<std::size_t>((al * m + be) * m + ga)];
          worst = std::max(worst, std::abs(lhs - rhs));
        }
    return worst;
  }

  // Max-abs residual of the cyclic identity at p.
  double eq2_residual(std::span<const double> p) const {
    const int n = coords_.n, m = coords_.m;
    std::vector<double> rho_v(static_cast<std::size_t>(m * n));
    std::vector<double> c_v(static_cast<std::size_t>(m * m * m));
    std::vector<double> dc_v(static_cast<std::size_t>(m * m * m * n));
    for (int al = 0; al < m; ++al)
      for (int i = 0; i < n; ++i) rho_v[static_cast<std::size_t>(al * n + i)] = rho_at(al, i).eval(p);
    for (int al = 0; al < m; ++al)
      for (int be = 0; be < m; ++be)
        for (int ga = 0; ga < m; ++ga) {
          c_v[static_cast<std::size_t>((al * m + be) * m + ga)] = c_at(al, be, ga).eval(p);
          for (int j = 0; j < n; ++j)
            dc_v[static_cast<std::size_t>(((al * m + be) * m + ga) * n + j)] =
                c_at(al, be, ga).is_constant() ? 0.0 : dc_at(al, be, ga, j).eval(p);
        }

    const auto cv = [&](int a, int b, int g) {
      return c_v[static_cast<std::size_t>((a * m + b) * m + g)];
    };
    const auto term = [&](int a, int b, int g, int nu) {
      double t = 0.0;
      for (int i = 0; i < n; ++i)
        t += rho_v[static_cast<std::size_t>(a * n + i)] *
             dc_v[static_cast<std::size_t>(((b * m + g) * m + nu) * n + i)];
      for (int mu = 0; mu < m; ++mu) t += cv(b, g, mu) * cv(a, mu, nu);
      return t;
    };

    double worst = 0.0;
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        for (int g = 0; g < m; ++g)
          for (int nu = 0; nu < m; ++nu)
            worst = std::max(worst,
                             std::abs(term(a, b, g, nu) + term(b, g, a, nu) + term(g, a, b, nu)));
    return worst;
  }

  double anchor_det(std::span<const double> p) const;

 private:
  Coords coords_;
  std::vector<Expr> rho_;
  std::vector<Expr> drho_;
  std::vector<Expr> c_;
  std::vector<Expr> dc_;
};

inline double Algebroid::anchor_det(std::span<const double> p) const {
  if (coords_.m != coords_.n)
    throw std::runtime_error("anchor determinant requires a square anchor");
  Mat a(coords_.m, coords_.n);
  for (int al = 0; al < coords_.m; ++al)
    for (int i = 0; i < coords_.n; ++i) a(al, i) = rho_at(al, i).eval(p);
  return det(a);
}

struct KindCheck {
  bool ok = true;
  std::string message;
};

// Verifies the declared kind against the structural data; anchor
// invertibility for the tangent-like kind is checked by the caller at
// sample points through anchor_det.
inline KindCheck check_kind(const Algebroid& a, AlgebroidKind kind) {
  switch (kind) {
    case AlgebroidKind::TangentLike:
      if (a.m() != a.n()) return {false, "tangent-like requires fiber and base dimensions equal"};
      if (!a.c_structurally_zero())
        return {false, "tangent-like requires vanishing structure functions"};
      return {};
    case AlgebroidKind::LieAlgebra:
      if (!a.rho_structurally_zero()) return {false, "lie-algebra requires a vanishing anchor"};
      if (!a.c_structurally_constant())
        return {false, "lie-algebra requires constant structure functions"};
      return {};
    case AlgebroidKind::General:
      return {};
  }
  return {false, "unrecognized kind"};
}

}  // namespace algflow
