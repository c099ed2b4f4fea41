#pragma once

// Geometry of a regular Lagrangian over an anchored structure: fiber Hessian,
// source term b, semi-spray phi solved from  hess * phi = b,  the induced
// nonlinear connection
//   N[alpha][gamma] = -1/2 ( d phi^gamma / d y^alpha + y^beta C_beta_alpha^gamma ),
// the adapted frame  delta_alpha = rho_alpha^i d_i - N_alpha^gamma dy_gamma,
// vertical frame V_A = dy_A, and the frame anholonomy coefficients.
//
// phi enters as solve components, so repeated differentiation (N needs one
// derivative, curvature needs three) stays exact; the Hessian is only ever
// factored numerically, never inverted symbolically.

#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "algflow/algebroid.hpp"
#include "algflow/expr.hpp"
#include "algflow/field.hpp"
#include "algflow/linalg.hpp"

namespace algflow {

class LagrangeGeometry {
 public:
  static LagrangeGeometry make(Algebroid alg, Expr lagrangian) {
    LagrangeGeometry g;
    g.alg_ = std::move(alg);
    g.L_ = std::move(lagrangian);
    const Coords& co = g.alg_.coords();
    const int n = co.n, m = co.m;

    std::vector<Expr> dLdx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) dLdx[static_cast<std::size_t>(i)] = differentiate(g.L_, co.x_index(i));
    g.dLdy_.resize(static_cast<std::size_t>(m));
    for (int a = 0; a < m; ++a) g.dLdy_[static_cast<std::size_t>(a)] = differentiate(g.L_, co.y_index(a));

    // d^2 L / dx^i dy^beta
    std::vector<Expr> dxdyL(static_cast<std::size_t>(n * m));
    for (int i = 0; i < n; ++i)
      for (int be = 0; be < m; ++be)
        dxdyL[static_cast<std::size_t>(i * m + be)] =
            differentiate(g.dLdy_[static_cast<std::size_t>(be)], co.x_index(i));

    auto hess = std::make_shared<MatrixField>();
    hess->dim = m;
    hess->entries.resize(static_cast<std::size_t>(m * m));
    g.hess_expr_.resize(static_cast<std::size_t>(m * m));
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        Expr w = differentiate(g.dLdy_[static_cast<std::size_t>(a)], co.y_index(b));
        g.hess_expr_[static_cast<std::size_t>(a * m + b)] = w;
        hess->entries[static_cast<std::size_t>(a * m + b)] = field_expr(w);
      }
    g.hess_ = hess;

    // b_beta = rho_beta^i dL/dx^i - rho_al^i (d2L/dx^i dy^beta) y^al
    //          - C_beta_al^gamma (dL/dy^gamma) y^al
    g.b_expr_.resize(static_cast<std::size_t>(m));
    std::vector<Field> b_fields(static_cast<std::size_t>(m));
    for (int be = 0; be < m; ++be) {
      Expr acc = constant(0.0);
      for (int i = 0; i < n; ++i)
        acc = add(acc, mul(g.alg_.rho_at(be, i), dLdx[static_cast<std::size_t>(i)]));
      for (int al = 0; al < m; ++al) {
        for (int i = 0; i < n; ++i)
          acc = sub(acc, mul(mul(g.alg_.rho_at(al, i), dxdyL[static_cast<std::size_t>(i * m + be)]),
                             co.y(al)));
        for (int ga = 0; ga < m; ++ga)
          acc = sub(acc, mul(mul(g.alg_.c_at(be, al, ga), g.dLdy_[static_cast<std::size_t>(ga)]),
                             co.y(al)));
      }
      g.b_expr_[static_cast<std::size_t>(be)] = acc;
      b_fields[static_cast<std::size_t>(be)] = field_expr(acc);
    }
    g.phi_ = solve_fields(g.hess_, std::move(b_fields));

    g.nconn_.resize(static_cast<std::size_t>(m * m));
    for (int al = 0; al < m; ++al)
      for (int ga = 0; ga < m; ++ga) {
        Field t = fdiff(g.phi_[static_cast<std::size_t>(ga)], co.y_index(al));
        Expr cy = constant(0.0);
        for (int be = 0; be < m; ++be)
          cy = add(cy, mul(co.y(be), g.alg_.c_at(be, al, ga)));
        t = fadd(t, field_expr(cy));
        g.nconn_[static_cast<std::size_t>(al * m + ga)] = fscale(-0.5, t);
      }

    g.energy_ = sub(constant(0.0), g.L_);
    for (int a = 0; a < m; ++a)
      g.energy_ = add(g.energy_, mul(co.y(a), g.dLdy_[static_cast<std::size_t>(a)]));
    return g;
  }

  const Algebroid& alg() const { return alg_; }
  const Coords& coords() const { return alg_.coords(); }
  const Expr& lagrangian() const { return L_; }
  const Expr& energy() const { return energy_; }
  const Expr& dLdy(int a) const { return dLdy_[static_cast<std::size_t>(a)]; }
  const Expr& hess_at(int a, int b) const {
    return hess_expr_[static_cast<std::size_t>(a * alg_.m() + b)];
  }
  const Expr& b_at(int be) const { return b_expr_[static_cast<std::size_t>(be)]; }
  const std::shared_ptr<const MatrixField>& hess() const { return hess_; }
  const Field& phi(int eps) const { return phi_[static_cast<std::size_t>(eps)]; }
  const Field& nconn(int alpha, int gamma) const {
    return nconn_[static_cast<std::size_t>(alpha * alg_.m() + gamma)];
  }

  // delta_alpha f
  Field delta(const Field& f, int alpha) const {
    const Coords& co = coords();
    Field acc = field_const(0.0);
    for (int i = 0; i < co.n; ++i)
      acc = fadd(acc, fmul(field_expr(alg_.rho_at(alpha, i)), fdiff(f, co.x_index(i))));
    for (int ga = 0; ga < co.m; ++ga)
      acc = fsub(acc, fmul(nconn(alpha, ga), fdiff(f, co.y_index(ga))));
    return acc;
  }

  // e_abar f over the doubled frame: indices [0,m) are delta_alpha,
  // [m,2m) are V_A.
  Field frame_derive(const Field& f, int abar) const {
    const int m = alg_.m();
    if (abar < m) return delta(f, abar);
    return fdiff(f, coords().y_index(abar - m));
  }

  // Omega_alpha_beta^C = delta_beta N_alpha^C - delta_alpha N_beta^C
  //                      + C_alpha_beta^gamma N_gamma^C
  Field curvature_of_nconn(int alpha, int beta, int cc) const {
    const int m = alg_.m();
    Field t = fsub(delta(nconn(alpha, cc), beta), delta(nconn(beta, cc), alpha));
    for (int ga = 0; ga < m; ++ga)
      t = fadd(t, fmul(field_expr(alg_.c_at(alpha, beta, ga)), nconn(ga, cc)));
    return t;
  }

  // Anholonomy coefficients of the doubled frame:
  //   [e_abar, e_bbar] = W^cbar_abar_bbar e_cbar.
  Field anholonomy(int cbar, int abar, int bbar) const {
    const int m = alg_.m();
    const bool cu = cbar >= m, au = abar >= m, bu = bbar >= m;  // vertical flags
    if (!au && !bu) {
      if (!cu) return field_expr(alg_.c_at(abar, bbar, cbar));
      return curvature_of_nconn(abar, bbar, cbar - m);
    }
    if (cu && !au && bu) return fdiff(nconn(abar, cbar - m), coords().y_index(bbar - m));
    if (cu && au && !bu) return fneg(fdiff(nconn(bbar, cbar - m), coords().y_index(abar - m)));
    return field_const(0.0);
  }

  // Hessian regularity margin at p: |det| - tol (1 + ||hess||_inf^m).
  double regularity_margin(std::span<const double> p, double tol = 1e-10) const {
    const int m = alg_.m();
    Mat w(m, m);
    double norm = 0.0;
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        w(a, b) = hess_at(a, b).eval(p);
        norm = std::max(norm, std::abs(w(a, b)));
      }
    double scale = 1.0;
    for (int k = 0; k < m; ++k) scale *= norm;
    return std::abs(det(w)) - tol * (1.0 + scale);
  }

  // First-order dynamics: dx^i = rho_al^i y^al, and dy from hess dy = b.
  std::vector<double> el_rhs(std::span<const double> p) const {
    const Coords& co = coords();
    const int n = co.n, m = co.m;
    std::vector<double> out(static_cast<std::size_t>(n + m), 0.0);
    for (int i = 0; i < n; ++i) {
      double v = 0.0;
      for (int al = 0; al < m; ++al)
        v += alg_.rho_at(al, i).eval(p) * p[static_cast<std::size_t>(co.y_index(al))];
      out[static_cast<std::size_t>(i)] = v;
    }
    Mat w(m, m);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) w(a, b) = hess_at(a, b).eval(p);
    std::vector<double> rhs(static_cast<std::size_t>(m));
    for (int a = 0; a < m; ++a) rhs[static_cast<std::size_t>(a)] = b_at(a).eval(p);
    const std::vector<double> dy = solve(std::move(w), rhs);
    for (int a = 0; a < m; ++a) out[static_cast<std::size_t>(n + a)] = dy[static_cast<std::size_t>(a)];
    return out;
  }

 private:
  Algebroid alg_;
  Expr L_;
  Expr energy_;
  std::vector<Expr> dLdy_;
  std::vector<Expr> hess_expr_;
  std::vector<Expr> b_expr_;
  std::shared_ptr<const MatrixField> hess_;
  std::vector<Field> phi_;
  std::vector<Field> nconn_;
};

// Fixed-step RK4 on the first-order dynamics; returns the state row after
// each step (including the initial one).
inline std::vector<std::vector<double>> integrate_el(const LagrangeGeometry& g,
                                                     std::vector<double> state, double dt,
                                                     int steps) {
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(steps) + 1);
  rows.push_back(state);
  const std::size_t d = state.size();
  std::vector<double> k1, k2, k3, k4, tmp(d);
  for (int s = 0; s < steps; ++s) {
    k1 = g.el_rhs(state);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = state[i] + 0.5 * dt * k1[i];
    k2 = g.el_rhs(tmp);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = state[i] + 0.5 * dt * k2[i];
    k3 = g.el_rhs(tmp);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = state[i] + dt * k3[i];
    k4 = g.el_rhs(tmp);
    for (std::size_t i = 0; i < d; ++i)
      state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    rows.push_back(state);
  }
  return rows;
}

// Cartan data of the Lagrangian: the fiber one-form theta_alpha = dL/dy^alpha
// and the two-form blocks in the (x, y) splitting.
struct CartanData {
  std::vector<Expr> theta;   // m
  std::vector<Expr> xv;      // m*m, block pairing base with fiber: hess
  std::vector<Expr> xx;      // m*m, antisymmetric base-base block
};

inline CartanData cartan_data(const LagrangeGeometry& g) {
  const Coords& co = g.coords();
  const int n = co.n, m = co.m;
  CartanData cd;
  cd.theta.resize(static_cast<std::size_t>(m));
  cd.xv.resize(static_cast<std::size_t>(m * m));
  cd.xx.resize(static_cast<std::size_t>(m * m));
  for (int a = 0; a < m; ++a) cd.theta[static_cast<std::size_t>(a)] = g.dLdy(a);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      cd.xv[static_cast<std::size_t>(a * m + b)] = g.hess_at(a, b);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      Expr acc = constant(0.0);
      for (int i = 0; i < n; ++i) {
        acc = add(acc, mul(g.alg().rho_at(b, i),
                           differentiate(g.dLdy(a), co.x_index(i))));
        acc = sub(acc, mul(g.alg().rho_at(a, i),
                           differentiate(g.dLdy(b), co.x_index(i))));
      }
      for (int ga = 0; ga < m; ++ga)
        acc = add(acc, mul(g.alg().c_at(a, b, ga), g.dLdy(ga)));
      cd.xx[static_cast<std::size_t>(a * m + b)] = mul(constant(0.5), acc);
    }
  return cd;
}

// Metric blocks over the doubled frame; both default to the fiber Hessian.
struct MetricBlocks {
  std::shared_ptr<const MatrixField> h;
  std::shared_ptr<const MatrixField> v;

  static MetricBlocks from_hessian(const LagrangeGeometry& g) {
    return {g.hess(), g.hess()};
  }
};

}  // namespace algflow
