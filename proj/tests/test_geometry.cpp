#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "algflow/geometry.hpp"
#include "algflow/sampling.hpp"

using namespace algflow;

namespace {

Algebroid tangent2() {
  Coords co = Coords::make(2, 2);
  std::vector<Expr> rho = {constant(1), constant(0), constant(0), constant(1)};
  return Algebroid::make(co, rho, std::vector<Expr>(8, constant(0)));
}

// Sphere-chart kinetic Lagrangian: L = (y1^2 + sin(x1)^2 y2^2) / 2 over the
// identity anchor.  Classical geodesic data for diag(1, sin^2 x1):
//   Gamma^1_22 = -sin x1 cos x1,  Gamma^2_12 = Gamma^2_21 = cot x1.
LagrangeGeometry sphere_geom() {
  Coords co = Coords::make(2, 2);
  Expr L = parse("(y1^2 + sin(x1)^2 * y2^2) / 2", co.names);
  return LagrangeGeometry::make(tangent2(), L);
}

Algebroid so3() {
  Coords co = Coords::make(0, 3);
  std::vector<Expr> c(27, constant(0));
  const auto idx = [](int a, int b, int g) { return (a * 3 + b) * 3 + g; };
  c[idx(0, 1, 2)] = constant(1);
  c[idx(1, 0, 2)] = constant(-1);
  c[idx(1, 2, 0)] = constant(1);
  c[idx(2, 1, 0)] = constant(-1);
  c[idx(2, 0, 1)] = constant(1);
  c[idx(0, 2, 1)] = constant(-1);
  return Algebroid::make(co, {}, c);
}

const Box kSphereBox{{0.5, -2.0, -2.0, -2.0}, {2.6, 2.0, 2.0, 2.0}};

}  // namespace

TEST_CASE("free particle has zero spray and zero connection") {
  Coords co = Coords::make(2, 2);
  Expr L = parse("(y1^2 + y2^2) / 2", co.names);
  LagrangeGeometry g = LagrangeGeometry::make(tangent2(), L);
  for (const auto& p : halton_points(Box{{-2, -2, -2, -2}, {2, 2, 2, 2}}, 20, 5)) {
    EvalContext ctx{p};
    for (int e = 0; e < 2; ++e) CHECK(ctx.eval(g.phi(e)) == 0.0);
    for (int a = 0; a < 2; ++a)
      for (int c = 0; c < 2; ++c) CHECK(ctx.eval(g.nconn(a, c)) == 0.0);
    CHECK(g.energy().eval(p) == Catch::Approx(g.lagrangian().eval(p)));
  }
}

TEST_CASE("sphere chart reproduces classical geodesic connection data") {
  LagrangeGeometry g = sphere_geom();
  for (const auto& p : halton_points(kSphereBox, 50, 9)) {
    const double x1 = p[0], y1 = p[2], y2 = p[3];
    const double cot = std::cos(x1) / std::sin(x1);
    EvalContext ctx{p};

    // spray phi^e = -Gamma^e_jk y^j y^k
    CHECK(ctx.eval(g.phi(0)) ==
          Catch::Approx(std::sin(x1) * std::cos(x1) * y2 * y2).margin(1e-12));
    CHECK(ctx.eval(g.phi(1)) == Catch::Approx(-2.0 * cot * y1 * y2).margin(1e-12));

    // N_a^g = Gamma^g_{a k} y^k
    CHECK(ctx.eval(g.nconn(0, 0)) == Catch::Approx(0.0).margin(1e-12));
    CHECK(ctx.eval(g.nconn(0, 1)) == Catch::Approx(cot * y2).margin(1e-12));
    CHECK(ctx.eval(g.nconn(1, 0)) ==
          Catch::Approx(-std::sin(x1) * std::cos(x1) * y2).margin(1e-12));
    CHECK(ctx.eval(g.nconn(1, 1)) == Catch::Approx(cot * y1).margin(1e-12));
  }
}

TEST_CASE("spray components satisfy the defining linear system independently") {
  LagrangeGeometry g = sphere_geom();
  const int m = 2;
  for (const auto& p : halton_points(kSphereBox, 50, 13)) {
    EvalContext ctx{p};
    for (int a = 0; a < m; ++a) {
      double lhs = 0.0;
      for (int b = 0; b < m; ++b) lhs += g.hess_at(a, b).eval(p) * ctx.eval(g.phi(b));
      CHECK(lhs == Catch::Approx(g.b_at(a).eval(p)).margin(1e-10));
    }
  }
}

TEST_CASE("adapted frame brackets close on the anholonomy coefficients") {
  // [delta_a, delta_b] f = C_ab^g delta_g f + Omega_ab^C V_C f, on a chart
  // where both C and Omega are active.
  Coords co = Coords::make(2, 2);
  Expr u = parse("1 + 0.3 * sin(x1) * exp(0.2 * x2)", co.names);
  std::vector<Expr> rho = {constant(1), constant(0), constant(0), u};
  std::vector<Expr> c(8, constant(0));
  Expr c122 = div(differentiate(u, 0), u);
  c[(0 * 2 + 1) * 2 + 1] = c122;
  c[(1 * 2 + 0) * 2 + 1] = neg(c122);
  Algebroid alg = Algebroid::make(co, rho, c);
  Expr L = parse("(y1^2 + y2^2) / 2 + 0.2 * sin(x1) * y1 * y2 + 0.1 * x2 * y2^2",
                 co.names);
  LagrangeGeometry g = LagrangeGeometry::make(alg, L);

  const Field f = field_expr(parse("sin(x1) * y2^2 + x2 * y1 + cos(x2 * y1)", co.names));
  const Field lhs = fsub(g.delta(g.delta(f, 1), 0), g.delta(g.delta(f, 0), 1));
  Field rhs = field_const(0.0);
  for (int ga = 0; ga < 2; ++ga)
    rhs = fadd(rhs, fmul(field_expr(alg.c_at(0, 1, ga)), g.delta(f, ga)));
  for (int cc = 0; cc < 2; ++cc)
    rhs = fadd(rhs, fmul(g.curvature_of_nconn(0, 1, cc), fdiff(f, co.y_index(cc))));

  for (const auto& p : halton_points(Box{{-1, -1, -1, -1}, {1, 1, 1, 1}}, 40, 17)) {
    EvalContext ctx{p};
    const double l = ctx.eval(lhs), r = ctx.eval(rhs);
    CHECK(l == Catch::Approx(r).margin(1e-9 * (1.0 + std::abs(l))));
  }
}

TEST_CASE("mixed frame brackets reduce to fiber derivatives of N") {
  LagrangeGeometry g = sphere_geom();
  const Coords& co = g.coords();
  const Field f = field_expr(parse("x1 * y2 + sin(y1) * x2", co.names));
  for (int a = 0; a < 2; ++a)
    for (int B = 0; B < 2; ++B) {
      // [delta_a, V_B] f = (V_B N_a^g) V_g f
      const Field lhs = fsub(g.delta(fdiff(f, co.y_index(B)), a),
                             fdiff(g.delta(f, a), co.y_index(B)));
      Field rhs = field_const(0.0);
      for (int ga = 0; ga < 2; ++ga)
        rhs = fadd(rhs, fmul(g.anholonomy(2 + ga, a, 2 + B), fdiff(f, co.y_index(ga))));
      for (const auto& p : halton_points(kSphereBox, 20, 21)) {
        EvalContext ctx{p};
        CHECK(ctx.eval(lhs) == Catch::Approx(ctx.eval(rhs)).margin(1e-10));
      }
    }
}

TEST_CASE("isotropic so(3) connection matches its closed form") {
  Coords co = Coords::make(0, 3);
  Expr L = parse("(y1^2 + y2^2 + y3^2) / 2", co.names);
  LagrangeGeometry g = LagrangeGeometry::make(so3(), L);
  const double eps[3][3][3] = {{{0, 0, 0}, {0, 0, 1}, {0, -1, 0}},
                               {{0, 0, -1}, {0, 0, 0}, {1, 0, 0}},
                               {{0, 1, 0}, {-1, 0, 0}, {0, 0, 0}}};
  std::vector<double> p = {0.4, -1.2, 0.9};
  EvalContext ctx{p};
  for (int e = 0; e < 3; ++e) CHECK(ctx.eval(g.phi(e)) == Catch::Approx(0.0).margin(1e-15));
  for (int a = 0; a < 3; ++a)
    for (int gg = 0; gg < 3; ++gg) {
      double want = 0.0;
      for (int b = 0; b < 3; ++b) want += -0.5 * p[static_cast<std::size_t>(b)] * eps[b][a][gg];
      CHECK(ctx.eval(g.nconn(a, gg)) == Catch::Approx(want).margin(1e-14));
    }
}

TEST_CASE("rigid body dynamics reduce to the Euler equations") {
  Coords co = Coords::make(0, 3);
  const double I1 = 1.0, I2 = 2.0, I3 = 3.0;
  Expr L = parse("(1*y1^2 + 2*y2^2 + 3*y3^2) / 2", co.names);
  LagrangeGeometry g = LagrangeGeometry::make(so3(), L);

  std::vector<double> p = {0.7, -0.4, 1.3};
  const auto rhs = g.el_rhs(p);
  REQUIRE(rhs.size() == 3);
  CHECK(rhs[0] == Catch::Approx((I2 - I3) / I1 * p[1] * p[2]).epsilon(1e-13));
  CHECK(rhs[1] == Catch::Approx((I3 - I1) / I2 * p[2] * p[0]).epsilon(1e-13));
  CHECK(rhs[2] == Catch::Approx((I1 - I2) / I3 * p[0] * p[1]).epsilon(1e-13));

  // RK4 trajectory conserves energy and the squared momentum to scheme order.
  const auto rows = integrate_el(g, {0.2, 1.0, 0.1}, 1e-3, 2000);
  const auto invariants = [&](const std::vector<double>& s) {
    const double e = 0.5 * (I1 * s[0] * s[0] + I2 * s[1] * s[1] + I3 * s[2] * s[2]);
    const double m2 = I1 * I1 * s[0] * s[0] + I2 * I2 * s[1] * s[1] + I3 * I3 * s[2] * s[2];
    return std::pair{e, m2};
  };
  const auto [e0, m0] = invariants(rows.front());
  const auto [e1, m1] = invariants(rows.back());
  CHECK(std::abs(e1 - e0) / e0 < 1e-10);
  CHECK(std::abs(m1 - m0) / m0 < 1e-10);
}

TEST_CASE("tangent-like straight-line motion under the free Lagrangian") {
  Coords co = Coords::make(2, 2);
  Expr L = parse("(y1^2 + y2^2) / 2", co.names);
  LagrangeGeometry g = LagrangeGeometry::make(tangent2(), L);
  const auto rows = integrate_el(g, {0.0, 1.0, 0.5, -0.25}, 0.01, 100);
  const auto& last = rows.back();
  CHECK(last[0] == Catch::Approx(0.5).margin(1e-12));
  CHECK(last[1] == Catch::Approx(0.75).margin(1e-12));
  CHECK(last[2] == Catch::Approx(0.5).margin(1e-14));
  CHECK(last[3] == Catch::Approx(-0.25).margin(1e-14));
}

TEST_CASE("degenerate Lagrangian fails the regularity margin") {
  Coords co = Coords::make(2, 2);
  Expr L = parse("y1^2 / 2", co.names);  // no y2 dependence
  LagrangeGeometry g = LagrangeGeometry::make(tangent2(), L);
  std::vector<double> p = {0, 0, 1, 1};
  CHECK(g.regularity_margin(p) < 0.0);
  LagrangeGeometry ok = sphere_geom();
  std::vector<double> q = {1.0, 0, 1, 1};
  CHECK(ok.regularity_margin(q) > 0.0);
}

TEST_CASE("fiber one-form and two-form blocks of the Lagrangian") {
  LagrangeGeometry g = sphere_geom();
  CartanData cd = cartan_data(g);
  std::vector<double> p = {1.1, 0.3, 0.7, -0.5};
  const double x1 = p[0], y2 = p[3];
  CHECK(cd.theta[0].eval(p) == Catch::Approx(p[2]));
  CHECK(cd.theta[1].eval(p) == Catch::Approx(std::sin(x1) * std::sin(x1) * y2));
  CHECK(cd.xv[0].eval(p) == Catch::Approx(1.0));
  CHECK(cd.xv[3].eval(p) == Catch::Approx(std::sin(x1) * std::sin(x1)));
  // xx block: 1/2 (d2 g_1j - d1 g_2j) y^j type combination
  CHECK(cd.xx[0 * 2 + 1].eval(p) ==
        Catch::Approx(-std::sin(x1) * std::cos(x1) * y2).margin(1e-13));
  CHECK(cd.xx[1 * 2 + 0].eval(p) ==
        Catch::Approx(std::sin(x1) * std::cos(x1) * y2).margin(1e-13));
  CHECK(cd.xx[0].eval(p) == 0.0);
}

TEST_CASE("energy is conserved along sphere geodesics") {
  LagrangeGeometry g = sphere_geom();
  const auto rows = integrate_el(g, {1.2, 0.0, 0.3, 0.4}, 5e-4, 4000);
  const double e0 = g.energy().eval(rows.front());
  const double e1 = g.energy().eval(rows.back());
  CHECK(std::abs(e1 - e0) / std::abs(e0) < 1e-10);
}
