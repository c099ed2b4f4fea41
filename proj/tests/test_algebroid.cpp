#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "algflow/algebroid.hpp"
#include "algflow/sampling.hpp"

using namespace algflow;

namespace {

Algebroid make_tangent2() {
  Coords co = Coords::make(2, 2);
  std::vector<Expr> rho = {constant(1), constant(0), constant(0), constant(1)};
  std::vector<Expr> c(8, constant(0));
  return Algebroid::make(co, rho, c);
}

// so(3): zero anchor over a zero-dimensional base, C_ab^g = epsilon_abg.
Algebroid make_so3() {
  Coords co = Coords::make(0, 3);
  std::vector<Expr> rho;  // 3*0 entries
  std::vector<Expr> c(27, constant(0));
  const auto idx = [](int a, int b, int g) { return (a * 3 + b) * 3 + g; };
  c[idx(0, 1, 2)] = constant(1);
  c[idx(1, 0, 2)] = constant(-1);
  c[idx(1, 2, 0)] = constant(1);
  c[idx(2, 1, 0)] = constant(-1);
  c[idx(2, 0, 1)] = constant(1);
  c[idx(0, 2, 1)] = constant(-1);
  return Algebroid::make(co, rho, c);
}

// Anchor diag(1, u(x)) with the single compatible structure function
// C_12^2 = d1 u / u.
Algebroid make_scaled2() {
  Coords co = Coords::make(2, 2);
  const std::vector<std::string>& v = co.names;
  Expr u = parse("1 + 0.3 * sin(x1) * exp(0.2 * x2)", v);
  std::vector<Expr> rho = {constant(1), constant(0), constant(0), u};
  std::vector<Expr> c(8, constant(0));
  Expr c122 = div(differentiate(u, 0), u);
  c[(0 * 2 + 1) * 2 + 1] = c122;       // C_12^2
  c[(1 * 2 + 0) * 2 + 1] = neg(c122);  // C_21^2
  return Algebroid::make(co, rho, c);
}

}  // namespace

TEST_CASE("tangent-like data satisfies both structure equations") {
  Algebroid a = make_tangent2();
  Box box{{-2, -2, -2, -2}, {2, 2, 2, 2}};
  for (const auto& p : halton_points(box, 100, 1)) {
    CHECK(a.eq1_residual(p) == 0.0);
    CHECK(a.eq2_residual(p) == 0.0);
  }
  CHECK(check_kind(a, AlgebroidKind::TangentLike).ok);
  CHECK(a.anchor_det(std::vector<double>{0, 0, 0, 0}) == 1.0);
}

TEST_CASE("so(3) satisfies the cyclic identity") {
  Algebroid a = make_so3();
  std::vector<double> p = {0.3, -0.7, 1.1};  // fiber coordinates only
  CHECK(a.eq1_residual(p) == 0.0);
  CHECK(a.eq2_residual(p) < 1e-15);
  CHECK(check_kind(a, AlgebroidKind::LieAlgebra).ok);
  CHECK_FALSE(check_kind(a, AlgebroidKind::TangentLike).ok);
}

TEST_CASE("coordinate-dependent anchor with compatible structure function") {
  Algebroid a = make_scaled2();
  Box box{{-2, -1, -2, -2}, {2, 1, 2, 2}};
  for (const auto& p : halton_points(box, 200, 3)) {
    CHECK(a.eq1_residual(p) < 1e-13);
    CHECK(a.eq2_residual(p) < 1e-13);
  }
  CHECK(check_kind(a, AlgebroidKind::General).ok);
}

TEST_CASE("incompatible data is detected by the first structure equation") {
  Coords co = Coords::make(2, 2);
  // [d1, (1+x1) d2] = d2, but C = 0 claims the sections commute.
  std::vector<Expr> rho = {constant(1), constant(0), constant(0),
                           parse("1 + x1", co.names)};
  std::vector<Expr> c(8, constant(0));
  Algebroid a = Algebroid::make(co, rho, c);
  std::vector<double> p = {0.5, 0.2, 0, 0};
  CHECK(a.eq1_residual(p) == Catch::Approx(1.0));
}

TEST_CASE("structure functions are antisymmetrized on construction") {
  Coords co = Coords::make(1, 2);
  std::vector<Expr> rho = {constant(0), constant(0)};
  std::vector<Expr> c(8, constant(0));
  c[(0 * 2 + 1) * 2 + 0] = constant(3.0);  // C_12^1 given without its mirror
  Algebroid a = Algebroid::make(co, rho, c);
  std::vector<double> p = {0, 0, 0};
  CHECK(a.c_at(0, 1, 0).eval(p) == 1.5);
  CHECK(a.c_at(1, 0, 0).eval(p) == -1.5);
  CHECK(a.c_at(0, 0, 0).eval(p) == 0.0);
}

TEST_CASE("lie-algebra kind rejects a coordinate-dependent C") {
  Coords co = Coords::make(1, 2);
  std::vector<Expr> rho = {constant(0), constant(0)};
  std::vector<Expr> c(8, constant(0));
  c[(0 * 2 + 1) * 2 + 0] = parse("x1", co.names);
  c[(1 * 2 + 0) * 2 + 0] = parse("-x1", co.names);
  Algebroid a = Algebroid::make(co, rho, c);
  CHECK_FALSE(check_kind(a, AlgebroidKind::LieAlgebra).ok);
}
