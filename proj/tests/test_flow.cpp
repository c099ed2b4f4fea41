#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "algflow/algebroid.hpp"
#include "algflow/connection.hpp"
#include "algflow/flow.hpp"
#include "algflow/geometry.hpp"
#include "algflow/grid.hpp"

using namespace algflow;

namespace {

constexpr double kTwoPi = 6.283185307179586476925;

Algebroid tangent_trivial(int n) {
  Coords co = Coords::make(n, n);
  std::vector<Expr> rho(static_cast<std::size_t>(n * n), constant(0));
  for (int i = 0; i < n; ++i) rho[static_cast<std::size_t>(i * n + i)] = constant(1);
  return Algebroid::make(co, rho, std::vector<Expr>(static_cast<std::size_t>(n * n * n), constant(0)));
}

LagrangeGeometry free_geom(int n) {
  Coords co = Coords::make(n, n);
  Expr L = constant(0);
  for (int a = 0; a < n; ++a) {
    Expr y = variable(co.y_index(a), co.names[static_cast<std::size_t>(co.y_index(a))]);
    L = add(L, mul(y, y));
  }
  L = mul(constant(0.5), L);
  return LagrangeGeometry::make(tangent_trivial(n), L);
}

Algebroid so3() {
  Coords co = Coords::make(0, 3);
  std::vector<Expr> c(27, constant(0));
  const auto idx = [](int a, int b, int g) { return (a * 3 + b) * 3 + g; };
  c[static_cast<std::size_t>(idx(0, 1, 2))] = constant(1);
  c[static_cast<std::size_t>(idx(1, 0, 2))] = constant(-1);
  c[static_cast<std::size_t>(idx(1, 2, 0))] = constant(1);
  c[static_cast<std::size_t>(idx(2, 1, 0))] = constant(-1);
  c[static_cast<std::size_t>(idx(2, 0, 1))] = constant(1);
  c[static_cast<std::size_t>(idx(0, 2, 1))] = constant(-1);
  return Algebroid::make(co, {}, c);
}

LagrangeGeometry so3_geom(double i1, double i2, double i3) {
  Coords co = Coords::make(0, 3);
  Expr L = mul(constant(0.5),
               add(add(mul(constant(i1), mul(variable(0, "y1"), variable(0, "y1"))),
                       mul(constant(i2), mul(variable(1, "y2"), variable(1, "y2")))),
                   mul(constant(i3), mul(variable(2, "y3"), variable(2, "y3")))));
  return LagrangeGeometry::make(so3(), L);
}

Grid torus_grid(int axes, int count) {
  return Grid::make(std::vector<double>(static_cast<std::size_t>(axes), 0.0),
                    std::vector<double>(static_cast<std::size_t>(axes), kTwoPi),
                    std::vector<int>(static_cast<std::size_t>(axes), count));
}

// Periodic rank one synthetic metric on the two torus.
std::vector<Expr> synth_gh1(const Coords& co) {
  return {parse("1 + 0.3 * sin(x1) + 0.1 * sin(y1) * cos(x1)", co.names)};
}
std::vector<Expr> synth_gv1(const Coords& co) {
  return {parse("1 + 0.2 * cos(x1) + 0.1 * sin(y1)", co.names)};
}

MetricBlocks blocks_from_exprs(int m, const std::vector<Expr>& he, const std::vector<Expr>& ve) {
  auto mh = std::make_shared<MatrixField>();
  auto mv = std::make_shared<MatrixField>();
  mh->dim = m;
  mv->dim = m;
  for (const Expr& e : he) mh->entries.push_back(field_expr(e));
  for (const Expr& e : ve) mv->entries.push_back(field_expr(e));
  return {mh, mv};
}

// Max deviation of the grid Ricci blocks from the symbolic connection at
// every grid point. Only the block diagonal sectors enter; the grid state is
// block diagonal by construction.
double ricci_deviation(const GridSample& s, FlowEngine& eng, const FlowState& st,
                       const FrameConnection& conn) {
  eng.evaluate(st);
  const int m = s.m, d = s.dim();
  const std::size_t dd = static_cast<std::size_t>(d * d);
  std::vector<Field> sym(dd);
  for (int b = 0; b < d; ++b)
    for (int c = 0; c < d; ++c) sym[static_cast<std::size_t>(b * d + c)] = conn.ricci(b, c);
  double worst = 0.0;
  for (std::size_t p = 0; p < s.grid.total; ++p) {
    EvalContext ctx{s.grid.point(p)};
    for (int b = 0; b < d; ++b)
      for (int c = 0; c < d; ++c) {
        const bool hb = b < m, hc = c < m;
        if (hb != hc) continue;
        const double ref = ctx.eval(sym[static_cast<std::size_t>(b * d + c)]);
        const double got = eng.ricci()[p * dd + static_cast<std::size_t>(b * d + c)];
        worst = std::max(worst, std::abs(got - ref));
      }
  }
  return worst;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("flat state is an exact fixed point") {
  const LagrangeGeometry geo = free_geom(2);
  const GridSample s = GridSample::from_geometry(geo, torus_grid(4, 8));
  FlowState st = init_flow(s, geo, 1.0);
  FlowEngine eng(s, FlowMode::Canonical, GradConvention::Squared);

  const FlowState before = st;
  std::vector<FlowRow> rows = run_flow(eng, st, 10, 1e-3);
  REQUIRE(rows.size() == 11);
  CHECK(max_abs_diff(st.gh, before.gh) < 1e-14);
  CHECK(max_abs_diff(st.gv, before.gv) < 1e-14);
  CHECK(max_abs_diff(st.f, before.f) < 1e-14);
  for (const FlowRow& r : rows) {
    CHECK(std::abs(r.rep.F) < 1e-13);
    CHECK(r.rep.max_mixed < 1e-13);
    CHECK(r.rep.min_eig == Catch::Approx(1.0).margin(1e-12));
  }
  CHECK(st.tau == Catch::Approx(1.0 - 10 * 1e-3).margin(1e-12));
}

TEST_CASE("distorted mode agrees with canonical on an exactly flat state") {
  const LagrangeGeometry geo = free_geom(2);
  const GridSample s = GridSample::from_geometry(geo, torus_grid(4, 8));
  FlowState st = init_flow(s, geo, 1.0);
  FlowEngine eng(s, FlowMode::Distorted, GradConvention::Squared);
  eng.evaluate(st);
  for (double v : eng.ricci()) CHECK(std::abs(v) < 1e-13);
}

TEST_CASE("grid curvature converges at fourth order to the symbolic path") {
  Coords co = Coords::make(1, 1);
  const LagrangeGeometry geo = free_geom(1);
  const MetricBlocks mb = blocks_from_exprs(1, synth_gh1(co), synth_gv1(co));
  const FrameConnection can = FrameConnection::canonical(geo, mb);
  const FrameConnection lc = FrameConnection::levi_civita(geo, mb);

  double dev_can[3], dev_lc[3];
  const int counts[3] = {32, 64, 128};
  for (int k = 0; k < 3; ++k) {
    const GridSample s = GridSample::trivial(1, 1, torus_grid(2, counts[k]));
    FlowState st = init_state_from_exprs(s, synth_gh1(co), synth_gv1(co), 1.0);
    FlowEngine ecan(s, FlowMode::Canonical, GradConvention::Squared);
    FlowEngine elc(s, FlowMode::Distorted, GradConvention::Squared);
    dev_can[k] = ricci_deviation(s, ecan, st, can);
    dev_lc[k] = ricci_deviation(s, elc, st, lc);
  }
  INFO("canonical deviations " << dev_can[0] << " " << dev_can[1] << " " << dev_can[2]);
  INFO("frame LC deviations " << dev_lc[0] << " " << dev_lc[1] << " " << dev_lc[2]);
  // Rank one canonical blocks have no curvature at all; the grid contraction
  // reproduces the exact zero through the same term cancellations.
  CHECK(dev_can[0] < 1e-13);
  CHECK(dev_can[2] < 1e-13);
  CHECK(dev_lc[0] / dev_lc[1] >= 12.0);
  CHECK(dev_lc[1] / dev_lc[2] >= 15.0);
  CHECK(dev_lc[2] < 1e-6);
}

TEST_CASE("functional value converges at least at second order") {
  Coords co = Coords::make(1, 1);
  double fval[3];
  const int counts[3] = {16, 32, 64};
  for (int k = 0; k < 3; ++k) {
    const GridSample s = GridSample::trivial(1, 1, torus_grid(2, counts[k]));
    FlowState st = init_state_from_exprs(s, synth_gh1(co), synth_gv1(co), 1.0);
    FlowEngine eng(s, FlowMode::Canonical, GradConvention::Squared);
    fval[k] = eng.report(st).F;
  }
  const double r1 = std::abs(fval[0] - fval[1]);
  const double r2 = std::abs(fval[1] - fval[2]);
  INFO("F " << fval[0] << " " << fval[1] << " " << fval[2]);
  CHECK((r2 <= r1 / 3.0 || r1 < 1e-12));
}

TEST_CASE("grid curvature converges on a rank two state") {
  Coords co = Coords::make(2, 2);
  const std::vector<Expr> he = {
      parse("1 + 0.2 * sin(x1) * cos(y2)", co.names),
      parse("0.05 * sin(x2) * sin(y1)", co.names),
      parse("0.05 * sin(x2) * sin(y1)", co.names),
      parse("1 + 0.2 * cos(x2)", co.names)};
  const std::vector<Expr> ve = {
      parse("1 + 0.15 * cos(x1) * cos(y1)", co.names),
      parse("0.05 * cos(x2) * sin(y2)", co.names),
      parse("0.05 * cos(x2) * sin(y2)", co.names),
      parse("1 + 0.15 * sin(y2)", co.names)};
  const LagrangeGeometry geo = free_geom(2);
  const MetricBlocks mb = blocks_from_exprs(2, he, ve);
  const FrameConnection can = FrameConnection::canonical(geo, mb);

  double dev[2];
  const int counts[2] = {8, 16};
  for (int k = 0; k < 2; ++k) {
    const GridSample s = GridSample::trivial(2, 2, torus_grid(4, counts[k]));
    FlowState st = init_state_from_exprs(s, he, ve, 1.0);
    FlowEngine eng(s, FlowMode::Canonical, GradConvention::Squared);
    dev[k] = ricci_deviation(s, eng, st, can);
  }
  INFO("deviations " << dev[0] << " " << dev[1]);
  CHECK(dev[0] / dev[1] >= 8.0);
}

TEST_CASE("constant rigid body data reproduces the symbolic zero curvature") {
  const LagrangeGeometry geo = so3_geom(1.0, 2.0, 3.0);
  const MetricBlocks mb = MetricBlocks::from_hessian(geo);
  const FrameConnection can = FrameConnection::canonical(geo, mb);
  const GridSample s = GridSample::from_geometry(
      geo, Grid::make({-1.5, -1.5, -1.5}, {1.5, 1.5, 1.5}, {8, 8, 8}));
  FlowState st = init_flow(s, geo, 1.0);
  FlowEngine eng(s, FlowMode::Canonical, GradConvention::Squared);
  CHECK(ricci_deviation(s, eng, st, can) < 1e-8);
  for (double v : eng.ricci()) CHECK(std::abs(v) < 1e-12);

  const FlowState before = st;
  run_flow(eng, st, 5, 1e-4);
  CHECK(max_abs_diff(st.gh, before.gh) < 1e-13);
  CHECK(max_abs_diff(st.gv, before.gv) < 1e-13);
}

TEST_CASE("one step matches the Taylor expansion of the evolution") {
  Coords co = Coords::make(1, 1);
  const GridSample s = GridSample::trivial(1, 1, torus_grid(2, 32));
  const FlowState base = init_state_from_exprs(s, synth_gh1(co), synth_gv1(co), 1.0);
  FlowEngine eng(s, FlowMode::Distorted, GradConvention::Squared);

  std::vector<double> kh, kv, kf;
  eng.rhs(base, kh, kv, kf);

  const auto taylor_err = [&](double dchi) {
    FlowState st = base;
    eng.step(st, dchi);
    double worst = 0.0;
    for (std::size_t i = 0; i < st.gh.size(); ++i)
      worst = std::max(worst, std::abs(st.gh[i] - base.gh[i] - dchi * kh[i]));
    for (std::size_t i = 0; i < st.gv.size(); ++i)
      worst = std::max(worst, std::abs(st.gv[i] - base.gv[i] - dchi * kv[i]));
    return worst;
  };
  const double e1 = taylor_err(2e-4);
  const double e2 = taylor_err(1e-4);
  INFO("taylor errors " << e1 << " " << e2);
  CHECK(e1 < 1e-6);
  CHECK(e1 / e2 == Catch::Approx(4.0).margin(1.5));
}

TEST_CASE("small steps keep the metric change bounded by the curvature") {
  Coords co = Coords::make(1, 1);
  const GridSample s = GridSample::trivial(1, 1, torus_grid(2, 32));
  FlowState st = init_state_from_exprs(s, synth_gh1(co), synth_gv1(co), 1.0);
  FlowEngine eng(s, FlowMode::Distorted, GradConvention::Squared);
  eng.evaluate(st);
  double eps = 0.0;
  for (double v : eng.ricci()) eps = std::max(eps, std::abs(v));
  const FlowState before = st;
  const double dchi = 1e-4;
  eng.step(st, dchi);
  const double change = std::max(max_abs_diff(st.gh, before.gh), max_abs_diff(st.gv, before.gv));
  CHECK(change < 10.0 * eps * dchi);
}

TEST_CASE("stability bound rejects an oversized step") {
  const LagrangeGeometry geo = free_geom(2);
  const GridSample s = GridSample::from_geometry(geo, torus_grid(4, 8));
  FlowState st = init_flow(s, geo, 1.0);
  FlowEngine eng(s, FlowMode::Canonical, GradConvention::Squared);
  CHECK_THROWS_AS(eng.step(st, 0.1), FlowDomainError);
}

TEST_CASE("backward time cannot cross zero") {
  const LagrangeGeometry geo = free_geom(2);
  const GridSample s = GridSample::from_geometry(geo, torus_grid(4, 8));
  FlowState st = init_flow(s, geo, 5e-4);
  FlowEngine eng(s, FlowMode::Canonical, GradConvention::Squared);
  CHECK_THROWS_AS(eng.step(st, 1e-3), FlowDomainError);
}

TEST_CASE("perturbed flat distorted flow keeps the functional non decreasing") {
  Coords co = Coords::make(2, 2);
  const LagrangeGeometry geo = free_geom(2);
  const GridSample s = GridSample::from_geometry(geo, torus_grid(4, 8));
  FlowState st = init_flow(s, geo, 1.0);
  const std::vector<Expr> ph = {
      parse("sin(x1) * cos(y2)", co.names), parse("0.4 * sin(x2 + y1)", co.names),
      parse("0.4 * sin(x2 + y1)", co.names), parse("cos(x2) * sin(y1)", co.names)};
  const std::vector<Expr> pv = {
      parse("cos(x1) * sin(y1)", co.names), parse("0.4 * cos(x1 + y2)", co.names),
      parse("0.4 * cos(x1 + y2)", co.names), parse("sin(x2) * cos(y2)", co.names)};
  add_metric_perturbation(s, st, ph, pv, 0.05);

  FlowEngine eng(s, FlowMode::Distorted, GradConvention::Squared);
  const std::vector<FlowRow> rows = run_flow(eng, st, 10, 2e-3);
  for (std::size_t k = 1; k < rows.size(); ++k) {
    INFO("step " << k << " F " << rows[k].rep.F << " prev " << rows[k - 1].rep.F);
    CHECK(rows[k].rep.F >= rows[k - 1].rep.F - 1e-6);
  }
  for (const FlowRow& r : rows) {
    CHECK(r.rep.sigma >= 0.0);
    CHECK(r.rep.entropy == Catch::Approx(-r.rep.W).margin(1e-12));
  }
}

TEST_CASE("flat thermodynamic report matches the closed form") {
  const LagrangeGeometry geo = free_geom(2);
  const GridSample s = GridSample::from_geometry(geo, torus_grid(4, 8));
  FlowState st = init_flow(s, geo, 1.0);
  FlowEngine eng(s, FlowMode::Canonical, GradConvention::Squared);
  const FlowEngine::Report rep = eng.report(st);

  const double f0 = st.f[0];
  CHECK(rep.mu_total == Catch::Approx(1.0).margin(1e-12));
  CHECK(rep.e_avg == Catch::Approx(2.0).margin(1e-9));
  CHECK(rep.sigma == Catch::Approx(2.0).margin(1e-9));
  CHECK(rep.entropy == Catch::Approx(4.0 - f0).margin(1e-9));
  CHECK(rep.log_z == Catch::Approx(2.0 - f0).margin(1e-9));
  CHECK(rep.entropy == Catch::Approx(-rep.W).margin(1e-12));
  CHECK(rep.beta == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("normalization drives the total measure to one") {
  Coords co = Coords::make(1, 1);
  const GridSample s = GridSample::trivial(1, 1, torus_grid(2, 16));
  FlowState st = init_state_from_exprs(s, synth_gh1(co), synth_gv1(co), 1.0);
  for (std::size_t p = 0; p < s.grid.total; ++p) st.f[p] += 0.3 * std::sin(s.grid.point(p)[0]);
  normalize_f(s, st);
  CHECK(measure_total(s, st) == Catch::Approx(1.0).margin(1e-12));
}
