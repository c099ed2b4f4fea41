// Command line front end. Subcommands read one scenario file, run a single
// stage of the pipeline and write the artifacts next to a shared prefix.
// Exit codes: 0 success, 1 usage, 2 domain error in the input data, 3 a
// declared invariant failed its tolerance. Failures print one JSON object
// on stderr.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "algflow/algebroid.hpp"
#include "algflow/connection.hpp"
#include "algflow/expr.hpp"
#include "algflow/field.hpp"
#include "algflow/flow.hpp"
#include "algflow/geometry.hpp"
#include "algflow/grid.hpp"
#include "algflow/sampling.hpp"
#include "algflow/scenario.hpp"
#include "algflow/tensor_io.hpp"

namespace {

using namespace algflow;

struct InvariantBreach : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string scenario;
  std::string out = ".";
  int seed = 42;
  double tol = 1e-8;
  std::string format;  // empty: scenario output section decides
  int points = 0;      // 0: per command default
  // flow overrides, negative or empty meaning "scenario decides"
  int steps = -1;
  double dchi = -1.0;
  std::string mode;
  std::string grad;
};

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("--scenario", opt.scenario, "scenario JSON file")->required();
  cmd->add_option("--out", opt.out, "output directory");
  cmd->add_option("--seed", opt.seed, "sample point seed");
  cmd->add_option("--tol", opt.tol, "residual tolerance");
  cmd->add_option("--format", opt.format, "csv or json dump format")
      ->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--points", opt.points, "number of sample points");
}

std::string out_path(const Options& opt, const Scenario& sc, const std::string& suffix) {
  std::filesystem::create_directories(opt.out);
  std::string stem = sc.output.prefix;
  if (stem.empty()) stem = sc.name.empty() ? "run" : sc.name;
  return (std::filesystem::path(opt.out) / (stem + "-" + suffix)).string();
}

std::string dump_format(const Options& opt, const Scenario& sc) {
  return opt.format.empty() ? sc.output.format : opt.format;
}

void write_dump(const TensorDump& dump, const Options& opt, const Scenario& sc,
                const std::string& stem) {
  if (dump_format(opt, sc) == "json")
    dump.write_json(out_path(opt, sc, stem + ".json"));
  else
    dump.write_csv(out_path(opt, sc, stem + ".csv"), sc.alg.coords().names);
}

AlgebroidKind parse_kind(const std::string& s) {
  if (s == "tangent-like") return AlgebroidKind::TangentLike;
  if (s == "lie-algebra") return AlgebroidKind::LieAlgebra;
  return AlgebroidKind::General;
}

int run_validate(const Options& opt) {
  Scenario sc = load_scenario(opt.scenario);
  const int count = opt.points > 0 ? opt.points : 200;
  const auto pts = halton_points(sc.box, count, opt.seed);

  double max1 = 0.0, max2 = 0.0, min_margin = std::numeric_limits<double>::infinity();
  double min_anchor = std::numeric_limits<double>::infinity();
  const LagrangeGeometry geo = sc.geometry();
  for (const auto& p : pts) {
    max1 = std::max(max1, sc.alg.eq1_residual(p));
    max2 = std::max(max2, sc.alg.eq2_residual(p));
    min_margin = std::min(min_margin, geo.regularity_margin(p));
    if (sc.kind == "tangent-like") min_anchor = std::min(min_anchor, std::abs(sc.alg.anchor_det(p)));
  }

  KindCheck kc;
  if (!sc.kind.empty()) kc = check_kind(sc.alg, parse_kind(sc.kind));
  if (sc.kind == "tangent-like" && kc.ok && !(min_anchor > 0.0))
    kc = {false, "anchor is singular at a sample point"};

  nlohmann::json rep;
  rep["name"] = sc.name;
  rep["kind"] = sc.kind;
  rep["points"] = count;
  rep["max_structure_residual"] = {max1, max2};
  rep["min_regularity_margin"] = min_margin;
  if (sc.kind == "tangent-like") rep["min_anchor_abs_det"] = min_anchor;
  rep["kind_ok"] = kc.ok;
  if (!kc.ok) rep["kind_message"] = kc.message;
  rep["tol"] = opt.tol;
  const bool residual_ok = max1 <= opt.tol && max2 <= opt.tol;
  rep["pass"] = residual_ok && kc.ok && min_margin > 0.0;
  {
    std::ofstream out(out_path(opt, sc, "validate.json"));
    out << rep.dump(1) << "\n";
  }

  std::cout << "structure residuals " << fmt17(max1) << " " << fmt17(max2) << "\n"
            << "regularity margin " << fmt17(min_margin) << "\n";
  if (min_margin <= 0.0) throw FlowDomainError("Lagrangian Hessian is degenerate in the box");
  if (!kc.ok) throw InvariantBreach("declared kind does not hold: " + kc.message);
  if (!residual_ok) throw InvariantBreach("structure equation residual exceeds tolerance");
  std::cout << "ok\n";
  return 0;
}

int run_geom(const Options& opt) {
  Scenario sc = load_scenario(opt.scenario);
  const int count = opt.points > 0 ? opt.points : 24;
  const auto pts = halton_points(sc.box, count, opt.seed);
  const LagrangeGeometry geo = sc.geometry();
  const int n = sc.n(), m = sc.m();

  TensorDump dump;
  for (const auto& p : pts) {
    EvalContext ctx{p};
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) dump.add("hessian", {a, b}, p, geo.hess_at(a, b).eval(p));
    for (int al = 0; al < m; ++al)
      for (int c = 0; c < m; ++c) dump.add("nconn", {al, c}, p, ctx.eval(geo.nconn(al, c)));
    const std::vector<double> rhs = geo.el_rhs(p);
    for (int k = 0; k < n + m; ++k) dump.add("semispray", {k}, p, rhs[static_cast<std::size_t>(k)]);
    dump.add("energy", {}, p, geo.energy().eval(p));
  }
  write_dump(dump, opt, sc, "geom");
  std::cout << "wrote " << dump.entries().size() << " records at " << count << " points\n";
  return 0;
}

int run_curv(const Options& opt) {
  Scenario sc = load_scenario(opt.scenario);
  const int count = opt.points > 0 ? opt.points : 6;
  const auto pts = halton_points(sc.box, count, opt.seed);
  const LagrangeGeometry geo = sc.geometry();
  const MetricBlocks mb = sc.metric_blocks(geo);
  const FrameConnection can = FrameConnection::canonical(geo, mb);
  const FrameConnection lc = FrameConnection::levi_civita(geo, mb);
  const auto z = distortion(can, lc);
  const auto zric = distortion_ricci(can, z);
  const int m = sc.m(), d = 2 * m;

  TensorDump dump;
  double met_can = 0.0, met_lc = 0.0, tor_hh = 0.0, tor_vv = 0.0, tor_lc = 0.0, ident = 0.0;
  for (const auto& p : pts) {
    EvalContext ctx{p};
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c) {
          dump.add("gamma_can", {a, b, c}, p, ctx.eval(can.gamma(a, b, c)));
          dump.add("gamma_lc", {a, b, c}, p, ctx.eval(lc.gamma(a, b, c)));
          dump.add("torsion_can", {a, b, c}, p, ctx.eval(can.torsion(a, b, c)));
          dump.add("distortion", {a, b, c}, p,
                   ctx.eval(z[static_cast<std::size_t>((a * d + b) * d + c)]));
          met_can = std::max(met_can, std::abs(ctx.eval(can.metricity(c, a, b))));
          met_lc = std::max(met_lc, std::abs(ctx.eval(lc.metricity(c, a, b))));
          tor_lc = std::max(tor_lc, std::abs(ctx.eval(lc.torsion(a, b, c))));
        }
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        for (int c = 0; c < m; ++c) {
          tor_hh = std::max(tor_hh, std::abs(ctx.eval(can.torsion(a, b, c)) -
                                             sc.alg.c_at(b, c, a).eval(p)));
          tor_vv = std::max(tor_vv, std::abs(ctx.eval(can.torsion(m + a, m + b, m + c))));
        }
    const FrameConnection::PointCurvature pc_can = can.curvature_values(ctx);
    const FrameConnection::PointCurvature pc_lc = lc.curvature_values(ctx);
    for (int b = 0; b < d; ++b)
      for (int c = 0; c < d; ++c) {
        dump.add("ricci_can", {b, c}, p, pc_can.ricci(b, c));
        dump.add("ricci_lc", {b, c}, p, pc_lc.ricci(b, c));
        dump.add("einstein_can", {b, c}, p, pc_can.einstein(b, c));
        dump.add("einstein_lc", {b, c}, p, pc_lc.einstein(b, c));
        const double rhs = pc_can.ricci(b, c) +
                           ctx.eval(zric[static_cast<std::size_t>(b * d + c)]);
        ident = std::max(ident, std::abs(pc_lc.ricci(b, c) - rhs));
      }
    dump.add("scalar_can", {}, p, pc_can.scalar);
    dump.add("scalar_lc", {}, p, pc_lc.scalar);
  }
  write_dump(dump, opt, sc, "curv");

  nlohmann::json rep;
  rep["points"] = count;
  rep["max_metricity_can"] = met_can;
  rep["max_metricity_lc"] = met_lc;
  rep["max_torsion_lc"] = tor_lc;
  rep["max_hh_torsion_dev"] = tor_hh;
  rep["max_vv_torsion"] = tor_vv;
  rep["max_ricci_split_residual"] = ident;
  rep["tol"] = opt.tol;
  rep["pass"] = std::max({met_can, met_lc, tor_lc, tor_hh, tor_vv, ident}) <= opt.tol;
  {
    std::ofstream out(out_path(opt, sc, "curv-report.json"));
    out << rep.dump(1) << "\n";
  }
  std::cout << "metricity " << fmt17(std::max(met_can, met_lc)) << ", torsion prescriptions "
            << fmt17(std::max(tor_hh, tor_vv)) << ", Ricci split residual " << fmt17(ident)
            << "\n";
  if (!rep["pass"].get<bool>())
    throw InvariantBreach("connection residual exceeds tolerance");
  std::cout << "ok\n";
  return 0;
}

FlowState initial_state(const Scenario& sc, const GridSample& sample,
                        const LagrangeGeometry& geo) {
  const double tau0 = sc.flow.present ? sc.flow.tau0 : 1.0;
  FlowState st = sc.metric_h.empty()
                     ? init_flow(sample, geo, tau0)
                     : init_state_from_exprs(sample, sc.metric_h, sc.metric_v, tau0);
  if (sc.flow.perturbed)
    add_metric_perturbation(sample, st, sc.flow.pert_h, sc.flow.pert_v, sc.flow.amplitude);
  return st;
}

FlowEngine make_engine(const Options& opt, const Scenario& sc, const GridSample& sample) {
  FlowMode mode = sc.flow.mode;
  if (opt.mode == "canonical") mode = FlowMode::Canonical;
  if (opt.mode == "distorted") mode = FlowMode::Distorted;
  GradConvention grad = sc.flow.grad;
  if (opt.grad == "squared") grad = GradConvention::Squared;
  if (opt.grad == "literal") grad = GradConvention::Literal;
  return FlowEngine(sample, mode, grad);
}

int run_flow_cmd(const Options& opt) {
  Scenario sc = load_scenario(opt.scenario);
  if (!sc.flow.present) throw ScenarioError("/flow", "section required for this command");
  const LagrangeGeometry geo = sc.geometry();
  const Grid grid = sc.make_grid();
  const GridSample sample = GridSample::from_geometry(geo, grid);
  FlowState st = initial_state(sc, sample, geo);
  FlowEngine eng = make_engine(opt, sc, sample);
  const int steps = opt.steps >= 0 ? opt.steps : sc.flow.steps;
  const double dchi = opt.dchi > 0.0 ? opt.dchi : sc.flow.dchi;

  const std::vector<FlowRow> rows = run_flow(eng, st, steps, dchi);
  write_flow_csv(out_path(opt, sc, "flow.csv"), rows);
  write_snapshot_json(out_path(opt, sc, "state.json"), sample, st);

  double worst_mixed = 0.0;
  for (const FlowRow& r : rows) worst_mixed = std::max(worst_mixed, r.rep.max_mixed);
  const FlowRow& last = rows.back();
  std::cout << steps << " steps to chi " << fmt17(last.chi) << ", F " << fmt17(last.rep.F)
            << ", W " << fmt17(last.rep.W) << ", mixed Ricci " << fmt17(worst_mixed) << "\n";
  if (worst_mixed > sc.flow.max_mixed_ricci)
    throw InvariantBreach("mixed Ricci block exceeded the scenario bound");
  std::cout << "ok\n";
  return 0;
}

int run_thermo(const Options& opt) {
  Scenario sc = load_scenario(opt.scenario);
  const LagrangeGeometry geo = sc.geometry();
  const Grid grid = sc.make_grid();
  const GridSample sample = GridSample::from_geometry(geo, grid);
  FlowState st = initial_state(sc, sample, geo);
  normalize_f(sample, st);
  FlowEngine eng = make_engine(opt, sc, sample);
  const FlowEngine::Report rep = eng.report(st);
  write_thermo_json(out_path(opt, sc, "thermo.json"), st.tau, rep);
  std::cout << "beta " << fmt17(rep.beta) << ", E_avg " << fmt17(rep.e_avg) << ", S "
            << fmt17(rep.entropy) << ", sigma " << fmt17(rep.sigma) << "\n";
  return 0;
}

int run_integrate(const Options& opt) {
  Scenario sc = load_scenario(opt.scenario);
  if (!sc.integrate.present) throw ScenarioError("/integrate", "section required for this command");
  const LagrangeGeometry geo = sc.geometry();
  const int steps = opt.steps >= 0 ? opt.steps : sc.integrate.steps;
  const auto rows = integrate_el(geo, sc.integrate.point, sc.integrate.dt, steps);
  std::vector<double> energies;
  energies.reserve(rows.size());
  for (const auto& row : rows) energies.push_back(geo.energy().eval(row));
  write_trajectory_csv(out_path(opt, sc, "trajectory.csv"), sc.alg.coords().names, rows,
                       sc.integrate.dt, energies);
  const double drift =
      std::abs(energies.back() - energies.front()) / std::max(1.0, std::abs(energies.front()));
  std::cout << rows.size() << " states, relative energy drift " << fmt17(drift) << "\n";
  return 0;
}

void emit_error(int code, const std::string& kind, const std::string& message) {
  nlohmann::json j;
  j["error"]["code"] = code;
  j["error"]["kind"] = kind;
  j["error"]["message"] = message;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coordinate calculus and flow evolution for anchored Lagrange systems"};
  app.require_subcommand(1);

  Options opt;
  std::function<int(const Options&)> action;

  CLI::App* validate = app.add_subcommand("validate", "check structure data and regularity");
  add_common(validate, opt);
  validate->callback([&] { action = run_validate; });

  CLI::App* geom = app.add_subcommand("geom", "dump Hessian, connection and spray data");
  add_common(geom, opt);
  geom->callback([&] { action = run_geom; });

  CLI::App* curv = app.add_subcommand("curv", "dump connections, curvature and distortion");
  add_common(curv, opt);
  curv->callback([&] { action = run_curv; });

  CLI::App* flow = app.add_subcommand("flow", "evolve the grid state");
  add_common(flow, opt);
  flow->add_option("--steps", opt.steps, "step count override");
  flow->add_option("--dchi", opt.dchi, "step size override");
  flow->add_option("--mode", opt.mode, "evolution connection")
      ->check(CLI::IsMember({"canonical", "distorted"}));
  flow->add_option("--grad", opt.grad, "gradient term convention")
      ->check(CLI::IsMember({"squared", "literal"}));
  flow->callback([&] { action = run_flow_cmd; });

  CLI::App* thermo = app.add_subcommand("thermo", "report functionals of the initial state");
  add_common(thermo, opt);
  thermo->add_option("--mode", opt.mode, "evolution connection")
      ->check(CLI::IsMember({"canonical", "distorted"}));
  thermo->add_option("--grad", opt.grad, "gradient term convention")
      ->check(CLI::IsMember({"squared", "literal"}));
  thermo->callback([&] { action = run_thermo; });

  CLI::App* integ = app.add_subcommand("el-integrate", "integrate the evolution equations");
  add_common(integ, opt);
  integ->add_option("--steps", opt.steps, "step count override");
  integ->callback([&] { action = run_integrate; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error(1, "usage", e.what());
    return 1;
  }

  try {
    return action(opt);
  } catch (const InvariantBreach& ex) {
    emit_error(3, "invariant", ex.what());
    return 3;
  } catch (const FlowInvariantError& ex) {
    emit_error(3, "invariant", ex.what());
    return 3;
  } catch (const ScenarioError& ex) {
    emit_error(2, "domain", ex.what());
    return 2;
  } catch (const FlowDomainError& ex) {
    emit_error(2, "domain", ex.what());
    return 2;
  } catch (const SingularMatrixError& ex) {
    emit_error(2, "domain", ex.what());
    return 2;
  } catch (const DomainError& ex) {
    emit_error(2, "domain", ex.what());
    return 2;
  } catch (const std::exception& ex) {
    emit_error(2, "domain", ex.what());
    return 2;
  }
}
