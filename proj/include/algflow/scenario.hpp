// Scenario files: one JSON document holding the anchored structure, the
// Lagrangian, optional explicit metric blocks, and the grid, flow,
// integration and output settings the front end consumes. Loading validates
// shapes eagerly; every failure names the offending JSON pointer path, and
// unknown keys are rejected.

#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "algflow/algebroid.hpp"
#include "algflow/flow.hpp"
#include "algflow/geometry.hpp"
#include "algflow/grid.hpp"
#include "algflow/sampling.hpp"

namespace algflow {

struct ScenarioError : std::runtime_error {
  explicit ScenarioError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what) {}
};

struct FlowSettings {
  bool present = false;
  double tau0 = 1.0;
  double dchi = 1e-4;
  int steps = 0;
  FlowMode mode = FlowMode::Canonical;
  GradConvention grad = GradConvention::Squared;
  double max_mixed_ricci = std::numeric_limits<double>::infinity();
  bool perturbed = false;
  std::vector<Expr> pert_h, pert_v;
  double amplitude = 0.0;
};

struct IntegrateSettings {
  bool present = false;
  std::vector<double> point;
  double dt = 1e-3;
  int steps = 0;
};

struct OutputSettings {
  std::string format = "csv";
  std::string prefix;
};

struct Scenario {
  explicit Scenario(Algebroid a) : alg(std::move(a)) {}

  std::string name;
  std::string kind;  // empty or tangent-like | lie-algebra | general
  Algebroid alg;
  Box box;
  Expr lagrangian;
  std::vector<Expr> metric_h, metric_v;  // empty: fiber Hessian blocks
  std::vector<int> grid_counts;          // empty: no grid section
  FlowSettings flow;
  IntegrateSettings integrate;
  OutputSettings output;

  int n() const { return alg.n(); }
  int m() const { return alg.m(); }

  LagrangeGeometry geometry() const { return LagrangeGeometry::make(alg, lagrangian); }

  MetricBlocks metric_blocks(const LagrangeGeometry& geo) const {
    if (metric_h.empty()) return MetricBlocks::from_hessian(geo);
    auto mh = std::make_shared<MatrixField>();
    auto mv = std::make_shared<MatrixField>();
    mh->dim = m();
    mv->dim = m();
    for (const Expr& e : metric_h) mh->entries.push_back(field_expr(e));
    for (const Expr& e : metric_v) mv->entries.push_back(field_expr(e));
    return {mh, mv};
  }

  Grid make_grid() const {
    if (grid_counts.empty()) throw ScenarioError("/grid", "section required for this command");
    return Grid::make(box.lo, box.hi, grid_counts);
  }
};

namespace scenario_detail {

using nlohmann::json;

inline void expect_keys(const json& j, const std::string& path,
                        std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ScenarioError(path + "/" + it.key(), "unknown key");
  }
}

inline const json& require(const json& j, const std::string& path, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ScenarioError(path + "/" + key, "missing");
  return *it;
}

inline double num_at(const json& j, const std::string& path) {
  if (!j.is_number()) throw ScenarioError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ScenarioError(path, "expected a finite number");
  return v;
}

inline int int_at(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ScenarioError(path, "expected an integer");
  return j.get<int>();
}

inline std::string str_at(const json& j, const std::string& path) {
  if (!j.is_string()) throw ScenarioError(path, "expected a string");
  return j.get<std::string>();
}

inline std::vector<double> num_list(const json& j, const std::string& path, std::size_t count) {
  if (!j.is_array() || j.size() != count)
    throw ScenarioError(path, "expected an array of " + std::to_string(count) + " numbers");
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(num_at(j[i], path + "/" + std::to_string(i)));
  return out;
}

// Expressions may reference chart coordinates and declared parameters; the
// parameters are substituted away right after parsing.
struct ExprReader {
  std::vector<std::string> names;
  std::vector<double> values;  // parameter slots only, aligned past the chart
  int chart_dim = 0;

  Expr read(const json& j, const std::string& path) const {
    if (!j.is_string()) throw ScenarioError(path, "expected an expression string");
    Expr e;
    try {
      e = parse(j.get<std::string>(), names);
    } catch (const std::exception& ex) {
      throw ScenarioError(path, ex.what());
    }
    for (std::size_t k = 0; k < values.size(); ++k)
      e = substitute(e, chart_dim + static_cast<int>(k), constant(values[k]));
    return e;
  }

  std::vector<Expr> read_list(const json& j, const std::string& path, std::size_t count) const {
    if (!j.is_array() || j.size() != count)
      throw ScenarioError(path, "expected an array of " + std::to_string(count) + " expressions");
    std::vector<Expr> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(read(j[i], path + "/" + std::to_string(i)));
    return out;
  }
};

}  // namespace scenario_detail

inline Scenario load_scenario(const std::string& path) {
  using nlohmann::json;
  using namespace scenario_detail;

  std::ifstream in(path);
  if (!in) throw ScenarioError("/", "cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const std::exception& ex) {
    throw ScenarioError("/", std::string("invalid JSON: ") + ex.what());
  }
  if (!doc.is_object()) throw ScenarioError("/", "expected an object");
  expect_keys(doc, "",
              {"name", "kind", "algebroid", "lagrangian", "metric", "grid", "flow", "integrate",
               "output"});

  const json& ja = require(doc, "", "algebroid");
  if (!ja.is_object()) throw ScenarioError("/algebroid", "expected an object");
  expect_keys(ja, "/algebroid", {"n", "m", "rho", "c", "box"});
  const int n = int_at(require(ja, "/algebroid", "n"), "/algebroid/n");
  const int m = int_at(require(ja, "/algebroid", "m"), "/algebroid/m");
  if (n < 0) throw ScenarioError("/algebroid/n", "base dimension cannot be negative");
  if (m < 1) throw ScenarioError("/algebroid/m", "fiber rank must be at least one");

  Coords co = Coords::make(n, m);

  // Parameter table shared by every expression in the file.
  ExprReader rd;
  rd.names = co.names;
  rd.chart_dim = n + m;
  if (const auto it = doc.find("lagrangian"); it != doc.end() && it->is_object()) {
    if (const auto pit = it->find("parameters"); pit != it->end()) {
      if (!pit->is_object()) throw ScenarioError("/lagrangian/parameters", "expected an object");
      for (auto p = pit->begin(); p != pit->end(); ++p) {
        for (const std::string& nm : co.names)
          if (nm == p.key())
            throw ScenarioError("/lagrangian/parameters/" + p.key(),
                                "parameter shadows a chart coordinate");
        rd.names.push_back(p.key());
        rd.values.push_back(num_at(p.value(), "/lagrangian/parameters/" + p.key()));
      }
    }
  }

  std::vector<Expr> rho;
  if (const auto it = ja.find("rho"); it != ja.end())
    rho = rd.read_list(*it, "/algebroid/rho", static_cast<std::size_t>(m * n));
  else if (n > 0)
    throw ScenarioError("/algebroid/rho", "missing");
  std::vector<Expr> cfun(static_cast<std::size_t>(m * m * m), constant(0));
  if (const auto it = ja.find("c"); it != ja.end())
    cfun = rd.read_list(*it, "/algebroid/c", static_cast<std::size_t>(m * m * m));

  Scenario sc{Algebroid::make(co, std::move(rho), std::move(cfun))};

  const json& jb = require(ja, "/algebroid", "box");
  if (!jb.is_object()) throw ScenarioError("/algebroid/box", "expected an object");
  expect_keys(jb, "/algebroid/box", {"lo", "hi"});
  sc.box.lo = num_list(require(jb, "/algebroid/box", "lo"), "/algebroid/box/lo",
                       static_cast<std::size_t>(n + m));
  sc.box.hi = num_list(require(jb, "/algebroid/box", "hi"), "/algebroid/box/hi",
                       static_cast<std::size_t>(n + m));
  for (int k = 0; k < n + m; ++k)
    if (!(sc.box.lo[static_cast<std::size_t>(k)] < sc.box.hi[static_cast<std::size_t>(k)]))
      throw ScenarioError("/algebroid/box", "lo must be strictly below hi");

  if (const auto it = doc.find("name"); it != doc.end()) sc.name = str_at(*it, "/name");
  if (const auto it = doc.find("kind"); it != doc.end()) {
    sc.kind = str_at(*it, "/kind");
    if (sc.kind != "tangent-like" && sc.kind != "lie-algebra" && sc.kind != "general")
      throw ScenarioError("/kind", "expected tangent-like, lie-algebra or general");
  }

  const json& jl = require(doc, "", "lagrangian");
  if (!jl.is_object()) throw ScenarioError("/lagrangian", "expected an object");
  expect_keys(jl, "/lagrangian", {"L", "parameters"});
  sc.lagrangian = rd.read(require(jl, "/lagrangian", "L"), "/lagrangian/L");

  if (const auto it = doc.find("metric"); it != doc.end()) {
    if (!it->is_object()) throw ScenarioError("/metric", "expected an object");
    expect_keys(*it, "/metric", {"h", "v"});
    sc.metric_h = rd.read_list(require(*it, "/metric", "h"), "/metric/h",
                               static_cast<std::size_t>(m * m));
    sc.metric_v = rd.read_list(require(*it, "/metric", "v"), "/metric/v",
                               static_cast<std::size_t>(m * m));
  }

  if (const auto it = doc.find("grid"); it != doc.end()) {
    if (!it->is_object()) throw ScenarioError("/grid", "expected an object");
    expect_keys(*it, "/grid", {"counts"});
    const json& jc = require(*it, "/grid", "counts");
    if (!jc.is_array() || jc.size() != static_cast<std::size_t>(n + m))
      throw ScenarioError("/grid/counts",
                          "expected an array of " + std::to_string(n + m) + " integers");
    for (std::size_t i = 0; i < jc.size(); ++i) {
      const int c = int_at(jc[i], "/grid/counts/" + std::to_string(i));
      if (c < 8) throw ScenarioError("/grid/counts/" + std::to_string(i), "needs at least 8");
      sc.grid_counts.push_back(c);
    }
  }

  if (const auto it = doc.find("flow"); it != doc.end()) {
    const json& jf = *it;
    if (!jf.is_object()) throw ScenarioError("/flow", "expected an object");
    expect_keys(jf, "/flow",
                {"tau0", "dchi", "steps", "mode", "gradient", "max_mixed_ricci", "perturbation"});
    FlowSettings& fs = sc.flow;
    fs.present = true;
    fs.tau0 = num_at(require(jf, "/flow", "tau0"), "/flow/tau0");
    if (!(fs.tau0 > 0)) throw ScenarioError("/flow/tau0", "must be positive");
    fs.dchi = num_at(require(jf, "/flow", "dchi"), "/flow/dchi");
    if (!(fs.dchi > 0)) throw ScenarioError("/flow/dchi", "must be positive");
    fs.steps = int_at(require(jf, "/flow", "steps"), "/flow/steps");
    if (fs.steps < 0) throw ScenarioError("/flow/steps", "cannot be negative");
    if (const auto mit = jf.find("mode"); mit != jf.end()) {
      const std::string v = str_at(*mit, "/flow/mode");
      if (v == "canonical")
        fs.mode = FlowMode::Canonical;
      else if (v == "distorted")
        fs.mode = FlowMode::Distorted;
      else
        throw ScenarioError("/flow/mode", "expected canonical or distorted");
    }
    if (const auto git = jf.find("gradient"); git != jf.end()) {
      const std::string v = str_at(*git, "/flow/gradient");
      if (v == "squared")
        fs.grad = GradConvention::Squared;
      else if (v == "literal")
        fs.grad = GradConvention::Literal;
      else
        throw ScenarioError("/flow/gradient", "expected squared or literal");
    }
    if (const auto tit = jf.find("max_mixed_ricci"); tit != jf.end()) {
      fs.max_mixed_ricci = num_at(*tit, "/flow/max_mixed_ricci");
      if (!(fs.max_mixed_ricci > 0)) throw ScenarioError("/flow/max_mixed_ricci", "must be positive");
    }
    if (const auto pit = jf.find("perturbation"); pit != jf.end()) {
      if (!pit->is_object()) throw ScenarioError("/flow/perturbation", "expected an object");
      expect_keys(*pit, "/flow/perturbation", {"h", "v", "amplitude"});
      fs.perturbed = true;
      fs.pert_h = rd.read_list(require(*pit, "/flow/perturbation", "h"), "/flow/perturbation/h",
                               static_cast<std::size_t>(m * m));
      fs.pert_v = rd.read_list(require(*pit, "/flow/perturbation", "v"), "/flow/perturbation/v",
                               static_cast<std::size_t>(m * m));
      fs.amplitude =
          num_at(require(*pit, "/flow/perturbation", "amplitude"), "/flow/perturbation/amplitude");
    }
  }

  if (const auto it = doc.find("integrate"); it != doc.end()) {
    const json& ji = *it;
    if (!ji.is_object()) throw ScenarioError("/integrate", "expected an object");
    expect_keys(ji, "/integrate", {"point", "dt", "steps"});
    sc.integrate.present = true;
    sc.integrate.point = num_list(require(ji, "/integrate", "point"), "/integrate/point",
                                  static_cast<std::size_t>(n + m));
    sc.integrate.dt = num_at(require(ji, "/integrate", "dt"), "/integrate/dt");
    if (!(sc.integrate.dt > 0)) throw ScenarioError("/integrate/dt", "must be positive");
    sc.integrate.steps = int_at(require(ji, "/integrate", "steps"), "/integrate/steps");
    if (sc.integrate.steps < 0) throw ScenarioError("/integrate/steps", "cannot be negative");
  }

  if (const auto it = doc.find("output"); it != doc.end()) {
    const json& jo = *it;
    if (!jo.is_object()) throw ScenarioError("/output", "expected an object");
    expect_keys(jo, "/output", {"format", "prefix"});
    if (const auto fit = jo.find("format"); fit != jo.end()) {
      sc.output.format = str_at(*fit, "/output/format");
      if (sc.output.format != "csv" && sc.output.format != "json")
        throw ScenarioError("/output/format", "expected csv or json");
    }
    if (const auto pit = jo.find("prefix"); pit != jo.end())
      sc.output.prefix = str_at(*pit, "/output/prefix");
  }

  return sc;
}

}  // namespace algflow
