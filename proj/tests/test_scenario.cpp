#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "algflow/scenario.hpp"

using namespace algflow;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string bundled(const std::string& name) {
  return std::string(ALGFLOW_SCENARIO_DIR) + "/" + name;
}

// Writes a one-off scenario document and returns its path.
std::string write_temp(const std::string& tag, const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() / ("algflow_sc_" + tag + ".json");
  std::ofstream out(path);
  out << content;
  return path.string();
}

const char* kMinimal = R"json({
  "name": "minimal",
  "algebroid": {
    "n": 1, "m": 1, "rho": ["1"],
    "box": {"lo": [0, 0], "hi": [1, 1]}
  },
  "lagrangian": {"L": "y1^2 / 2"}
})json";

}  // namespace

TEST_CASE("bundled scenario files load") {
  for (const char* name :
       {"free_particle.json", "curved_base.json", "so3_isotropic.json", "so3_rigid_body.json",
        "general_algebroid.json", "perturbed_flat.json"}) {
    INFO(name);
    CHECK_NOTHROW(load_scenario(bundled(name)));
  }
}

TEST_CASE("bundled free particle carries grid and flow settings") {
  const Scenario sc = load_scenario(bundled("free_particle.json"));
  CHECK(sc.n() == 2);
  CHECK(sc.m() == 2);
  CHECK(sc.kind == "tangent-like");
  CHECK(sc.flow.present);
  CHECK(sc.flow.steps == 100);
  CHECK(sc.flow.mode == FlowMode::Canonical);
  CHECK(sc.flow.max_mixed_ricci == 1e-9);
  CHECK_FALSE(sc.flow.perturbed);
  const Grid g = sc.make_grid();
  CHECK(g.total == 8 * 8 * 8 * 8);
  const LagrangeGeometry geo = sc.geometry();
  CHECK(geo.hess_at(0, 0).eval(std::vector<double>{0, 0, 0.3, 0.7}) == 1.0);
}

TEST_CASE("bundled rigid body substitutes inertia parameters into the Lagrangian") {
  const Scenario sc = load_scenario(bundled("so3_rigid_body.json"));
  CHECK(sc.n() == 0);
  CHECK(sc.m() == 3);
  CHECK(sc.integrate.present);
  CHECK(sc.integrate.steps == 10000);
  // L(1, 1, 1) = (I1 + I2 + I3) / 2 = 3 once the parameters are numbers
  CHECK(sc.lagrangian.eval(std::vector<double>{1, 1, 1}) == Catch::Approx(3.0));
}

TEST_CASE("bundled perturbed flat scenario declares the perturbation") {
  const Scenario sc = load_scenario(bundled("perturbed_flat.json"));
  CHECK(sc.flow.perturbed);
  CHECK(sc.flow.pert_h.size() == 4);
  CHECK(sc.flow.pert_v.size() == 4);
  CHECK(sc.flow.amplitude == 0.05);
  CHECK(sc.flow.mode == FlowMode::Distorted);
  CHECK(sc.grid_counts == std::vector<int>{16, 16, 16, 16});
}

TEST_CASE("bundled general scenario keeps an x dependent anchor") {
  const Scenario sc = load_scenario(bundled("general_algebroid.json"));
  const std::vector<double> p{1.0, 0.5, 0.2, 0.2};
  const double u = 1.0 + 0.3 * std::sin(1.0) * std::exp(0.1);
  CHECK(sc.alg.rho_at(1, 1).eval(p) == Catch::Approx(u));
  CHECK(sc.alg.eq1_residual(p) < 1e-12);
  CHECK(sc.alg.eq2_residual(p) < 1e-12);
}

TEST_CASE("minimal scenario defaults") {
  const Scenario sc = load_scenario(write_temp("minimal", kMinimal));
  CHECK(sc.kind.empty());
  CHECK_FALSE(sc.flow.present);
  CHECK_FALSE(sc.integrate.present);
  CHECK(sc.output.format == "csv");
  CHECK(sc.grid_counts.empty());
  CHECK_THROWS_AS(sc.make_grid(), ScenarioError);
}

TEST_CASE("explicit metric blocks override the Hessian") {
  const std::string path = write_temp("metric", R"json({
    "algebroid": {"n": 1, "m": 1, "rho": ["1"], "box": {"lo": [0, 0], "hi": [1, 1]}},
    "lagrangian": {"L": "y1^2 / 2"},
    "metric": {"h": ["2 + sin(x1)"], "v": ["3"]}
  })json");
  const Scenario sc = load_scenario(path);
  const LagrangeGeometry geo = sc.geometry();
  const MetricBlocks mb = sc.metric_blocks(geo);
  EvalContext ctx{std::vector<double>{0.5, 0.1}};
  CHECK(ctx.eval(mb.h->at(0, 0)) == Catch::Approx(2.0 + std::sin(0.5)));
  CHECK(ctx.eval(mb.v->at(0, 0)) == Catch::Approx(3.0));
}

TEST_CASE("load failures name the JSON pointer of the offending entry") {
  SECTION("missing Lagrangian expression") {
    const std::string path = write_temp("nol", R"json({
      "algebroid": {"n": 0, "m": 1, "box": {"lo": [0], "hi": [1]}},
      "lagrangian": {}
    })json");
    CHECK_THROWS_WITH(load_scenario(path), ContainsSubstring("/lagrangian/L"));
  }
  SECTION("zero fiber rank") {
    const std::string path = write_temp("m0", R"json({
      "algebroid": {"n": 0, "m": 0, "box": {"lo": [], "hi": []}},
      "lagrangian": {"L": "0"}
    })json");
    CHECK_THROWS_WITH(load_scenario(path), ContainsSubstring("/algebroid/m"));
  }
  SECTION("unknown key") {
    const std::string path = write_temp("unk", R"json({
      "algebroid": {"n": 0, "m": 1, "box": {"lo": [0], "hi": [1]}},
      "lagrangian": {"L": "y1^2"},
      "flows": {}
    })json");
    CHECK_THROWS_WITH(load_scenario(path), ContainsSubstring("/flows"));
  }
  SECTION("unknown key inside a section") {
    const std::string path = write_temp("unk2", R"json({
      "algebroid": {"n": 0, "m": 1, "box": {"lo": [0], "hi": [1]}},
      "lagrangian": {"L": "y1^2"},
      "flow": {"tau0": 1, "dchi": 0.001, "steps": 1, "ramp": 2}
    })json");
    CHECK_THROWS_WITH(load_scenario(path), ContainsSubstring("/flow/ramp"));
  }
  SECTION("unordered box") {
    const std::string path = write_temp("box", R"json({
      "algebroid": {"n": 0, "m": 1, "box": {"lo": [1], "hi": [0]}},
      "lagrangian": {"L": "y1^2"}
    })json");
    CHECK_THROWS_WITH(load_scenario(path), ContainsSubstring("/algebroid/box"));
  }
  SECTION("bad flow mode") {
    const std::string path = write_temp("mode", R"json({
      "algebroid": {"n": 0, "m": 1, "box": {"lo": [0], "hi": [1]}},
      "lagrangian": {"L": "y1^2"},
      "flow": {"tau0": 1, "dchi": 0.001, "steps": 1, "mode": "sideways"}
    })json");
    CHECK_THROWS_WITH(load_scenario(path), ContainsSubstring("/flow/mode"));
  }
  SECTION("parameter shadowing a coordinate") {
    const std::string path = write_temp("shadow", R"json({
      "algebroid": {"n": 0, "m": 1, "box": {"lo": [0], "hi": [1]}},
      "lagrangian": {"L": "y1^2", "parameters": {"y1": 2}}
    })json");
    CHECK_THROWS_WITH(load_scenario(path), ContainsSubstring("/lagrangian/parameters/y1"));
  }
  SECTION("grid too coarse") {
    const std::string path = write_temp("coarse", R"json({
      "algebroid": {"n": 0, "m": 1, "box": {"lo": [0], "hi": [1]}},
      "lagrangian": {"L": "y1^2"},
      "grid": {"counts": [4]}
    })json");
    CHECK_THROWS_WITH(load_scenario(path), ContainsSubstring("/grid/counts/0"));
  }
  SECTION("expression parse failure") {
    const std::string path = write_temp("expr", R"json({
      "algebroid": {"n": 0, "m": 1, "box": {"lo": [0], "hi": [1]}},
      "lagrangian": {"L": "y1^^2"}
    })json");
    CHECK_THROWS_WITH(load_scenario(path), ContainsSubstring("/lagrangian/L"));
  }
  SECTION("invalid JSON document") {
    const std::string path = write_temp("syntax", "{ not json");
    CHECK_THROWS_WITH(load_scenario(path), ContainsSubstring("invalid JSON"));
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_scenario("/nonexistent/path.json"), ScenarioError);
  }
}
