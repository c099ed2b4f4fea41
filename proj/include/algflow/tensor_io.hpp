// Artifact writers: tensor dumps as JSON records or flat CSV, flow series
// CSV, trajectory CSV, thermodynamic report JSON and state snapshots. All
// floating point text uses seventeen significant digits so reruns are byte
// identical.

#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "algflow/flow.hpp"

namespace algflow {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct DumpEntry {
  std::string block;
  std::vector<int> index;
  std::vector<double> point;
  double value = 0.0;
};

class TensorDump {
 public:
  void add(std::string block, std::vector<int> index, const std::vector<double>& point,
           double value) {
    entries_.push_back({std::move(block), std::move(index), point, value});
  }

  void write_csv(const std::string& path, const std::vector<std::string>& coord_names) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "block,index";
    for (const std::string& nm : coord_names) out << "," << nm;
    out << ",value\n";
    for (const DumpEntry& e : entries_) {
      out << e.block << ",";
      for (std::size_t i = 0; i < e.index.size(); ++i) {
        if (i) out << ":";
        out << e.index[i];
      }
      for (double c : e.point) out << "," << fmt17(c);
      out << "," << fmt17(e.value) << "\n";
    }
  }

  void write_json(const std::string& path) const {
    nlohmann::json arr = nlohmann::json::array();
    for (const DumpEntry& e : entries_) {
      nlohmann::json rec;
      rec["block-name"] = e.block;
      rec["index-tuple"] = e.index;
      rec["point"] = e.point;
      rec["value"] = e.value;
      arr.push_back(std::move(rec));
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << arr.dump(1) << "\n";
  }

  const std::vector<DumpEntry>& entries() const { return entries_; }

 private:
  std::vector<DumpEntry> entries_;
};

inline void write_flow_csv(const std::string& path, const std::vector<FlowRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "chi,tau,F,W,E_avg,S,sigma,max_mixed_ricci_residual,min_eig_g\n";
  for (const FlowRow& r : rows)
    out << fmt17(r.chi) << "," << fmt17(r.tau) << "," << fmt17(r.rep.F) << "," << fmt17(r.rep.W)
        << "," << fmt17(r.rep.e_avg) << "," << fmt17(r.rep.entropy) << "," << fmt17(r.rep.sigma)
        << "," << fmt17(r.rep.max_mixed) << "," << fmt17(r.rep.min_eig) << "\n";
}

inline void write_trajectory_csv(const std::string& path,
                                 const std::vector<std::string>& coord_names,
                                 const std::vector<std::vector<double>>& rows, double dt,
                                 const std::vector<double>& energies) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "tau";
  for (const std::string& nm : coord_names) out << "," << nm;
  out << ",E_L\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out << fmt17(static_cast<double>(k) * dt);
    for (double v : rows[k]) out << "," << fmt17(v);
    out << "," << fmt17(energies[k]) << "\n";
  }
}

inline void write_thermo_json(const std::string& path, double tau,
                              const FlowEngine::Report& rep) {
  nlohmann::json j;
  j["tau"] = tau;
  j["beta"] = rep.beta;
  j["log_z"] = rep.log_z;
  j["e_avg"] = rep.e_avg;
  j["entropy"] = rep.entropy;
  j["sigma"] = rep.sigma;
  j["F"] = rep.F;
  j["W"] = rep.W;
  j["mu_total"] = rep.mu_total;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(1) << "\n";
}

inline void write_snapshot_json(const std::string& path, const GridSample& s,
                                const FlowState& st) {
  nlohmann::json j;
  j["chi"] = st.chi;
  j["tau"] = st.tau;
  j["grid"]["lo"] = s.grid.lo;
  j["grid"]["hi"] = s.grid.hi;
  j["grid"]["counts"] = s.grid.counts;
  j["gh"] = st.gh;
  j["gv"] = st.gv;
  j["f"] = st.f;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(1) << "\n";
}

}  // namespace algflow
