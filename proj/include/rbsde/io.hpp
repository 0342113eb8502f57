#pragma once

#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rbsde/errors.hpp"
#include "rbsde/estimates.hpp"
#include "rbsde/fixtures.hpp"
#include "rbsde/gtree.hpp"
#include "rbsde/lattice.hpp"
#include "rbsde/random_time.hpp"
#include "rbsde/snell.hpp"
#include "rbsde/solver.hpp"

namespace rbsde {

using nlohmann::json;

// CSV floats use 17 significant digits (bit-exact round trip); JSON relies
// on the library's shortest-round-trip formatting.
inline std::string csv_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// Path prefix of a node as a bit string of up (1) / down (0) moves.
inline std::string path_string(const FiltrationTree& tree, int id) {
  int t = tree.node_step(id), k = tree.node_idx(id);
  std::string s;
  for (int b = t - 1; b >= 0; --b) s += ((k >> b) & 1) ? '1' : '0';
  return s;
}

// ----------------------------------------------------------------------------
// Tree serialization: {grid: {steps, dt}, nodes: [...]}.
// ----------------------------------------------------------------------------

inline json tree_to_json(const FiltrationTree& tree) {
  json nodes = json::array();
  for (int id = 0; id < tree.num_nodes(); ++id) {
    json n;
    n["id"] = id;
    n["step"] = tree.node_step(id);
    n["parent"] = id == 0 ? -1 : tree.parent(id);
    n["branch"] = id == 0 ? -1 : tree.branch_into(id);
    n["up_prob"] = tree.up_prob(id);
    n["dw_up"] = tree.dw_up(id);
    n["dw_down"] = tree.dw_down(id);
    nodes.push_back(n);
  }
  return json{{"grid", {{"steps", tree.steps()}, {"dt", tree.dt()}}}, {"nodes", nodes}};
}

inline FiltrationTree tree_from_json(const json& j) {
  if (!j.contains("grid") || !j.contains("nodes")) throw ConfigError("tree json: missing keys");
  int steps = j["grid"].at("steps").get<int>();
  double dt = j["grid"].at("dt").get<double>();
  FiltrationTree base = FiltrationTree::symmetric(steps, dt);
  std::vector<double> up(base.num_nodes()), du(base.num_nodes()), dd(base.num_nodes());
  if (static_cast<int>(j["nodes"].size()) != base.num_nodes())
    throw ConfigError("tree json: node count mismatch");
  for (const auto& n : j["nodes"]) {
    int id = n.at("id").get<int>();
    if (id < 0 || id >= base.num_nodes()) throw ConfigError("tree json: bad node id");
    up[id] = n.at("up_prob").get<double>();
    du[id] = n.at("dw_up").get<double>();
    dd[id] = n.at("dw_down").get<double>();
  }
  return FiltrationTree::explicit_branches(steps, dt, std::move(up), std::move(du),
                                           std::move(dd));
}

// ----------------------------------------------------------------------------
// Random-time model serialization: named kinds or an explicit law matrix.
// ----------------------------------------------------------------------------

inline json model_to_json_explicit(const RandomTimeModel& model) {
  const FiltrationTree& tree = model.tree();
  json rows = json::array();
  for (int l = 0; l < tree.num_leaves(); ++l) {
    json row = json::array();
    for (int s = 1; s <= tree.steps(); ++s) row.push_back(model.death_mass(l, s));
    row.push_back(model.survive_mass(l));
    rows.push_back(row);
  }
  return json{{"model_kind", "leaf_law"}, {"leaf_law", rows}};
}

inline RandomTimeModel model_from_json(const json& j, const FiltrationTree& tree) {
  std::string kind = j.at("model_kind").get<std::string>();
  auto param = [&j](const char* key, double dflt) {
    return j.contains("parameters") && j["parameters"].contains(key)
               ? j["parameters"][key].get<double>()
               : dflt;
  };
  if (kind == "immersion") return independent_hazard(tree, param("hazard", 0.2));
  if (kind == "adapted_hazard")
    return adapted_hazard(tree, param("base", 0.2), param("spread", 0.1));
  if (kind == "lookahead_hazard")
    return lookahead_hazard(tree, param("base", 0.2), param("spread", 0.12));
  if (kind == "terminal_hazard")
    return terminal_hazard(tree, param("base", 0.25), param("tilt", 0.6));
  if (kind == "no_default") return no_default(tree);
  if (kind == "leaf_law") {
    const json& rows = j.at("leaf_law");
    int L = tree.num_leaves(), N = tree.steps();
    if (static_cast<int>(rows.size()) != L) throw ConfigError("leaf_law: row count mismatch");
    std::vector<std::vector<double>> law(L, std::vector<double>(N));
    std::vector<double> surv(L);
    for (int l = 0; l < L; ++l) {
      if (static_cast<int>(rows[l].size()) != N + 1)
        throw ConfigError("leaf_law: row length must be N+1");
      for (int s = 0; s < N; ++s) law[l][s] = rows[l][s].get<double>();
      surv[l] = rows[l][N].get<double>();
    }
    return RandomTimeModel(tree, std::move(law), std::move(surv));
  }
  throw ConfigError("model json: unknown model_kind '" + kind + "'");
}

// ----------------------------------------------------------------------------
// CSV exports.
// ----------------------------------------------------------------------------

inline void azema_to_csv(const FiltrationTree& tree, const AzemaBundle& b, std::ostream& os) {
  os << "step,path,G,Gtilde,DoF,m,Ztilde,Etilde,VF\n";
  for (int id = 0; id < tree.num_nodes(); ++id) {
    os << tree.node_step(id) << ',' << path_string(tree, id) << ',' << csv_double(b.G[id]) << ','
       << csv_double(b.Gtilde[id]) << ',' << csv_double(b.DoF[id]) << ',' << csv_double(b.m[id])
       << ',' << csv_double(b.Ztilde[id]) << ',' << csv_double(b.Etilde[id]) << ','
       << csv_double(b.VF[id]) << '\n';
  }
}

inline void snell_to_csv(const GTree& gt, const GStateVec& payoff, const SnellResult& r,
                         std::ostream& os) {
  const FiltrationTree& tree = gt.tree();
  os << "step,path,alive,payoff,value,stop_flag\n";
  for (int sid = 0; sid < gt.num_states(); ++sid) {
    int node = gt.fnode(sid);
    os << gt.state_step(sid) << ',' << path_string(tree, node) << ',' << (gt.is_dead(sid) ? 0 : 1)
       << ',' << csv_double(payoff[sid]) << ',' << csv_double(r.value[sid]) << ','
       << static_cast<int>(r.stop[sid]) << '\n';
  }
}

inline void gsolution_to_csv(const GTree& gt, const GSolution& sol, std::ostream& os) {
  const FiltrationTree& tree = gt.tree();
  os << "step,path,alive,Y,Z,K,M\n";
  for (int sid = 0; sid < gt.num_states(); ++sid) {
    int node = gt.fnode(sid);
    bool alive = !gt.is_dead(sid);
    double z = alive && tree.node_step(node) < tree.steps() ? sol.Z[node] : 0.0;
    os << gt.state_step(sid) << ',' << path_string(tree, node) << ',' << (alive ? 1 : 0) << ','
       << csv_double(sol.Y[sid]) << ',' << csv_double(z) << ',' << csv_double(sol.K[sid]) << ','
       << csv_double(sol.M[sid]) << '\n';
  }
}

inline void estimate_report_to_csv(const EstimateReport& rep, std::ostream& os) {
  os << "instance,theorem,lhs,rhs,ratio,pass\n";
  for (const auto& r : rep.rows)
    os << r.instance << ',' << estimate_tag(r.theorem) << ',' << csv_double(r.lhs) << ','
       << csv_double(r.rhs) << ',' << csv_double(r.ratio) << ',' << (r.pass ? 1 : 0) << '\n';
}

inline json estimate_report_to_json(const EstimateReport& rep) {
  return json{{"max_ratio", rep.max_ratio},
              {"violations", rep.violations},
              {"instances", rep.rows.size()}};
}

inline void write_file(const std::string& path, const std::string& contents) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open output file: " + path);
  os << contents;
}

}  // namespace rbsde
