// Experiment runner: builds fixtures from a JSON config, dispatches the
// verification tasks and writes machine-readable reports.
//
// Exit codes: 0 success, 2 config error, 3 task failure.

#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rbsde/rbsde.hpp"

namespace fs = std::filesystem;
using rbsde::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitTask = 3;

struct TaskInfo {
  const char* name;
  const char* what;
};

const TaskInfo kTasks[] = {
    {"azema", "build the survival pair and derived processes; export CSV + martingale checks"},
    {"snell-transfer", "evaluate both sides of the optimal-stopping transfer formulas"},
    {"rbsde-solve", "solve the reflected equation on the enlarged tree; export the solution"},
    {"transform-check", "solve on both filtrations and compare the lifted solution"},
    {"picard", "fixed-point iteration for a Lipschitz driver, with the delta trace"},
    {"estimate-audit", "batch audits of the norm inequalities (explicit constants hard-assert)"},
    {"horizon-study", "truncate the data at increasing levels and track weighted distances"},
    {"oracle-check", "backward-recursion optimal stopping against exhaustive rule enumeration"},
};

void list_tasks() {
  for (const auto& t : kTasks) std::cout << t.name << "\t" << t.what << "\n";
}

// Strict key-checking helpers: unknown keys are config errors.
void require_keys(const json& j, const std::vector<std::string>& allowed,
                  const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw rbsde::ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

struct Experiment {
  std::uint64_t seed = 1;
  int jobs = 1;
  rbsde::TimeGrid grid{6, 0.125};
  json tree_spec;   // optional explicit lattice (full branch data)
  json model_spec;
  json data_spec;
  std::string task;
  json task_params;
  std::string out_prefix = "report";
};

Experiment parse_config(const json& j) {
  require_keys(j, {"seed", "jobs", "grid", "tree", "model", "data", "task", "output"}, "config");
  Experiment e;
  if (j.contains("seed")) e.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("jobs")) e.jobs = j["jobs"].get<int>();
  if (!j.contains("grid") || !j.contains("model") || !j.contains("task"))
    throw rbsde::ConfigError("config requires 'grid', 'model' and 'task'");
  require_keys(j["grid"], {"steps", "dt"}, "grid");
  e.grid.steps = j["grid"].at("steps").get<int>();
  e.grid.dt = j["grid"].at("dt").get<double>();
  e.grid.validate();
  if (j.contains("tree")) e.tree_spec = j["tree"];
  e.model_spec = j["model"];
  if (j.contains("data")) e.data_spec = j["data"];
  require_keys(j["task"], {"name", "p", "a", "alpha", "tol", "max_iter", "levels", "count",
                           "theorem", "depth"},
               "task");
  e.task = j["task"].at("name").get<std::string>();
  e.task_params = j["task"];
  if (j.contains("output")) {
    require_keys(j["output"], {"prefix"}, "output");
    if (j["output"].contains("prefix")) e.out_prefix = j["output"]["prefix"].get<std::string>();
  }
  bool known = false;
  for (const auto& t : kTasks)
    if (e.task == t.name) known = true;
  if (!known) throw rbsde::ConfigError("unknown task '" + e.task + "'");
  return e;
}

// Driver / barrier / terminal construction from the data spec.
rbsde::RBSDEData build_data(const json& spec, const rbsde::FiltrationTree& tree,
                            std::mt19937_64& rng) {
  using rbsde::ConfigError;
  using rbsde::TreeProcess;
  rbsde::RBSDEData data;
  data.S = TreeProcess::optional(tree, rbsde::kNoBarrier);
  data.h = TreeProcess::optional(tree, 1.0);
  data.linear = true;
  data.c_lip = 0.0;
  data.f = [](int, int, double, double) { return 0.0; };
  if (spec.is_null()) return data;
  require_keys(spec, {"driver", "barrier", "terminal", "horizon"}, "data");

  if (spec.contains("driver")) {
    const json& d = spec["driver"];
    require_keys(d, {"kind", "value", "a", "b", "c", "lo", "hi"}, "driver");
    std::string kind = d.at("kind").get<std::string>();
    if (kind == "zero") {
      // defaults already in place
    } else if (kind == "constant") {
      double v = d.at("value").get<double>();
      data.f = [v](int, int, double, double) { return v; };
    } else if (kind == "random") {
      double lo = d.contains("lo") ? d["lo"].get<double>() : -1.0;
      double hi = d.contains("hi") ? d["hi"].get<double>() : 1.0;
      auto vals = std::make_shared<std::vector<double>>(tree.num_nodes());
      std::uniform_real_distribution<double> u(lo, hi);
      for (double& v : *vals) v = u(rng);
      data.f = [vals](int, int id, double, double) { return (*vals)[id]; };
    } else if (kind == "siny_z") {
      double a = d.at("a").get<double>(), b = d.at("b").get<double>();
      double c = d.contains("c") ? d["c"].get<double>() : 0.0;
      data.linear = false;
      data.c_lip = std::abs(a) + std::abs(b);
      data.f = [a, b, c](int, int, double y, double z) { return a * std::sin(y) + b * z + c; };
    } else if (kind == "scaled_y") {
      double c = d.at("c").get<double>();
      data.linear = false;
      data.c_lip = std::abs(c);
      data.f = [c](int, int, double y, double) { return -c * y; };
    } else {
      throw ConfigError("unknown driver kind '" + kind + "'");
    }
  }
  if (spec.contains("barrier")) {
    const json& b = spec["barrier"];
    require_keys(b, {"kind", "value", "a", "b"}, "barrier");
    std::string kind = b.at("kind").get<std::string>();
    if (kind == "none") {
      // sentinel already in place
    } else if (kind == "constant") {
      double v = b.at("value").get<double>();
      for (double& s : data.S.v) s = v;
    } else if (kind == "brownian") {
      double a = b.at("a").get<double>(), bb = b.at("b").get<double>();
      rbsde::TreeProcess w = rbsde::brownian(tree);
      for (int id = 0; id < tree.num_nodes(); ++id) data.S[id] = a + bb * w[id];
    } else {
      throw ConfigError("unknown barrier kind '" + kind + "'");
    }
  }
  if (spec.contains("terminal")) {
    const json& h = spec["terminal"];
    require_keys(h, {"kind", "value", "a", "b", "lo", "hi"}, "terminal");
    std::string kind = h.at("kind").get<std::string>();
    if (kind == "constant") {
      double v = h.at("value").get<double>();
      for (double& x : data.h.v) x = v;
    } else if (kind == "brownian") {
      double a = h.at("a").get<double>(), bb = h.at("b").get<double>();
      rbsde::TreeProcess w = rbsde::brownian(tree);
      for (int id = 0; id < tree.num_nodes(); ++id) data.h[id] = a + bb * w[id];
    } else if (kind == "random") {
      double lo = h.contains("lo") ? h["lo"].get<double>() : 0.5;
      double hi = h.contains("hi") ? h["hi"].get<double>() : 1.5;
      data.h = rbsde::random_optional(tree, rng, lo, hi);
    } else {
      throw ConfigError("unknown terminal kind '" + kind + "'");
    }
  }
  if (spec.contains("horizon")) data.horizon = spec["horizon"].get<int>();
  // Keep the terminal above the barrier so the data triplet is admissible.
  for (int id = 0; id < tree.num_nodes(); ++id)
    if (data.S[id] != rbsde::kNoBarrier)
      data.h[id] = std::max(data.h[id], data.S[id]);
  return data;
}

struct Failures {
  std::vector<std::string> items;
  void add(const std::string& s) { items.push_back(s); }
  bool any() const { return !items.empty(); }
};

json failures_json(const Failures& f) {
  json arr = json::array();
  for (const auto& s : f.items) arr.push_back(s);
  return arr;
}

int run_experiment(const Experiment& e, const fs::path& out_dir, bool validate_only, int jobs);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lattice laboratory for reflected backward equations with a random horizon"};
  std::string config_path;
  std::string out_dir = ".";
  bool do_list = false;
  bool validate_only = false;
  int jobs = 0;

  CLI::App* run = app.add_subcommand("run", "run an experiment from a config file");
  run->fallthrough();  // global flags may follow the subcommand
  run->add_option("config", config_path, "JSON config file")->required();
  app.add_flag("--list-tasks", do_list, "enumerate available tasks");
  app.add_flag("--validate-only", validate_only, "parse and validate the config, run nothing");
  app.add_option("--out-dir", out_dir, "report directory (overrides RBSDE_LAB_OUT)");
  app.add_option("--jobs", jobs, "worker pool size for batch tasks");

  CLI11_PARSE(app, argc, argv);

  if (do_list) {
    list_tasks();
    return kExitOk;
  }
  if (!run->parsed()) {
    std::cerr << app.help();
    return kExitConfig;
  }

  try {
    std::ifstream is(config_path);
    if (!is) throw rbsde::ConfigError("cannot open config file: " + config_path);
    json j = json::parse(is, nullptr, true, false);
    Experiment e = parse_config(j);
    if (jobs > 0) e.jobs = jobs;
    const char* env_out = std::getenv("RBSDE_LAB_OUT");
    fs::path dir = out_dir != "." ? fs::path(out_dir)
                                  : (env_out != nullptr ? fs::path(env_out) : fs::path("."));
    return run_experiment(e, dir, validate_only, e.jobs);
  } catch (const json::exception& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const rbsde::ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const rbsde::TaskFailure& ex) {
    std::cerr << "task failure: " << ex.what() << "\n";
    return kExitTask;
  } catch (const rbsde::Error& ex) {
    std::cerr << "task failure: " << ex.what() << "\n";
    return kExitTask;
  }
}

namespace {

int run_experiment(const Experiment& e, const fs::path& out_dir, bool validate_only, int jobs) {
  using namespace rbsde;
  std::mt19937_64 rng(e.seed);

  FiltrationTree tree = e.tree_spec.is_null()
                            ? FiltrationTree::symmetric(e.grid.steps, e.grid.dt)
                            : tree_from_json(e.tree_spec);
  if (tree.steps() != e.grid.steps)
    throw ConfigError("explicit tree depth disagrees with the grid");
  RandomTimeModel model = model_from_json(e.model_spec, tree);
  if (validate_only) {
    // Data construction exercises the remaining validation paths.
    std::mt19937_64 probe(e.seed);
    build_data(e.data_spec, tree, probe);
    std::cout << "config ok\n";
    return kExitOk;
  }
  AzemaBundle bundle = build_azema(model);
  GTree gt(model, bundle);
  RBSDEData data = build_data(e.data_spec, tree, rng);

  fs::create_directories(out_dir);
  auto out_path = [&](const std::string& suffix) {
    return (out_dir / (e.out_prefix + suffix)).string();
  };

  Failures fails;
  json summary;
  summary["task"] = e.task;
  summary["seed"] = e.seed;
  summary["grid"] = {{"steps", e.grid.steps}, {"dt", e.grid.dt}};
  double tol = identity_tol(tree.steps());

  if (e.task == "azema") {
    std::ostringstream csv;
    azema_to_csv(tree, bundle, csv);
    write_file(out_path("_azema.csv"), csv.str());
    MartingaleReport m_rep = is_martingale(tree, bundle.m, tol);
    GStateVec ng = build_ng(gt, bundle);
    MartingaleReport ng_rep = is_g_martingale(gt, ng, tol);
    summary["m_martingale_dev"] = m_rep.max_deviation;
    summary["ng_martingale_dev"] = ng_rep.max_deviation;
    if (!m_rep.ok) fails.add("m is not a martingale");
    if (!ng_rep.ok) fails.add("the default martingale check failed");
  } else if (e.task == "snell-transfer") {
    GProcess xg;
    xg.xF = random_optional(tree, rng, -1.0, 1.0);
    xg.k = DeathValues::zero(gt);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : xg.k.v) v = u(rng);
    TransferReport rp = transfer_snell_p(xg, bundle, gt);
    TransferReport rq = transfer_snell_q(xg, bundle, gt);
    GStateVec payoff = compose_g2f(gt, xg);
    SnellResult envelope = snell_g(gt, payoff, GMeasure::qtilde());
    std::ostringstream csv;
    snell_to_csv(gt, payoff, envelope, csv);
    write_file(out_path("_snell.csv"), csv.str());
    summary["root_value"] = envelope.value[0];
    summary["residual_p"] = rp.max_gap;
    summary["residual_q"] = rq.max_gap;
    if (rp.max_gap > 1e-10) fails.add("physical-measure transfer residual exceeds 1e-10");
    if (rq.max_gap > 1e-10) fails.add("deflated-measure transfer residual exceeds 1e-10");
  } else if (e.task == "rbsde-solve" || e.task == "picard") {
    PicardTrace trace;
    GSolution sol;
    if (data.linear && e.task == "rbsde-solve") {
      sol = solve_linear_g(data, gt, bundle);
      trace.iterations = 1;
    } else {
      double ptol = e.task_params.contains("tol") ? e.task_params["tol"].get<double>() : 1e-10;
      int max_iter =
          e.task_params.contains("max_iter") ? e.task_params["max_iter"].get<int>() : 200;
      PicardResultG pr = solve_general_g(data, gt, bundle, ptol, max_iter);
      sol = std::move(pr.sol);
      trace = std::move(pr.trace);
      json deltas = json::array();
      for (double d : trace.deltas) deltas.push_back(d);
      summary["deltas"] = deltas;
    }
    std::ostringstream csv;
    gsolution_to_csv(gt, sol, csv);
    write_file(out_path("_solution.csv"), csv.str());
    SkorokhodReport sk = skorokhod_check_g(sol, data.S, gt, data.horizon_or(tree.steps()));
    summary["root_Y"] = sol.Y[0];
    summary["skorokhod_sum"] = sk.flat_sum;
    summary["iterations"] = trace.iterations;
    summary["dynamics_residual"] = trace.final_residual;
    MartingaleReport mrep = is_g_martingale(gt, sol.M, 1e-10, GMeasure::qtilde());
    summary["orthogonal_martingale_dev"] = mrep.max_deviation;
    if (!sk.pass) fails.add("Skorokhod audit failed");
    if (!mrep.ok) fails.add("orthogonal part is not a martingale under the deflated measure");
  } else if (e.task == "transform-check") {
    GSolution direct = solve_linear_g(data, gt, bundle);
    FData fd = make_f_data(data, bundle, tree);
    FSolution fsol = solve_linear_f(fd, bundle, tree);
    GSolution lifted = transform_f2g(fsol, data.h, bundle, gt, data.horizon_or(tree.steps()));
    double gap = 0.0;
    for (int sid = 0; sid < gt.num_states(); ++sid)
      gap = std::max({gap, std::abs(direct.Y[sid] - lifted.Y[sid]),
                      std::abs(direct.K[sid] - lifted.K[sid]),
                      std::abs(direct.M[sid] - lifted.M[sid])});
    for (int id = 0; id < tree.num_nodes(); ++id)
      if (tree.node_step(id) < tree.steps())
        gap = std::max(gap, std::abs(direct.Z[id] - lifted.Z[id]));
    summary["max_component_gap"] = gap;
    if (gap > 1e-10) fails.add("transform disagrees with the direct solve beyond 1e-10");
  } else if (e.task == "estimate-audit") {
    int count = e.task_params.contains("count") ? e.task_params["count"].get<int>() : 100;
    double p = e.task_params.contains("p") ? e.task_params["p"].get<double>() : 2.0;
    double a = e.task_params.contains("a") ? e.task_params["a"].get<double>() : 1.0;
    std::string theorem = e.task_params.contains("theorem")
                              ? e.task_params["theorem"].get<std::string>()
                              : "weighted_k";
    EstimateReport report;
    // Deterministic per-instance seeds; instances fan out over the pool.
    std::vector<EstimateRow> rows(count);
    std::atomic<int> next{0};
    int workers = std::max(1, jobs);
    auto work = [&]() {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        std::mt19937_64 irng(e.seed + 1000003ull * (i + 1));
        if (theorem == "weighted_k") {
          StaircaseK st = random_staircase(gt, irng);
          rows[i] = audit_weighted_k(st, gt, bundle, a, tree.steps(), i);
        } else if (theorem == "weighted_default_var") {
          GStateVec H = random_state_vec(gt, irng, 0.0, 2.0);
          GStateVec ng = build_ng(gt, bundle);
          rows[i] = audit_weighted_default_var(H, ng, gt, bundle, p, tree.steps(), i);
        } else if (theorem == "apriori_qtilde") {
          RBSDEData inst = random_linear_data(tree, irng);
          GSolution sol = solve_linear_g(inst, gt, bundle);
          rows[i] = audit_apriori_qtilde(inst, sol, gt, p, i);
        } else if (theorem == "apriori_p") {
          RBSDEData inst = random_linear_data(tree, irng);
          GSolution sol = solve_linear_g(inst, gt, bundle);
          rows[i] = audit_apriori_p(inst, sol, gt, bundle, p, i);
        } else if (theorem == "stability_qtilde") {
          RBSDEData d1 = random_linear_data(tree, irng);
          RBSDEData d2 = random_linear_data(tree, irng);
          GSolution s1 = solve_linear_g(d1, gt, bundle);
          GSolution s2 = solve_linear_g(d2, gt, bundle);
          rows[i] = audit_stability_qtilde(d1, s1, d2, s2, gt, p, i);
        } else {
          throw ConfigError("unknown estimate theorem '" + theorem + "'");
        }
      }
    };
    if (workers == 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (int wkr = 0; wkr < workers; ++wkr) pool.emplace_back(work);
      for (auto& th : pool) th.join();
    }
    for (auto& row : rows) report.add(row);
    std::ostringstream csv;
    estimate_report_to_csv(report, csv);
    write_file(out_path("_estimates.csv"), csv.str());
    summary["aggregate"] = estimate_report_to_json(report);
    bool explicit_constant =
        theorem == "weighted_k" || theorem == "weighted_default_var";
    if (explicit_constant && report.violations > 0)
      fails.add("explicit-constant inequality violated on " +
                std::to_string(report.violations) + " instances");
  } else if (e.task == "horizon-study") {
    std::vector<int> levels = {tree.steps() / 4, tree.steps() / 2, 3 * tree.steps() / 4,
                               tree.steps()};
    if (e.task_params.contains("levels")) {
      levels.clear();
      for (const auto& v : e.task_params["levels"]) levels.push_back(v.get<int>());
    }
    double p = e.task_params.contains("p") ? e.task_params["p"].get<double>() : 2.0;
    TruncationReport rep = horizon_truncation_study(data, gt, bundle, levels, p);
    json dist = json::array();
    for (double d : rep.dist_total) dist.push_back(d);
    summary["levels"] = levels;
    summary["distances"] = dist;
    summary["admissibility"] = rep.admissibility;
    summary["decreasing"] = rep.decreasing;
    if (!rep.decreasing) fails.add("truncation distances are not decreasing");
  } else if (e.task == "oracle-check") {
    int depth = e.task_params.contains("depth") ? e.task_params["depth"].get<int>() : 3;
    if (depth > kMaxBruteDepthG) throw ConfigError("oracle-check depth capped at 3");
    FiltrationTree small = FiltrationTree::symmetric(depth, e.grid.dt);
    RandomTimeModel small_model = model_from_json(e.model_spec, small);
    AzemaBundle small_bundle = build_azema(small_model);
    GTree small_gt(small_model, small_bundle);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      GStateVec payoff = random_state_vec(small_gt, rng, -1.0, 1.0);
      for (const GMeasure& m : {GMeasure::physical(), GMeasure::qtilde()}) {
        SnellResult s = snell_g(small_gt, payoff, m);
        double bf = brute_force_snell_g(small_gt, payoff, m);
        worst = std::max(worst, std::abs(s.value[0] - bf));
      }
    }
    summary["max_oracle_gap"] = worst;
    if (worst > 1e-12) fails.add("backward recursion disagrees with rule enumeration");
  }

  summary["failures"] = failures_json(fails);
  summary["status"] = fails.any() ? "failed" : "ok";
  write_file(out_path("_summary.json"), summary.dump(2) + "\n");
  if (fails.any()) {
    std::cerr << "task failure: " << fails.items.front() << "\n";
    return kExitTask;
  }
  std::cout << out_path("_summary.json") << "\n";
  return kExitOk;
}

}  // namespace
