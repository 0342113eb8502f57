#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rbsde/errors.hpp"
#include "rbsde/lattice.hpp"
#include "rbsde/random_time.hpp"

namespace rbsde {

// Progressively enlarged state space: one alive state per lattice node plus
// absorbed dead states recording (death step, lattice node at death).
//
// State ids: alive states reuse the lattice node id; dead state (s, k) for
// s in [1, N], k in [0, 2^s) gets id nF + 2^s - 2 + k.  From an alive state
// at step t the four branches are (down/up) x (survive/die at t+1); dead
// states are absorbing, so a process stopped at tau is one value per state.
class GTree {
 public:
  // Branch order within a transition quadruple.
  enum Branch { kDownSurvive = 0, kUpSurvive = 1, kDownDie = 2, kUpDie = 3 };

  GTree(const RandomTimeModel& model, const AzemaBundle& bundle)
      : tree_(&model.tree()), model_(&model), bundle_(&bundle) {
    const FiltrationTree& tree = *tree_;
    int n = tree.num_nodes();
    p_w_.assign(n, {0, 0, 0, 0});
    q_w_.assign(n, {0, 0, 0, 0});
    for (int t = 0; t < tree.steps(); ++t)
      for (int k = 0; k < tree.level_size(t); ++k) {
        int id = tree.node_id(t, k);
        for (int b = 0; b < 2; ++b) {
          int c = tree.child(id, b);
          double pb = tree.branch_prob(id, b);
          double g = bundle.G[c], gt = bundle.Gtilde[c];
          p_w_[id][b] = pb * g / bundle.G[id];
          p_w_[id][2 + b] = pb * (gt - g) / bundle.G[id];
          q_w_[id][b] = pb * g / gt;
          q_w_[id][2 + b] = pb * (gt - g) / gt;
        }
        double tot = p_w_[id][0] + p_w_[id][1] + p_w_[id][2] + p_w_[id][3];
        if (std::abs(tot - 1.0) > 1e-12)
          throw InvariantViolation("GTree: alive transition weights must sum to 1", id,
                                   tot - 1.0);
      }
    // Forward survival accumulation must reproduce G nodewise.
    double tol = identity_tol(tree.steps());
    for (int t = 0; t <= tree.steps(); ++t)
      for (int k = 0; k < tree.level_size(t); ++k) {
        int id = tree.node_id(t, k);
        double expect = tree.node_prob(id) * bundle.G[id];
        if (std::abs(alive_prob(id) - expect) > tol)
          throw InvariantViolation("GTree: forward survival mass disagrees with G", id,
                                   alive_prob(id) - expect);
      }
  }

  const FiltrationTree& tree() const { return *tree_; }
  const RandomTimeModel& model() const { return *model_; }
  const AzemaBundle& bundle() const { return *bundle_; }

  int num_alive() const { return tree_->num_nodes(); }
  int num_dead() const { return (2 << tree_->steps()) - 2; }
  int num_states() const { return num_alive() + num_dead(); }

  bool is_dead(int sid) const { return sid >= num_alive(); }
  int dead_id(int step, int idx) const { return num_alive() + (1 << step) - 2 + idx; }
  // (death step, lattice idx at death) of a dead state.
  std::pair<int, int> dead_coords(int sid) const {
    uint32_t off = static_cast<uint32_t>(sid - num_alive()) + 2u;
    int s = std::bit_width(off) - 1;
    return {s, static_cast<int>(off) - (1 << s)};
  }
  // Lattice node underlying a state (the node at death for dead states).
  int fnode(int sid) const {
    if (!is_dead(sid)) return sid;
    auto [s, k] = dead_coords(sid);
    return tree_->node_id(s, k);
  }
  int state_step(int sid) const {
    return is_dead(sid) ? dead_coords(sid).first : tree_->node_step(sid);
  }

  // Child state of an alive state along one of the four branches.
  int child_state(int alive_id, int branch) const {
    int c = tree_->child(alive_id, branch & 1);
    if (branch < 2) return c;
    return dead_id(tree_->node_step(c), tree_->node_idx(c));
  }

  const std::array<double, 4>& p_weights(int alive_id) const { return p_w_[alive_id]; }
  const std::array<double, 4>& q_weights(int alive_id) const { return q_w_[alive_id]; }

  // Forward probability of reaching a state under P.
  double alive_prob(int alive_id) const {
    return tree_->node_prob(alive_id) * bundle_->G[alive_id];
  }
  double dead_prob(int dead_sid) const {
    auto [s, k] = dead_coords(dead_sid);
    int c = tree_->node_id(s, k);
    return tree_->node_prob(c) * (bundle_->Gtilde[c] - bundle_->G[c]);
  }
  double state_prob(int sid) const { return is_dead(sid) ? dead_prob(sid) : alive_prob(sid); }

 private:
  const FiltrationTree* tree_;
  const RandomTimeModel* model_;
  const AzemaBundle* bundle_;
  std::vector<std::array<double, 4>> p_w_, q_w_;
};

// A process stopped at tau: one value per state.
using GStateVec = std::vector<double>;

inline GStateVec g_state_vec(const GTree& gt, double fill = 0.0) {
  return GStateVec(gt.num_states(), fill);
}

// One-step measure on the enlarged tree (physical or the deflated measure).
struct GMeasure {
  enum class Kind { P, Qtilde };
  Kind kind = Kind::P;

  const std::array<double, 4>& weights(const GTree& gt, int alive_id) const {
    return kind == Kind::P ? gt.p_weights(alive_id) : gt.q_weights(alive_id);
  }
  static GMeasure physical() { return {Kind::P}; }
  static GMeasure qtilde() { return {Kind::Qtilde}; }
};

// A lattice process stopped at tau, as a state process: alive states carry
// the running value, dead states freeze the value at the death node.
inline GStateVec stop_at_tau(const GTree& gt, const TreeProcess& x) {
  GStateVec out = g_state_vec(gt);
  for (int sid = 0; sid < gt.num_states(); ++sid) out[sid] = x[gt.fnode(sid)];
  return out;
}

// Martingale check for a stopped process on the enlarged tree; dead states
// are absorbing so only alive states need the tower test.
inline MartingaleReport is_g_martingale(const GTree& gt, const GStateVec& x, double tol,
                                        const GMeasure& measure = GMeasure::physical()) {
  if (static_cast<int>(x.size()) != gt.num_states())
    throw ShapeMismatch("is_g_martingale: state vector size mismatch");
  MartingaleReport rep;
  const FiltrationTree& tree = gt.tree();
  for (int t = 0; t < tree.steps(); ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      const auto& w = measure.weights(gt, id);
      double e = 0.0;
      for (int b = 0; b < 4; ++b) e += w[b] * x[gt.child_state(id, b)];
      double dev = std::abs(e - x[id]);
      if (dev > rep.max_deviation) {
        rep.max_deviation = dev;
        rep.worst_node = id;
      }
    }
  rep.ok = rep.max_deviation <= tol;
  return rep;
}

inline GTree build_gtree(const RandomTimeModel& model, const AzemaBundle& bundle) {
  return GTree(model, bundle);
}

// Density weights dQtilde/dP = Ztilde_{T ^ tau} attached to the terminal
// states at the given horizon: alive states at the horizon plus dead states
// with death step <= horizon.  Returned pairs are (state id, Q-weight).
inline std::vector<std::pair<int, double>> qtilde_weights(const GTree& gt,
                                                          const AzemaBundle& bundle,
                                                          int horizon_step) {
  const FiltrationTree& tree = gt.tree();
  if (horizon_step < 0 || horizon_step > tree.steps())
    throw StepOutOfRange("qtilde_weights: horizon outside [0, N]");
  std::vector<std::pair<int, double>> out;
  for (int k = 0; k < tree.level_size(horizon_step); ++k) {
    int id = tree.node_id(horizon_step, k);
    out.emplace_back(id, gt.alive_prob(id) * bundle.Ztilde[id]);
  }
  for (int s = 1; s <= horizon_step; ++s)
    for (int k = 0; k < tree.level_size(s); ++k) {
      int sid = gt.dead_id(s, k);
      out.emplace_back(sid, gt.dead_prob(sid) * bundle.Ztilde[tree.node_id(s, k)]);
    }
  return out;
}

// ----------------------------------------------------------------------------
// Scenario enumeration: every atom of the model is a (leaf path, death time)
// pair; SURVIVES is encoded as death = N+1.  Visitors receive the scenario
// weight under P and the state trajectory implicitly via the GTree.
// ----------------------------------------------------------------------------

struct Scenario {
  int leaf = 0;    // leaf index at level N
  int death = 0;   // death step in [1, N], or N+1 for SURVIVES
  double p = 0.0;  // P-weight of the scenario
  // State occupied at step t (alive node id for t < death, else the dead id).
  int state_at(const GTree& gt, int t) const {
    const FiltrationTree& tree = gt.tree();
    if (t < death) return tree.node_id(t, leaf >> (tree.steps() - t));
    int s = death;
    return gt.dead_id(s, leaf >> (tree.steps() - s));
  }
  int stop_step(int horizon) const { return std::min(death, horizon); }
};

inline void for_each_scenario(const GTree& gt, const std::function<void(const Scenario&)>& fn) {
  const FiltrationTree& tree = gt.tree();
  const RandomTimeModel& model = gt.model();
  int N = tree.steps();
  for (int l = 0; l < tree.num_leaves(); ++l) {
    double pl = tree.node_prob(tree.node_id(N, l));
    if (pl <= kTinyProb) continue;
    for (int s = 1; s <= N; ++s) {
      double m = model.death_mass(l, s);
      if (m > 0.0) fn({l, s, pl * m});
    }
    double sv = model.survive_mass(l);
    if (sv > 0.0) fn({l, N + 1, pl * sv});
  }
}

// Qtilde-weight of a scenario at a given horizon: P-weight times
// Ztilde_{horizon ^ death}.
inline double qtilde_scenario_weight(const GTree& gt, const Scenario& sc, int horizon) {
  const FiltrationTree& tree = gt.tree();
  int s = std::min(sc.death, horizon);
  int node = tree.node_id(s, sc.leaf >> (tree.steps() - s));
  return sc.p * gt.bundle().Ztilde[node];
}

// ----------------------------------------------------------------------------
// The fundamental default martingale N^G and the martingale transform.
// ----------------------------------------------------------------------------

// N^G = D - Gtilde^{-1} 1_{[0,tau[} . DoF as a stopped state process:
// each alive step contributes -dDoF/Gtilde at the child node, and the death
// step contributes 1 - dDoF/Gtilde.
inline GStateVec build_ng(const GTree& gt, const AzemaBundle& bundle) {
  const FiltrationTree& tree = gt.tree();
  GStateVec ng = g_state_vec(gt);
  for (int t = 0; t < tree.steps(); ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        double hazard = (bundle.Gtilde[c] - bundle.G[c]) / bundle.Gtilde[c];
        ng[c] = ng[id] - hazard;
        ng[gt.child_state(id, 2 + b)] = ng[id] + 1.0 - hazard;
      }
    }
  return ng;
}

// T(M) = M^tau - Gtilde^{-1} 1_{[0,tau[} . [M, m]: the transform carrying
// lattice martingales into martingales for the enlarged filtration.  The
// input must be a martingale (checked to the tree's identity tolerance).
inline GStateVec transform_T(const TreeProcess& mart, const GTree& gt,
                             const AzemaBundle& bundle) {
  const FiltrationTree& tree = gt.tree();
  MartingaleReport rep = is_martingale(tree, mart, identity_tol(tree.steps()));
  if (!rep.ok)
    throw InputNotMartingale("transform_T: input is not a martingale (max dev " +
                                 std::to_string(rep.max_deviation) + ")",
                             rep.max_deviation);
  GStateVec out = g_state_vec(gt);
  out[0] = mart[0];
  for (int t = 0; t < tree.steps(); ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        double dm = mart[c] - mart[id];
        double dmm = (bundle.m[c] - bundle.m[id]);
        double incr = dm - dm * dmm / bundle.Gtilde[c];
        out[c] = out[id] + incr;
        out[gt.child_state(id, 2 + b)] = out[id] + incr;
      }
    }
  return out;
}

// ----------------------------------------------------------------------------
// Canonical decomposition X^G = X^F 1_{[0,tau[} + k . D  and its inverse.
// ----------------------------------------------------------------------------

// Values attached to dead states (the death payoff), indexed like the dead
// portion of the state space.
struct DeathValues {
  std::vector<double> v;  // size num_dead

  static DeathValues zero(const GTree& gt) { return {std::vector<double>(gt.num_dead(), 0.0)}; }
  double at(const GTree& gt, int dead_sid) const { return v[dead_sid - gt.num_alive()]; }
  double& at(const GTree& gt, int dead_sid) { return v[dead_sid - gt.num_alive()]; }
};

// The canonical pair of a stopped G-process.
struct GProcess {
  TreeProcess xF;  // optional lattice process
  DeathValues k;   // death payoff
};

// A time-indexed process on the enlarged tree: one value per (step, state
// visible at that step).  Only needed where stopped-ness itself is under
// test; stopped processes use GStateVec.
class GPath {
 public:
  explicit GPath(const GTree& gt) : gt_(&gt) {
    int N = gt.tree().steps();
    offsets_.resize(N + 2, 0);
    for (int t = 0; t <= N; ++t) {
      offsets_[t + 1] = offsets_[t] + gt.tree().level_size(t) + ((1 << (t + 1)) - 2);
    }
    v_.assign(offsets_[N + 1], 0.0);
  }

  // Value of the process at time t in the given state (state must be
  // visible at t: alive at step t, or dead with death step <= t).
  double& at(int t, int sid) { return v_[index(t, sid)]; }
  double at(int t, int sid) const { return v_[index(t, sid)]; }

  const GTree& gtree() const { return *gt_; }

  // Fill from a stopped state process.
  static GPath from_stopped(const GTree& gt, const GStateVec& x) {
    GPath p(gt);
    const FiltrationTree& tree = gt.tree();
    for (int t = 0; t <= tree.steps(); ++t) {
      for (int k = 0; k < tree.level_size(t); ++k) p.at(t, tree.node_id(t, k)) = x[tree.node_id(t, k)];
      for (int s = 1; s <= t; ++s)
        for (int k = 0; k < tree.level_size(s); ++k) p.at(t, gt.dead_id(s, k)) = x[gt.dead_id(s, k)];
    }
    return p;
  }

 private:
  int index(int t, int sid) const {
    const GTree& gt = *gt_;
    const FiltrationTree& tree = gt.tree();
    if (gt.is_dead(sid)) {
      auto [s, k] = gt.dead_coords(sid);
      if (s > t) throw StepOutOfRange("GPath: dead state not visible at this step");
      // dead states at step t: all (s <= t); laid out after the alive block
      int base = offsets_[t] + tree.level_size(t);
      return base + ((1 << s) - 2) + k;
    }
    if (tree.node_step(sid) != t) throw StepOutOfRange("GPath: alive state must match step");
    return offsets_[t] + tree.node_idx(sid);
  }

  const GTree* gt_;
  std::vector<int> offsets_;
  std::vector<double> v_;
};

// Splits a stopped G-process into its unique pair (X^F, k): the lattice
// part on alive states and the death payoff on dead states.  Throws
// NotStopped if the input moves strictly after absorption.
inline GProcess decompose_g2f(const GPath& x) {
  const GTree& gt = x.gtree();
  const FiltrationTree& tree = gt.tree();
  int N = tree.steps();
  GProcess out;
  out.xF = TreeProcess::optional(tree);
  out.k = DeathValues::zero(gt);
  for (int t = 0; t <= N; ++t)
    for (int k = 0; k < tree.level_size(t); ++k)
      out.xF[tree.node_id(t, k)] = x.at(t, tree.node_id(t, k));
  for (int s = 1; s <= N; ++s)
    for (int k = 0; k < tree.level_size(s); ++k) {
      int sid = gt.dead_id(s, k);
      double v0 = x.at(s, sid);
      for (int t = s + 1; t <= N; ++t)
        if (x.at(t, sid) != v0)
          throw NotStopped("decompose_g2f: value moves after absorption", sid);
      out.k.at(gt, sid) = v0;
    }
  return out;
}

// Convenience overload for processes already stored as stopped state vectors.
inline GProcess decompose_g2f(const GTree& gt, const GStateVec& x) {
  GProcess out;
  out.xF = TreeProcess::optional(gt.tree());
  out.k = DeathValues::zero(gt);
  for (int id = 0; id < gt.num_alive(); ++id) out.xF[id] = x[id];
  for (int sid = gt.num_alive(); sid < gt.num_states(); ++sid) out.k.at(gt, sid) = x[sid];
  return out;
}

inline GStateVec compose_g2f(const GTree& gt, const GProcess& p) {
  GStateVec x = g_state_vec(gt);
  for (int id = 0; id < gt.num_alive(); ++id) x[id] = p.xF[id];
  for (int sid = gt.num_alive(); sid < gt.num_states(); ++sid) x[sid] = p.k.at(gt, sid);
  return x;
}

// Optional projection of the death payoff with respect to P (x) D:
// k^(op)_t = E[k_t 1_{tau=t} | F_t] / E[1_{tau=t} | F_t] where the death
// mass is positive, and 0 by convention where it vanishes.
inline TreeProcess optional_projection_kop(const DeathValues& k, const GTree& gt,
                                           const AzemaBundle& bundle) {
  const FiltrationTree& tree = gt.tree();
  TreeProcess kop = TreeProcess::optional(tree);
  for (int s = 1; s <= tree.steps(); ++s)
    for (int idx = 0; idx < tree.level_size(s); ++idx) {
      int node = tree.node_id(s, idx);
      double mass = bundle.Gtilde[node] - bundle.G[node];
      kop[node] = mass > 0.0 ? k.at(gt, gt.dead_id(s, idx)) : 0.0;
    }
  return kop;
}

// The compensated-default integral (k - k^(op)) . D as a stopped state
// process; identically zero wherever the death mass is positive, so a
// martingale by construction.  Kept explicit because the transfer formulas
// carry the term.
inline GStateVec default_defect(const GTree& gt, const DeathValues& k, const TreeProcess& kop) {
  GStateVec out = g_state_vec(gt);
  for (int sid = gt.num_alive(); sid < gt.num_states(); ++sid)
    out[sid] = k.at(gt, sid) - kop[gt.fnode(sid)];
  return out;
}

// H . N^G for a lattice-optional integrand read at the jump node.  Exact
// martingale under both P and Qtilde.
inline GStateVec integral_against_ng(const GTree& gt, const AzemaBundle& bundle,
                                     const std::function<double(int /*fnode*/)>& integrand) {
  const FiltrationTree& tree = gt.tree();
  GStateVec out = g_state_vec(gt);
  for (int t = 0; t < tree.steps(); ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        double hazard = (bundle.Gtilde[c] - bundle.G[c]) / bundle.Gtilde[c];
        double h = integrand(c);
        out[c] = out[id] - h * hazard;
        out[gt.child_state(id, 2 + b)] = out[id] + h * (1.0 - hazard);
      }
    }
  return out;
}

// ----------------------------------------------------------------------------
// Conditional-expectation conversion between the two filtrations.
// ----------------------------------------------------------------------------

struct ConvertReport {
  std::vector<double> value;  // per alive node at step t
  double max_gap = 0.0;
};

// E[X | G_t] 1_{t<tau} for the F_u-measurable variable X = x_u (u >= t),
// evaluated two ways: by direct enumeration over the joint (path, death)
// space, and through E[X 1_{t<tau} | F_t] / G_t on the lattice.  The two
// routes must agree to the tree's identity tolerance.
inline ConvertReport convert_conditional(const TreeProcess& x, const GTree& gt,
                                         const AzemaBundle& bundle, int t, int u = -1) {
  const FiltrationTree& tree = gt.tree();
  int N = tree.steps();
  if (u < 0) u = t;
  if (t < 0 || t > u || u > N) throw StepOutOfRange("convert_conditional: need 0 <= t <= u <= N");

  // Route 1: brute-force conditional law given (node at t, tau > t).
  std::vector<double> direct(tree.level_size(t), 0.0);
  std::vector<double> mass(tree.level_size(t), 0.0);
  const RandomTimeModel& model = gt.model();
  for (int l = 0; l < tree.num_leaves(); ++l) {
    int kt = l >> (N - t);
    double w = tree.node_prob(tree.node_id(N, l)) * model.tail_mass(l, t);
    direct[kt] += w * x[tree.node_id(u, l >> (N - u))];
    mass[kt] += w;
  }
  for (int k = 0; k < tree.level_size(t); ++k) direct[k] /= mass[k];

  // Route 2: the conversion formula on the lattice.
  TreeProcess xg = TreeProcess::optional(tree);
  for (int l = 0; l < tree.num_leaves(); ++l) {
    double tail = model.tail_mass(l, t);
    xg.at(tree, N, l) = x[tree.node_id(u, l >> (N - u))] * tail;
  }
  TreeProcess num = cond_expect(tree, xg, t, N);

  ConvertReport rep;
  rep.value.resize(tree.level_size(t));
  for (int k = 0; k < tree.level_size(t); ++k) {
    double formula = num.at(tree, t, k) / bundle.G.at(tree, t, k);
    rep.max_gap = std::max(rep.max_gap, std::abs(formula - direct[k]));
    rep.value[k] = formula;
  }
  if (rep.max_gap > identity_tol(N))
    throw InvariantViolation("convert_conditional: the two routes disagree", t, rep.max_gap);
  return rep;
}

// ----------------------------------------------------------------------------
// Stopping rules and the reduction of G-stopping times.
// ----------------------------------------------------------------------------

// First-contact stopping rule on the lattice: stop at the first flagged
// node along the path, at the horizon otherwise.
struct FStopRule {
  std::vector<char> stop;  // per node

  static FStopRule never(const FiltrationTree& tree) {
    return {std::vector<char>(tree.num_nodes(), 0)};
  }
  static FStopRule at_step(const FiltrationTree& tree, int step) {
    FStopRule r = never(tree);
    for (int k = 0; k < tree.level_size(step); ++k) r.stop[tree.node_id(step, k)] = 1;
    return r;
  }
  int stop_step(const FiltrationTree& tree, int leaf) const {
    int N = tree.steps();
    for (int t = 0; t <= N; ++t)
      if (stop[tree.node_id(t, leaf >> (N - t))]) return t;
    return N;
  }
};

// sigma^F = min(max(sigma, sigma1), sigma2): reduces the G-stopping rule
// sigma ^ tau to a lattice rule within the band [sigma1, sigma2].
// Preconditions (sigma1 <= sigma2 pathwise and sigma1 ^ tau <= sigma ^ tau
// <= sigma2 ^ tau scenariowise) are verified; violations report a witness.
inline FStopRule reduce_stopping_time(const GTree& gt, const FStopRule& sigma,
                                      const FStopRule& sigma1, const FStopRule& sigma2) {
  const FiltrationTree& tree = gt.tree();
  int N = tree.steps();
  std::vector<int> t_sig(tree.num_leaves()), t_1(tree.num_leaves()), t_2(tree.num_leaves());
  for (int l = 0; l < tree.num_leaves(); ++l) {
    t_sig[l] = sigma.stop_step(tree, l);
    t_1[l] = sigma1.stop_step(tree, l);
    t_2[l] = sigma2.stop_step(tree, l);
    if (t_1[l] > t_2[l])
      throw ConfigError("reduce_stopping_time: sigma1 > sigma2 on leaf " + std::to_string(l));
  }
  bool witness_found = false;
  int witness_leaf = -1, witness_death = -1;
  for_each_scenario(gt, [&](const Scenario& sc) {
    int tau = sc.death;
    int sg = std::min(t_sig[sc.leaf], tau);
    if (std::min(t_1[sc.leaf], tau) > sg || sg > std::min(t_2[sc.leaf], tau)) {
      if (!witness_found) {
        witness_found = true;
        witness_leaf = sc.leaf;
        witness_death = sc.death;
      }
    }
  });
  if (witness_found)
    throw ConfigError("reduce_stopping_time: sigma ^ tau leaves the band on leaf " +
                      std::to_string(witness_leaf) + ", death " + std::to_string(witness_death));

  FStopRule out = FStopRule::never(tree);
  for (int l = 0; l < tree.num_leaves(); ++l) {
    int tf = std::min(std::max(t_sig[l], t_1[l]), t_2[l]);
    out.stop[tree.node_id(tf, l >> (N - tf))] = 1;
  }
  // Adaptedness is automatic for the median of first-contact rules; the
  // flags set above are consistent across leaves sharing a prefix.
  for (int l = 0; l < tree.num_leaves(); ++l) {
    int tf = std::min(std::max(t_sig[l], t_1[l]), t_2[l]);
    if (out.stop_step(tree, l) != tf)
      throw InvariantViolation("reduce_stopping_time: produced rule is not adapted", l, 0.0);
  }
  return out;
}

}  // namespace rbsde
