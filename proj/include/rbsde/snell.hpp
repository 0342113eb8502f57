#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rbsde/errors.hpp"
#include "rbsde/gtree.hpp"
#include "rbsde/lattice.hpp"
#include "rbsde/random_time.hpp"

namespace rbsde {

inline constexpr double kNoBarrier = -std::numeric_limits<double>::infinity();

// max with the no-barrier sentinel: max(-inf, x) = x.
inline double barrier_max(double barrier, double x) {
  return barrier == kNoBarrier ? x : std::max(barrier, x);
}

// Backward-recursion optimal stopping value with its first-contact rule and
// Doob decomposition: value = value_0 + mart - comp with comp nondecreasing
// and predictable.  Values are per lattice node (F variant) or per state
// (G variant).
struct SnellResult {
  std::vector<double> value;
  std::vector<char> stop;        // first-contact stop flags
  std::vector<double> mart;      // martingale part, starts at 0
  std::vector<double> comp;      // nondecreasing compensator, starts at 0
};

// Snell envelope on the lattice under the given one-step measure:
// value_N = payoff_N, value_t = max(payoff_t, E[value_{t+1} | F_t]).
// Ties between stopping and continuing resolve to stopping.
inline SnellResult snell_f(const FiltrationTree& tree, const TreeProcess& payoff,
                           const FMeasure& measure, int horizon = -1) {
  if (payoff.kind != TreeProcess::Kind::Optional)
    throw ShapeMismatch("snell_f: payoff must be optional");
  int N = horizon < 0 ? tree.steps() : horizon;
  if (N > tree.steps()) throw StepOutOfRange("snell_f: horizon beyond tree depth");
  int n = tree.num_nodes();
  SnellResult r;
  r.value.assign(n, 0.0);
  r.stop.assign(n, 0);
  r.mart.assign(n, 0.0);
  r.comp.assign(n, 0.0);
  for (int k = 0; k < tree.level_size(N); ++k) {
    int id = tree.node_id(N, k);
    r.value[id] = payoff[id];
    r.stop[id] = 1;
  }
  for (int t = N - 1; t >= 0; --t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      double wu = measure.up_weight[id];
      double cont = wu * r.value[tree.child(id, 1)] + (1.0 - wu) * r.value[tree.child(id, 0)];
      r.value[id] = barrier_max(payoff[id], cont);
      r.stop[id] = payoff[id] != kNoBarrier && payoff[id] >= cont;
    }
  // Doob parts forward: dA_{t+1} = value_t - E[value_{t+1}|F_t] >= 0.
  for (int t = 0; t < N; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      double wu = measure.up_weight[id];
      double cont = wu * r.value[tree.child(id, 1)] + (1.0 - wu) * r.value[tree.child(id, 0)];
      double dA = r.value[id] - cont;
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        r.comp[c] = r.comp[id] + dA;
        r.mart[c] = r.mart[id] + r.value[c] - cont;
      }
    }
  return r;
}

// Snell envelope on the enlarged tree for a payoff stopped at tau.  Dead
// states are absorbed: their value equals their payoff.
inline SnellResult snell_g(const GTree& gt, const GStateVec& payoff, const GMeasure& measure,
                           int horizon = -1) {
  const FiltrationTree& tree = gt.tree();
  int N = horizon < 0 ? tree.steps() : horizon;
  if (N > tree.steps()) throw StepOutOfRange("snell_g: horizon beyond tree depth");
  SnellResult r;
  r.value.assign(gt.num_states(), 0.0);
  r.stop.assign(gt.num_states(), 0);
  r.mart.assign(gt.num_states(), 0.0);
  r.comp.assign(gt.num_states(), 0.0);
  for (int sid = gt.num_alive(); sid < gt.num_states(); ++sid) {
    r.value[sid] = payoff[sid];
    r.stop[sid] = 1;
  }
  for (int k = 0; k < tree.level_size(N); ++k) {
    int id = tree.node_id(N, k);
    r.value[id] = payoff[id];
    r.stop[id] = 1;
  }
  for (int t = N - 1; t >= 0; --t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      const auto& w = measure.weights(gt, id);
      double cont = 0.0;
      for (int b = 0; b < 4; ++b) cont += w[b] * r.value[gt.child_state(id, b)];
      r.value[id] = barrier_max(payoff[id], cont);
      r.stop[id] = payoff[id] != kNoBarrier && payoff[id] >= cont;
    }
  for (int t = 0; t < N; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      const auto& w = measure.weights(gt, id);
      double cont = 0.0;
      for (int b = 0; b < 4; ++b) cont += w[b] * r.value[gt.child_state(id, b)];
      double dA = r.value[id] - cont;
      for (int b = 0; b < 4; ++b) {
        int c = gt.child_state(id, b);
        r.comp[c] = r.comp[id] + dA;
        r.mart[c] = r.mart[id] + r.value[c] - cont;
      }
    }
  return r;
}

// ----------------------------------------------------------------------------
// Exhaustive stopping-rule enumeration: the independent oracle.
// ----------------------------------------------------------------------------

inline constexpr int kMaxBruteDepthF = 4;
inline constexpr int kMaxBruteDepthG = 3;

namespace detail {

// All adapted rules in the subtree rooted at (t, k), as per-leaf stop steps
// over the leaves below that node.
inline std::vector<std::vector<int>> enumerate_rules_f(const FiltrationTree& tree, int t, int k) {
  int N = tree.steps();
  int span = 1 << (N - t);
  if (t == N) return {{N}};
  std::vector<std::vector<int>> out;
  out.emplace_back(span, t);  // stop here
  auto down = enumerate_rules_f(tree, t + 1, 2 * k);
  auto up = enumerate_rules_f(tree, t + 1, 2 * k + 1);
  for (const auto& d : down)
    for (const auto& u : up) {
      std::vector<int> rule;
      rule.reserve(span);
      rule.insert(rule.end(), d.begin(), d.end());
      rule.insert(rule.end(), u.begin(), u.end());
      out.push_back(std::move(rule));
    }
  return out;
}

}  // namespace detail

// Max over all adapted stopping rules of E[payoff at stop], by literal
// enumeration.  Lattice variant; depth capped at 4.
inline double brute_force_snell_f(const FiltrationTree& tree, const TreeProcess& payoff,
                                  const FMeasure& measure) {
  int N = tree.steps();
  if (N > kMaxBruteDepthF)
    throw DepthTooLarge("brute_force_snell_f: depth " + std::to_string(N) + " > 4");
  auto rules = detail::enumerate_rules_f(tree, 0, 0);
  // Per-leaf path weights under the measure.
  std::vector<double> w(tree.num_leaves(), 1.0);
  for (int l = 0; l < tree.num_leaves(); ++l)
    for (int t = 0; t < N; ++t) {
      int id = tree.node_id(t, l >> (N - t));
      w[l] *= measure.weight(id, (l >> (N - t - 1)) & 1);
    }
  double best = kNoBarrier;
  for (const auto& rule : rules) {
    double e = 0.0;
    for (int l = 0; l < tree.num_leaves(); ++l) {
      int ts = rule[l];
      e += w[l] * payoff[tree.node_id(ts, l >> (N - ts))];
    }
    best = std::max(best, e);
  }
  return best;
}

namespace detail {

// Rules on the enlarged tree: choices live on alive states only (death
// forces absorption); encoded as per-leaf stop steps for the alive part.
inline std::vector<std::vector<int>> enumerate_rules_g(const GTree& gt, int t, int k) {
  const FiltrationTree& tree = gt.tree();
  int N = tree.steps();
  int span = 1 << (N - t);
  if (t == N) return {{N}};
  std::vector<std::vector<int>> out;
  out.emplace_back(span, t);
  auto down = enumerate_rules_g(gt, t + 1, 2 * k);
  auto up = enumerate_rules_g(gt, t + 1, 2 * k + 1);
  for (const auto& d : down)
    for (const auto& u : up) {
      std::vector<int> rule;
      rule.reserve(span);
      rule.insert(rule.end(), d.begin(), d.end());
      rule.insert(rule.end(), u.begin(), u.end());
      out.push_back(std::move(rule));
    }
  return out;
}

}  // namespace detail

// Enumeration oracle on the enlarged tree; depth capped at 3.  The rule
// stops at min(flagged alive step, tau); scenarios absorbed before the rule
// fires collect the dead-state payoff.
inline double brute_force_snell_g(const GTree& gt, const GStateVec& payoff,
                                  const GMeasure& measure) {
  const FiltrationTree& tree = gt.tree();
  int N = tree.steps();
  if (N > kMaxBruteDepthG)
    throw DepthTooLarge("brute_force_snell_g: depth " + std::to_string(N) + " > 3");
  auto rules = detail::enumerate_rules_g(gt, 0, 0);

  // Exact joint scenario weights: the physical weight of (path, death),
  // deflated by the density at the stopped time under the other measure.
  struct Sc {
    int leaf, death;
    double w;
  };
  std::vector<Sc> scs;
  for_each_scenario(gt, [&](const Scenario& sc) {
    double w = measure.kind == GMeasure::Kind::P ? sc.p : qtilde_scenario_weight(gt, sc, N);
    scs.push_back({sc.leaf, sc.death, w});
  });

  double best = kNoBarrier;
  for (const auto& rule : rules) {
    double e = 0.0;
    for (const auto& sc : scs) {
      int ts = rule[sc.leaf];
      int sid;
      if (sc.death <= ts)
        sid = gt.dead_id(sc.death, sc.leaf >> (N - sc.death));
      else
        sid = tree.node_id(ts, sc.leaf >> (N - ts));
      e += sc.w * payoff[sid];
    }
    best = std::max(best, e);
  }
  return best;
}

// ----------------------------------------------------------------------------
// Snell transfer between the two filtrations.
// ----------------------------------------------------------------------------

struct TransferReport {
  GStateVec direct;       // Snell envelope computed on the enlarged tree
  GStateVec transferred;  // assembled from the lattice Snell envelope
  double max_gap = 0.0;   // over states with positive probability
  int worst_state = -1;
};

namespace detail {

inline void transfer_gap(const GTree& gt, TransferReport& rep, int horizon) {
  rep.max_gap = 0.0;
  rep.worst_state = -1;
  for (int sid = 0; sid < gt.num_states(); ++sid) {
    if (gt.state_prob(sid) <= kTinyProb) continue;
    if (gt.state_step(sid) > horizon) continue;
    double gap = std::abs(rep.direct[sid] - rep.transferred[sid]);
    if (gap > rep.max_gap) {
      rep.max_gap = gap;
      rep.worst_state = sid;
    }
  }
}

}  // namespace detail

// Physical-measure transfer: the Snell envelope of the stopped process
// (X^F, k) on the enlarged tree equals
//   S(X^F G + k^(op) . DoF; F, P) / G      on alive states, plus
//   (k - k^(op)) . D
//   + (V_- / G_-^2) . T(m),   V := k^(op) . DoF
//   + (k^(op) + V / G) . N^G,
// nodewise exactly in discrete time.  Both sides are returned with their
// largest discrepancy over reachable states.
inline TransferReport transfer_snell_p(const GProcess& xg, const AzemaBundle& bundle,
                                       const GTree& gt) {
  const FiltrationTree& tree = gt.tree();
  int N = tree.steps();
  TreeProcess kop = optional_projection_kop(xg.k, gt, bundle);

  // V = k^(op) . DoF and the lattice payoff U = X^F G + V.
  TreeProcess V = TreeProcess::optional(tree);
  TreeProcess U = TreeProcess::optional(tree);
  U[0] = xg.xF[0] * bundle.G[0];
  for (int t = 0; t < N; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        V[c] = V[id] + kop[c] * (bundle.Gtilde[c] - bundle.G[c]);
        U[c] = xg.xF[c] * bundle.G[c] + V[c];
      }
    }
  SnellResult sf = snell_f(tree, U, FMeasure::physical(tree));

  TransferReport rep;
  rep.direct = snell_g(gt, compose_g2f(gt, xg), GMeasure::physical()).value;
  rep.transferred = g_state_vec(gt);
  // Corrections accumulate along the enlarged tree.
  GStateVec corr = g_state_vec(gt);
  rep.transferred[0] = sf.value[0] / bundle.G[0];
  for (int t = 0; t < N; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        double dDoF = bundle.Gtilde[c] - bundle.G[c];
        double hazard = dDoF / bundle.Gtilde[c];
        double dm = bundle.m[c] - bundle.m[id];
        double dTm = dm - dm * dm / bundle.Gtilde[c];
        double tm_term = V[id] / (bundle.G[id] * bundle.G[id]) * dTm;
        double ng_integrand = kop[c] + V[c] / bundle.G[c];
        // survive branch
        int cs = gt.child_state(id, b);
        corr[cs] = corr[id] + tm_term + ng_integrand * (-hazard);
        rep.transferred[cs] = sf.value[c] / bundle.G[c] + corr[cs];
        // death branch: the defect jump (k - k^(op)) enters here
        int cd = gt.child_state(id, 2 + b);
        corr[cd] = corr[id] + tm_term + ng_integrand * (1.0 - hazard) +
                   (xg.k.at(gt, cd) - kop[c]);
        rep.transferred[cd] = corr[cd];
      }
    }
  detail::transfer_gap(gt, rep, tree.steps());
  return rep;
}

// Deflated-measure transfer: under Qtilde the envelope equals
//   S(X^F Etilde - k^(op) . Etilde; F, P) / Etilde   on alive states, plus
//   (k - k^(op)) . D + (k^(op) - (k^(op) . Etilde) / Etilde) . N^G.
inline TransferReport transfer_snell_q(const GProcess& xg, const AzemaBundle& bundle,
                                       const GTree& gt, int horizon = -1) {
  const FiltrationTree& tree = gt.tree();
  int N = horizon < 0 ? tree.steps() : horizon;
  TreeProcess kop = optional_projection_kop(xg.k, gt, bundle);

  // L = k^(op) . Etilde (increments of the nonincreasing discount factor)
  // and the lattice payoff U = X^F Etilde - L.
  TreeProcess L = TreeProcess::optional(tree);
  TreeProcess U = TreeProcess::optional(tree);
  U[0] = xg.xF[0] * bundle.Etilde[0];
  for (int t = 0; t < tree.steps(); ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        L[c] = L[id] + kop[c] * (bundle.Etilde[c] - bundle.Etilde[id]);
        U[c] = xg.xF[c] * bundle.Etilde[c] - L[c];
      }
    }
  SnellResult sf = snell_f(tree, U, FMeasure::physical(tree), N);

  TransferReport rep;
  rep.direct = snell_g(gt, compose_g2f(gt, xg), GMeasure::qtilde(), N).value;
  rep.transferred = g_state_vec(gt);
  GStateVec corr = g_state_vec(gt);
  rep.transferred[0] = sf.value[0] / bundle.Etilde[0];
  for (int t = 0; t < N; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        double hazard = (bundle.Gtilde[c] - bundle.G[c]) / bundle.Gtilde[c];
        double ng_integrand = kop[c] - L[c] / bundle.Etilde[c];
        int cs = gt.child_state(id, b);
        corr[cs] = corr[id] + ng_integrand * (-hazard);
        rep.transferred[cs] = sf.value[c] / bundle.Etilde[c] + corr[cs];
        int cd = gt.child_state(id, 2 + b);
        corr[cd] = corr[id] + ng_integrand * (1.0 - hazard) + (xg.k.at(gt, cd) - kop[c]);
        rep.transferred[cd] = corr[cd];
      }
    }
  detail::transfer_gap(gt, rep, N);
  return rep;
}

}  // namespace rbsde
