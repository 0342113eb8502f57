#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rbsde/errors.hpp"

namespace rbsde {

inline constexpr double kTinyProb = 1e-300;

// Absolute tolerance for exact-identity checks: float accumulation grows
// with the number of paths, so deep trees get a looser budget.
inline double identity_tol(int depth) { return depth <= 12 ? 1e-12 : 1e-9; }

struct TimeGrid {
  int steps = 1;     // N >= 1
  double dt = 1.0;   // > 0

  double horizon() const { return steps * dt; }

  void validate() const {
    if (steps < 1) throw ConfigError("TimeGrid: steps must be >= 1");
    if (!(dt > 0.0)) throw ConfigError("TimeGrid: dt must be > 0");
  }
};

// Non-recombining binary lattice carrying the Brownian filtration.
//
// Nodes are heap-indexed: level t holds 2^t nodes, id(t,k) = 2^t - 1 + k,
// and the two children of (t,k) are (t+1, 2k) [down] and (t+1, 2k+1) [up].
// Each internal node stores its one-step branch data (up probability and
// the two Brownian increments); the per-node conditional moment constraints
//   p*du + (1-p)*dd = 0      and      p*du^2 + (1-p)*dd^2 = dt
// are enforced at construction to 1e-12.
class FiltrationTree {
 public:
  static constexpr int kDefaultMaxDepth = 22;

  // Symmetric scheme: p = 1/2, dw = +-sqrt(dt).
  static FiltrationTree symmetric(int steps, double dt) {
    TimeGrid g{steps, dt};
    g.validate();
    if (steps > kDefaultMaxDepth)
      throw ConfigError("FiltrationTree: depth " + std::to_string(steps) + " exceeds cap " +
                        std::to_string(kDefaultMaxDepth));
    FiltrationTree t;
    t.grid_ = g;
    int n = t.num_nodes();
    double rt = std::sqrt(dt);
    t.up_prob_.assign(n, 0.5);
    t.dw_up_.assign(n, rt);
    t.dw_down_.assign(n, -rt);
    return t;
  }

  // Asymmetric scheme: per-node up probabilities, increments fixed by the
  // two moment constraints (du = sqrt(dt(1-p)/p), dd = -sqrt(dt p/(1-p))).
  static FiltrationTree with_up_probs(int steps, double dt, const std::vector<double>& up_prob) {
    FiltrationTree t = symmetric(steps, dt);
    if (static_cast<int>(up_prob.size()) != t.num_nodes())
      throw ShapeMismatch("with_up_probs: up_prob size != num_nodes");
    for (int id = 0; id < t.num_nodes(); ++id) {
      double p = up_prob[id];
      if (!(p > 0.0 && p < 1.0)) throw ConfigError("with_up_probs: up_prob must be in (0,1)");
      t.up_prob_[id] = p;
      t.dw_up_[id] = std::sqrt(dt * (1.0 - p) / p);
      t.dw_down_[id] = -std::sqrt(dt * p / (1.0 - p));
    }
    t.validate_moments(1e-12);
    return t;
  }

  // Fully explicit branch data; moment constraints checked to 1e-12.
  static FiltrationTree explicit_branches(int steps, double dt, std::vector<double> up_prob,
                                          std::vector<double> dw_up, std::vector<double> dw_down) {
    FiltrationTree t = symmetric(steps, dt);
    if (static_cast<int>(up_prob.size()) != t.num_nodes() || up_prob.size() != dw_up.size() ||
        dw_up.size() != dw_down.size())
      throw ShapeMismatch("explicit_branches: array sizes must equal num_nodes");
    t.up_prob_ = std::move(up_prob);
    t.dw_up_ = std::move(dw_up);
    t.dw_down_ = std::move(dw_down);
    t.validate_moments(1e-12);
    return t;
  }

  const TimeGrid& grid() const { return grid_; }
  int steps() const { return grid_.steps; }
  double dt() const { return grid_.dt; }

  int num_nodes() const { return (2 << grid_.steps) - 1; }
  int num_leaves() const { return 1 << grid_.steps; }
  int level_size(int step) const { return 1 << step; }
  int node_id(int step, int idx) const { return (1 << step) - 1 + idx; }
  int node_step(int id) const { return std::bit_width(static_cast<uint32_t>(id) + 1u) - 1; }
  int node_idx(int id) const { return id - ((1 << node_step(id)) - 1); }
  // branch: 0 = down, 1 = up.
  int child(int id, int branch) const {
    int t = node_step(id), k = node_idx(id);
    return node_id(t + 1, 2 * k + branch);
  }
  int parent(int id) const {
    int t = node_step(id), k = node_idx(id);
    return node_id(t - 1, k >> 1);
  }
  // Branch taken into this node (undefined at the root).
  int branch_into(int id) const { return node_idx(id) & 1; }

  double up_prob(int id) const { return up_prob_[id]; }
  double branch_prob(int id, int branch) const {
    return branch ? up_prob_[id] : 1.0 - up_prob_[id];
  }
  double dw(int id, int branch) const { return branch ? dw_up_[id] : dw_down_[id]; }
  double dw_up(int id) const { return dw_up_[id]; }
  double dw_down(int id) const { return dw_down_[id]; }

  // P(node): product of branch probabilities along the path from the root.
  double node_prob(int id) const {
    double p = 1.0;
    while (id != 0) {
      int par = parent(id);
      p *= branch_prob(par, node_idx(id) & 1);
      id = par;
    }
    return p;
  }

  // Per-node forward probabilities for one level.
  std::vector<double> level_probs(int step) const {
    std::vector<double> out(level_size(step));
    if (step == 0) {
      out[0] = 1.0;
      return out;
    }
    std::vector<double> prev = level_probs(step - 1);
    for (int k = 0; k < level_size(step - 1); ++k) {
      int id = node_id(step - 1, k);
      out[2 * k] = prev[k] * (1.0 - up_prob_[id]);
      out[2 * k + 1] = prev[k] * up_prob_[id];
    }
    return out;
  }

  void validate_moments(double tol) const {
    for (int t = 0; t < steps(); ++t)
      for (int k = 0; k < level_size(t); ++k) {
        int id = node_id(t, k);
        double p = up_prob_[id], du = dw_up_[id], dd = dw_down_[id];
        double mean = p * du + (1.0 - p) * dd;
        double var = p * du * du + (1.0 - p) * dd * dd;
        if (std::abs(mean) > tol || std::abs(var - dt()) > tol)
          throw ConfigError("FiltrationTree: branch moments violated at node " +
                            std::to_string(id));
      }
  }

 private:
  FiltrationTree() = default;
  TimeGrid grid_;
  std::vector<double> up_prob_, dw_up_, dw_down_;
};

// A process on the lattice, one real per node.
//
// Optional processes carry the value observed at their node.  Predictable
// processes store the value for the step interval (t, t+1] at the step-t
// node; level-N entries are unused.
struct TreeProcess {
  enum class Kind { Optional, Predictable };

  Kind kind = Kind::Optional;
  std::vector<double> v;

  static TreeProcess optional(const FiltrationTree& tree, double fill = 0.0) {
    return {Kind::Optional, std::vector<double>(tree.num_nodes(), fill)};
  }
  static TreeProcess predictable(const FiltrationTree& tree, double fill = 0.0) {
    return {Kind::Predictable, std::vector<double>(tree.num_nodes(), fill)};
  }

  double& operator[](int id) { return v[id]; }
  double operator[](int id) const { return v[id]; }
  double at(const FiltrationTree& tree, int step, int idx) const {
    return v[tree.node_id(step, idx)];
  }
  double& at(const FiltrationTree& tree, int step, int idx) {
    return v[tree.node_id(step, idx)];
  }
};

// Brownian motion on the lattice (W_0 = 0).
inline TreeProcess brownian(const FiltrationTree& tree) {
  TreeProcess w = TreeProcess::optional(tree);
  for (int t = 0; t < tree.steps(); ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) w[tree.child(id, b)] = w[id] + tree.dw(id, b);
    }
  return w;
}

// Apply a nodewise map.
inline TreeProcess map_process(const TreeProcess& x, const std::function<double(double)>& f) {
  TreeProcess out = x;
  for (double& u : out.v) u = f(u);
  return out;
}

// One-step conditional measure on the lattice: an up-weight per internal
// node.  The physical measure uses the tree's own branch probabilities;
// equivalent changes of measure supply their own weights.
struct FMeasure {
  std::vector<double> up_weight;  // per node, internal entries used

  static FMeasure physical(const FiltrationTree& tree) {
    FMeasure m;
    m.up_weight.resize(tree.num_nodes());
    for (int id = 0; id < tree.num_nodes(); ++id) m.up_weight[id] = tree.up_prob(id);
    return m;
  }
  double weight(int id, int branch) const { return branch ? up_weight[id] : 1.0 - up_weight[id]; }
};

// E[proc_{target} | F_at] as a finite sum over descendants.  The returned
// optional process carries E[proc_target | F_s] for every s in
// [0, target_step]; entries above target_step are left at zero.
inline TreeProcess cond_expect(const FiltrationTree& tree, const TreeProcess& proc, int at_step,
                               int target_step, const FMeasure* measure = nullptr) {
  if (proc.kind != TreeProcess::Kind::Optional)
    throw ShapeMismatch("cond_expect: process must be optional");
  if (at_step < 0 || at_step > target_step || target_step > tree.steps())
    throw StepOutOfRange("cond_expect: need 0 <= at_step <= target_step <= N");
  TreeProcess out = TreeProcess::optional(tree);
  for (int k = 0; k < tree.level_size(target_step); ++k)
    out.at(tree, target_step, k) = proc.at(tree, target_step, k);
  for (int t = target_step - 1; t >= 0; --t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      double wu = measure ? measure->up_weight[id] : tree.up_prob(id);
      out[id] = wu * out[tree.child(id, 1)] + (1.0 - wu) * out[tree.child(id, 0)];
    }
  return out;
}

// (h . x)_t = sum_{s<=t} h_s dx_s with the predictable integrand read at the
// left endpoint of each step; (h . x)_0 = 0.
inline TreeProcess stochastic_integral(const FiltrationTree& tree, const TreeProcess& h,
                                       const TreeProcess& x) {
  if (h.kind != TreeProcess::Kind::Predictable)
    throw ShapeMismatch("stochastic_integral: integrand must be predictable");
  if (x.kind != TreeProcess::Kind::Optional)
    throw ShapeMismatch("stochastic_integral: integrator must be optional");
  TreeProcess out = TreeProcess::optional(tree);
  for (int t = 0; t < tree.steps(); ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        out[c] = out[id] + h[id] * (x[c] - x[id]);
      }
    }
  return out;
}

// [x, y]_t = sum_{s<=t} dx_s dy_s.
inline TreeProcess bracket(const FiltrationTree& tree, const TreeProcess& x,
                           const TreeProcess& y) {
  if (x.kind != TreeProcess::Kind::Optional || y.kind != TreeProcess::Kind::Optional)
    throw ShapeMismatch("bracket: both processes must be optional");
  TreeProcess out = TreeProcess::optional(tree);
  for (int t = 0; t < tree.steps(); ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        out[c] = out[id] + (x[c] - x[id]) * (y[c] - y[id]);
      }
    }
  return out;
}

// Doleans-Dade exponential: E(x)_t = prod_{s<=t} (1 + dx_s), E(x)_0 = 1.
// With require_positive set, reports the first node where 1 + dx <= 0.
inline TreeProcess stochastic_exponential(const FiltrationTree& tree, const TreeProcess& x,
                                          bool require_positive = false) {
  if (x.kind != TreeProcess::Kind::Optional)
    throw ShapeMismatch("stochastic_exponential: process must be optional");
  TreeProcess out = TreeProcess::optional(tree);
  out[0] = 1.0;
  for (int t = 0; t < tree.steps(); ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        double factor = 1.0 + (x[c] - x[id]);
        if (require_positive && factor <= 0.0)
          throw PositivityViolation("stochastic_exponential: 1 + dx <= 0 at node " +
                                        std::to_string(c),
                                    c);
        out[c] = out[id] * factor;
      }
    }
  return out;
}

struct MartingaleReport {
  bool ok = true;
  double max_deviation = 0.0;
  int worst_node = -1;
};

// |E[proc_{t+1} | F_t] - proc_t| <= tol at every internal node, under the
// given one-step measure (physical by default).
inline MartingaleReport is_martingale(const FiltrationTree& tree, const TreeProcess& proc,
                                      double tol, const FMeasure* measure = nullptr) {
  if (proc.kind != TreeProcess::Kind::Optional)
    throw ShapeMismatch("is_martingale: process must be optional");
  MartingaleReport rep;
  for (int t = 0; t < tree.steps(); ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      double wu = measure ? measure->up_weight[id] : tree.up_prob(id);
      double e = wu * proc[tree.child(id, 1)] + (1.0 - wu) * proc[tree.child(id, 0)];
      double dev = std::abs(e - proc[id]);
      if (dev > rep.max_deviation) {
        rep.max_deviation = dev;
        rep.worst_node = id;
      }
    }
  rep.ok = rep.max_deviation <= tol;
  return rep;
}

// Leaf probabilities sum to one; used as a cheap structural check.
inline double leaf_prob_total(const FiltrationTree& tree) {
  std::vector<double> probs = tree.level_probs(tree.steps());
  double s = 0.0;
  for (double p : probs) s += p;
  return s;
}

}  // namespace rbsde
