#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rbsde/errors.hpp"
#include "rbsde/lattice.hpp"

namespace rbsde {

// A random time on the lattice, specified by the conditional law of tau
// given the full Brownian path: one probability vector per leaf over
// {1, ..., N, SURVIVES}.  Death at step 0 is excluded by construction, and
// SURVIVES carries the mass of {tau > N} inside the truncated window.
class RandomTimeModel {
 public:
  // law(leaf, s) for s in [1, N]; survive(leaf) = P(tau > N | leaf).
  RandomTimeModel(const FiltrationTree& tree, std::vector<std::vector<double>> death_law,
                  std::vector<double> survive_mass)
      : tree_(&tree), law_(std::move(death_law)), survive_(std::move(survive_mass)) {
    int L = tree.num_leaves(), N = tree.steps();
    if (static_cast<int>(law_.size()) != L || static_cast<int>(survive_.size()) != L)
      throw ShapeMismatch("RandomTimeModel: one law row per leaf required");
    for (int l = 0; l < L; ++l) {
      if (static_cast<int>(law_[l].size()) != N)
        throw ShapeMismatch("RandomTimeModel: law row must have N entries (steps 1..N)");
      double total = survive_[l];
      if (survive_[l] < -1e-15) throw ConfigError("RandomTimeModel: negative survive mass");
      for (double m : law_[l]) {
        if (m < -1e-15) throw ConfigError("RandomTimeModel: negative death mass");
        total += m;
      }
      if (std::abs(total - 1.0) > 1e-12)
        throw ConfigError("RandomTimeModel: leaf law must sum to 1 (leaf " + std::to_string(l) +
                          ", total " + std::to_string(total) + ")");
    }
  }

  // Build from per-leaf hazards eta(leaf, s) in [0, 1), s = 1..N:
  //   P(tau = s | leaf) = eta_s prod_{j<s} (1 - eta_j).
  // Hazards measurable w.r.t. the step-s path prefix give immersion models;
  // hazards that peek at later moves give genuine non-immersion laws.
  static RandomTimeModel from_hazard(const FiltrationTree& tree,
                                     const std::function<double(int /*leaf*/, int /*s*/)>& eta) {
    int L = tree.num_leaves(), N = tree.steps();
    std::vector<std::vector<double>> law(L, std::vector<double>(N, 0.0));
    std::vector<double> surv(L, 0.0);
    for (int l = 0; l < L; ++l) {
      double alive = 1.0;
      for (int s = 1; s <= N; ++s) {
        double e = eta(l, s);
        if (!(e >= 0.0 && e < 1.0)) throw ConfigError("from_hazard: hazard must lie in [0,1)");
        law[l][s - 1] = alive * e;
        alive *= 1.0 - e;
      }
      surv[l] = alive;
    }
    return RandomTimeModel(tree, std::move(law), std::move(surv));
  }

  const FiltrationTree& tree() const { return *tree_; }
  // P(tau = s | leaf), s in [1, N].
  double death_mass(int leaf, int s) const { return law_[leaf][s - 1]; }
  double survive_mass(int leaf) const { return survive_[leaf]; }
  // P(tau > s | leaf) for s in [0, N].
  double tail_mass(int leaf, int s) const {
    double m = survive_[leaf];
    for (int u = s + 1; u <= tree_->steps(); ++u) m += law_[leaf][u - 1];
    return m;
  }

 private:
  const FiltrationTree* tree_;
  std::vector<std::vector<double>> law_;
  std::vector<double> survive_;
};

// The derived processes of a random-time model: the survival pair
// (G, Gtilde), the dual optional projection of the default indicator, the
// martingale m = G + DoF, the density process Ztilde, the discount factor
// Etilde = E(-Gtilde^{-1} . DoF) and VF = 1 - Etilde.
struct AzemaBundle {
  TreeProcess G;       // P(tau > t | F_t)
  TreeProcess Gtilde;  // P(tau >= t | F_t)
  TreeProcess DoF;     // nondecreasing, dDoF_t = Gtilde_t - G_t
  TreeProcess m;       // G + DoF, a martingale
  TreeProcess Ztilde;  // 1 / E(G_-^{-1} . m)
  TreeProcess Etilde;  // prod_{s<=t} G_s / Gtilde_s, nonincreasing
  TreeProcess VF;      // 1 - Etilde

  double dDoF(int child_id) const { return Gtilde[child_id] - G[child_id]; }
  double dVF(const FiltrationTree& tree, int child_id) const {
    return Etilde[tree.parent(child_id)] - Etilde[child_id];
  }
};

// Computes the survival pair by conditional expectation of the leaf law and
// derives the rest of the bundle.  Throws PositivityViolation if any G <= 0.
inline AzemaBundle build_azema(const RandomTimeModel& model) {
  const FiltrationTree& tree = model.tree();
  int N = tree.steps();
  AzemaBundle b;
  b.G = TreeProcess::optional(tree);
  b.Gtilde = TreeProcess::optional(tree);

  // Backward aggregation of the leaf tails: G_t = E[P(tau > t | F_N) | F_t]
  // and Gtilde_t = E[P(tau >= t | F_N) | F_t].
  for (int t = N; t >= 0; --t) {
    TreeProcess tail = TreeProcess::optional(tree);
    TreeProcess tail_ge = TreeProcess::optional(tree);
    for (int l = 0; l < tree.num_leaves(); ++l) {
      tail.at(tree, N, l) = model.tail_mass(l, t);
      tail_ge.at(tree, N, l) =
          model.tail_mass(l, t) + (t >= 1 ? model.death_mass(l, t) : 0.0);
    }
    TreeProcess g = cond_expect(tree, tail, t, N);
    TreeProcess gt = cond_expect(tree, tail_ge, t, N);
    for (int k = 0; k < tree.level_size(t); ++k) {
      b.G.at(tree, t, k) = g.at(tree, t, k);
      b.Gtilde.at(tree, t, k) = gt.at(tree, t, k);
    }
  }

  for (int id = 0; id < tree.num_nodes(); ++id) {
    if (!(b.G[id] > 0.0))
      throw PositivityViolation("build_azema: G <= 0 at node " + std::to_string(id), id);
    if (b.Gtilde[id] < b.G[id] - 1e-14 || b.Gtilde[id] > 1.0 + 1e-14)
      throw InvariantViolation("build_azema: need G <= Gtilde <= 1", id, b.Gtilde[id]);
  }

  b.DoF = TreeProcess::optional(tree);
  b.m = TreeProcess::optional(tree);
  b.Etilde = TreeProcess::optional(tree);
  b.VF = TreeProcess::optional(tree);
  b.Etilde[0] = 1.0;
  b.m[0] = b.G[0];
  for (int t = 0; t < N; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int bb = 0; bb < 2; ++bb) {
        int c = tree.child(id, bb);
        b.DoF[c] = b.DoF[id] + (b.Gtilde[c] - b.G[c]);
        b.m[c] = b.G[c] + b.DoF[c];
        b.Etilde[c] = b.Etilde[id] * b.G[c] / b.Gtilde[c];
        b.VF[c] = 1.0 - b.Etilde[c];
      }
    }

  // Ztilde = 1 / E(G_-^{-1} . m).
  TreeProcess integrand = TreeProcess::predictable(tree);
  for (int id = 0; id < tree.num_nodes(); ++id) integrand[id] = 1.0 / b.G[id];
  TreeProcess drive = stochastic_integral(tree, integrand, b.m);
  TreeProcess den = stochastic_exponential(tree, drive, /*require_positive=*/true);
  b.Ztilde = TreeProcess::optional(tree);
  for (int id = 0; id < tree.num_nodes(); ++id) b.Ztilde[id] = 1.0 / den[id];
  return b;
}

}  // namespace rbsde
