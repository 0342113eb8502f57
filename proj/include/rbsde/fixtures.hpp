#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rbsde/errors.hpp"
#include "rbsde/estimates.hpp"
#include "rbsde/gtree.hpp"
#include "rbsde/lattice.hpp"
#include "rbsde/random_time.hpp"
#include "rbsde/solver.hpp"

namespace rbsde {

// The standard model zoo: two immersion models (independent and
// path-adapted hazard), two genuinely non-immersion laws (the hazard peeks
// at later moves or at the terminal state), and the no-default window.
enum class FixtureKind {
  kImmersion,             // constant hazard, independent of the path
  kAdaptedHazard,         // hazard driven by the running path, still immersion
  kLookaheadHazard,       // hazard loaded by the next move: non-immersion
  kTerminalHazard,        // hazard tilted by the leaf endpoint: non-immersion
  kNoDefault,             // tau > N almost surely
};

inline const char* fixture_name(FixtureKind k) {
  switch (k) {
    case FixtureKind::kImmersion: return "immersion";
    case FixtureKind::kAdaptedHazard: return "adapted_hazard";
    case FixtureKind::kLookaheadHazard: return "lookahead_hazard";
    case FixtureKind::kTerminalHazard: return "terminal_hazard";
    case FixtureKind::kNoDefault: return "no_default";
  }
  return "?";
}

// Constant-hazard (geometric) random time, independent of the path.
inline RandomTimeModel independent_hazard(const FiltrationTree& tree, double lam) {
  return RandomTimeModel::from_hazard(tree, [lam](int, int) { return lam; });
}

// Hazard read off the move into each step: up-moves calm, down-moves risky.
// Adapted to the observed path, hence an immersion model with random G.
inline RandomTimeModel adapted_hazard(const FiltrationTree& tree, double base, double spread) {
  int N = tree.steps();
  return RandomTimeModel::from_hazard(tree, [N, base, spread](int leaf, int s) {
    int move = (leaf >> (N - s)) & 1;
    return move ? base - spread : base + spread;
  });
}

// Hazard loaded by the NEXT move (one-step lookahead), so the death mass at
// s carries information about F_{s+1}: a non-immersion law.
inline RandomTimeModel lookahead_hazard(const FiltrationTree& tree, double base, double spread) {
  int N = tree.steps();
  return RandomTimeModel::from_hazard(tree, [N, base, spread](int leaf, int s) {
    if (s == N) return base;
    int next_move = (leaf >> (N - s - 1)) & 1;
    return next_move ? base + spread : base - spread;
  });
}

// Hazard tilted by the leaf endpoint (popcount of the path), correlating
// the death time with the terminal Brownian value: non-immersion.
inline RandomTimeModel terminal_hazard(const FiltrationTree& tree, double base, double tilt) {
  int N = tree.steps();
  return RandomTimeModel::from_hazard(tree, [N, base, tilt](int leaf, int /*s*/) {
    double ups = static_cast<double>(std::popcount(static_cast<unsigned>(leaf)));
    double score = 2.0 * ups / N - 1.0;  // in [-1, 1]
    return std::clamp(base * (1.0 + tilt * score), 1e-4, 0.95);
  });
}

inline RandomTimeModel no_default(const FiltrationTree& tree) {
  return RandomTimeModel::from_hazard(tree, [](int, int) { return 0.0; });
}

// A fixture: tree, model and derived structures, self-owned.
struct Fixture {
  FixtureKind kind;
  std::shared_ptr<FiltrationTree> tree;
  std::shared_ptr<RandomTimeModel> model;
  std::shared_ptr<AzemaBundle> bundle;
  std::shared_ptr<GTree> gtree;
};

inline Fixture make_fixture(FixtureKind kind, int depth, double dt) {
  Fixture f;
  f.kind = kind;
  f.tree = std::make_shared<FiltrationTree>(FiltrationTree::symmetric(depth, dt));
  switch (kind) {
    case FixtureKind::kImmersion:
      f.model = std::make_shared<RandomTimeModel>(independent_hazard(*f.tree, 0.2));
      break;
    case FixtureKind::kAdaptedHazard:
      f.model = std::make_shared<RandomTimeModel>(adapted_hazard(*f.tree, 0.2, 0.1));
      break;
    case FixtureKind::kLookaheadHazard:
      f.model = std::make_shared<RandomTimeModel>(lookahead_hazard(*f.tree, 0.2, 0.12));
      break;
    case FixtureKind::kTerminalHazard:
      f.model = std::make_shared<RandomTimeModel>(terminal_hazard(*f.tree, 0.25, 0.6));
      break;
    case FixtureKind::kNoDefault:
      f.model = std::make_shared<RandomTimeModel>(no_default(*f.tree));
      break;
  }
  f.bundle = std::make_shared<AzemaBundle>(build_azema(*f.model));
  f.gtree = std::make_shared<GTree>(*f.model, *f.bundle);
  return f;
}

inline std::vector<FixtureKind> all_fixture_kinds() {
  return {FixtureKind::kImmersion, FixtureKind::kAdaptedHazard, FixtureKind::kLookaheadHazard,
          FixtureKind::kTerminalHazard, FixtureKind::kNoDefault};
}

// ----------------------------------------------------------------------------
// Random instances (deterministic given the seed).
// ----------------------------------------------------------------------------

inline TreeProcess random_optional(const FiltrationTree& tree, std::mt19937_64& rng, double lo,
                                   double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  TreeProcess x = TreeProcess::optional(tree);
  for (double& v : x.v) v = u(rng);
  return x;
}

inline GStateVec random_state_vec(const GTree& gt, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  GStateVec x = g_state_vec(gt);
  for (double& v : x) v = u(rng);
  return x;
}

// Random linear data: bounded driver values, a barrier comfortably below
// the terminal process, magnitudes kept in a narrow band so batch ratio
// statistics stay comparable.
inline RBSDEData random_linear_data(const FiltrationTree& tree, std::mt19937_64& rng,
                                    bool with_barrier = true) {
  std::uniform_real_distribution<double> uf(-1.0, 1.0);
  std::uniform_real_distribution<double> uh(1.0, 2.0);
  RBSDEData data;
  data.linear = true;
  data.c_lip = 0.0;
  data.h = random_optional(tree, rng, 1.0, 2.0);
  data.S = TreeProcess::optional(tree, kNoBarrier);
  if (with_barrier) {
    std::uniform_real_distribution<double> us(0.0, 1.0);
    for (int id = 0; id < tree.num_nodes(); ++id) data.S[id] = us(rng);
  }
  auto fvals = std::make_shared<std::vector<double>>(tree.num_nodes());
  for (double& v : *fvals) v = uf(rng);
  data.f = [fvals](int, int id, double, double) { return (*fvals)[id]; };
  (void)uh;
  return data;
}

// Random Lipschitz driver f(t, y, z) = a sin(y) + b z + c with |a| + |b|
// bounded by the declared constant.
inline RBSDEData random_lipschitz_data(const FiltrationTree& tree, std::mt19937_64& rng,
                                       double c_lip_cap) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double a = u01(rng) * c_lip_cap * 0.5;
  double b = u01(rng) * c_lip_cap * 0.5;
  double c = u01(rng) - 0.5;
  RBSDEData data;
  data.linear = false;
  data.c_lip = a + b;
  data.h = random_optional(tree, rng, 0.5, 1.5);
  data.S = TreeProcess::optional(tree, kNoBarrier);
  data.f = [a, b, c](int, int, double y, double z) { return a * std::sin(y) + b * z + c; };
  return data;
}

// Random nondecreasing staircase attached to states (jumps while alive and
// at the death step).
inline StaircaseK random_staircase(const GTree& gt, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  StaircaseK st;
  st.dK = g_state_vec(gt);
  for (int sid = 1; sid < gt.num_states(); ++sid) st.dK[sid] = u(rng) < 0.5 ? 0.0 : u(rng);
  return st;
}

// Random nonnegative lattice-optional process vanishing at the root.
inline TreeProcess random_nonneg_optional(const FiltrationTree& tree, std::mt19937_64& rng) {
  TreeProcess x = random_optional(tree, rng, 0.0, 2.0);
  x[0] = 0.0;
  return x;
}

}  // namespace rbsde
