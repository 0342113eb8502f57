#include "rbsde/snell.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rbsde/fixtures.hpp"
#include "rbsde/gtree.hpp"
#include "rbsde/lattice.hpp"

namespace rbsde {
namespace {

TEST(SnellFTest, DeterministicHumpStopsAtPeak) {
  FiltrationTree tree = FiltrationTree::symmetric(2, 1.0);
  TreeProcess payoff = TreeProcess::optional(tree);
  for (int id = 0; id < tree.num_nodes(); ++id)
    payoff[id] = tree.node_step(id) == 1 ? 1.0 : 0.0;
  SnellResult r = snell_f(tree, payoff, FMeasure::physical(tree));
  EXPECT_DOUBLE_EQ(r.value[0], 1.0);
  EXPECT_FALSE(r.stop[0]);
  for (int k = 0; k < 2; ++k) EXPECT_TRUE(r.stop[tree.node_id(1, k)]);
}

TEST(SnellFTest, MartingalePayoffIsItsOwnEnvelope) {
  FiltrationTree tree = FiltrationTree::symmetric(4, 0.3);
  TreeProcess w = brownian(tree);
  SnellResult r = snell_f(tree, w, FMeasure::physical(tree));
  for (int id = 0; id < tree.num_nodes(); ++id) EXPECT_NEAR(r.value[id], w[id], 1e-14);
  EXPECT_TRUE(r.stop[0]);  // ties resolve to stopping
}

TEST(SnellFTest, NoBarrierSentinelPassesThrough) {
  FiltrationTree tree = FiltrationTree::symmetric(3, 0.5);
  TreeProcess payoff = TreeProcess::optional(tree, kNoBarrier);
  for (int k = 0; k < tree.level_size(3); ++k) payoff.at(tree, 3, k) = 2.0 + k;
  SnellResult r = snell_f(tree, payoff, FMeasure::physical(tree));
  TreeProcess expect = cond_expect(tree, payoff, 0, 3);
  EXPECT_NEAR(r.value[0], expect[0], 1e-14);
  EXPECT_FALSE(r.stop[0]);
}

// The enumeration oracle: backward recursion must match the literal max
// over all adapted rules, for random payoffs under both measures.
TEST(SnellOracleTest, LatticeRecursionEqualsEnumeration) {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    FiltrationTree tree = FiltrationTree::symmetric(4, 0.25);
    TreeProcess payoff = random_optional(tree, rng, -1.0, 1.0);
    SnellResult r = snell_f(tree, payoff, FMeasure::physical(tree));
    double bf = brute_force_snell_f(tree, payoff, FMeasure::physical(tree));
    EXPECT_NEAR(r.value[0], bf, 1e-12);
  }
}

TEST(SnellOracleTest, EnlargedRecursionEqualsEnumeration) {
  std::mt19937_64 rng(19);
  for (FixtureKind kind : all_fixture_kinds()) {
    Fixture f = make_fixture(kind, 3, 0.4);
    for (int rep = 0; rep < 5; ++rep) {
      GStateVec payoff = random_state_vec(*f.gtree, rng, -1.0, 1.0);
      for (const GMeasure& m : {GMeasure::physical(), GMeasure::qtilde()}) {
        SnellResult r = snell_g(*f.gtree, payoff, m);
        double bf = brute_force_snell_g(*f.gtree, payoff, m);
        EXPECT_NEAR(r.value[0], bf, 1e-12) << fixture_name(kind);
      }
    }
  }
}

TEST(SnellOracleTest, SingleStepClosedForm) {
  FiltrationTree tree = FiltrationTree::symmetric(1, 1.0);
  TreeProcess payoff = TreeProcess::optional(tree);
  payoff[0] = 0.4;
  payoff.at(tree, 1, 0) = -1.0;
  payoff.at(tree, 1, 1) = 1.2;
  double bf = brute_force_snell_f(tree, payoff, FMeasure::physical(tree));
  EXPECT_DOUBLE_EQ(bf, std::max(0.4, 0.5 * (1.2 - 1.0)));
}

TEST(SnellOracleTest, DepthCapEnforced) {
  FiltrationTree tree = FiltrationTree::symmetric(5, 0.2);
  TreeProcess payoff = TreeProcess::optional(tree, 1.0);
  EXPECT_THROW(brute_force_snell_f(tree, payoff, FMeasure::physical(tree)), DepthTooLarge);
  Fixture f = make_fixture(FixtureKind::kImmersion, 4, 0.25);
  GStateVec gp = g_state_vec(*f.gtree, 1.0);
  EXPECT_THROW(brute_force_snell_g(*f.gtree, gp, GMeasure::physical()), DepthTooLarge);
}

TEST(SnellPropertyTest, DoobDecompositionIsConsistent) {
  Fixture f = make_fixture(FixtureKind::kLookaheadHazard, 5, 0.3);
  std::mt19937_64 rng(23);
  GStateVec payoff = random_state_vec(*f.gtree, rng, -1.0, 1.0);
  SnellResult r = snell_g(*f.gtree, payoff, GMeasure::qtilde());
  // value = value_0 + mart - comp, comp nondecreasing, mart a martingale.
  MartingaleReport mrep = is_g_martingale(*f.gtree, r.mart, 1e-12, GMeasure::qtilde());
  EXPECT_TRUE(mrep.ok) << mrep.max_deviation;
  const GTree& gt = *f.gtree;
  for (int t = 0; t < 5; ++t)
    for (int k = 0; k < f.tree->level_size(t); ++k) {
      int id = f.tree->node_id(t, k);
      for (int b = 0; b < 4; ++b) {
        int c = gt.child_state(id, b);
        EXPECT_GE(r.comp[c] - r.comp[id], -1e-14);
        EXPECT_NEAR(r.value[c], r.value[0] + r.mart[c] - r.comp[c], 1e-12);
      }
    }
  // Value dominates payoff and touches it where the rule stops.
  for (int sid = 0; sid < gt.num_states(); ++sid) {
    EXPECT_GE(r.value[sid], payoff[sid] - 1e-14);
    if (r.stop[sid]) EXPECT_NEAR(r.value[sid], payoff[sid], 1e-14);
  }
}

TEST(SnellPropertyTest, SmallestSupermartingaleDomination) {
  Fixture f = make_fixture(FixtureKind::kTerminalHazard, 4, 0.4);
  const GTree& gt = *f.gtree;
  std::mt19937_64 rng(29);
  GStateVec payoff = random_state_vec(gt, rng, -1.0, 1.0);
  SnellResult r = snell_g(gt, payoff, GMeasure::physical());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    // A dominating supermartingale: the envelope plus a nonnegative
    // supermartingale (a nonnegative martingale plus a falling drift).
    TreeProcess leaf_vals = random_optional(*f.tree, rng, 0.0, 2.0);
    TreeProcess mart = cond_expect(*f.tree, leaf_vals, 0, f.tree->steps());
    GStateVec mart_tau = stop_at_tau(gt, mart);
    double drift = u(rng);
    for (int sid = 0; sid < gt.num_states(); ++sid) {
      double dom = r.value[sid] + mart_tau[sid] + drift * (4 - gt.state_step(sid));
      EXPECT_GE(dom, payoff[sid] - 1e-12);
      EXPECT_GE(dom, r.value[sid] - 1e-12);
    }
  }
}

TEST(SnellPropertyTest, MonotoneInThePayoff) {
  Fixture f = make_fixture(FixtureKind::kAdaptedHazard, 5, 0.25);
  std::mt19937_64 rng(31);
  GStateVec p1 = random_state_vec(*f.gtree, rng, -1.0, 1.0);
  GStateVec p2 = p1;
  std::uniform_real_distribution<double> u(0.0, 0.5);
  for (double& v : p2) v += u(rng);
  SnellResult r1 = snell_g(*f.gtree, p1, GMeasure::qtilde());
  SnellResult r2 = snell_g(*f.gtree, p2, GMeasure::qtilde());
  for (int sid = 0; sid < f.gtree->num_states(); ++sid)
    EXPECT_LE(r1.value[sid], r2.value[sid] + 1e-14);
}

TEST(SnellTransferTest, NoDefaultReducesToLatticeEnvelope) {
  Fixture f = make_fixture(FixtureKind::kNoDefault, 5, 0.3);
  std::mt19937_64 rng(37);
  GProcess xg;
  xg.xF = random_optional(*f.tree, rng, -1.0, 1.0);
  xg.k = DeathValues::zero(*f.gtree);
  TransferReport rep = transfer_snell_p(xg, *f.bundle, *f.gtree);
  EXPECT_LE(rep.max_gap, 1e-12);
  SnellResult direct_f = snell_f(*f.tree, xg.xF, FMeasure::physical(*f.tree));
  for (int id = 0; id < f.tree->num_nodes(); ++id)
    EXPECT_NEAR(rep.direct[id], direct_f.value[id], 1e-12);
}

TEST(SnellTransferTest, ZeroDataGivesZero) {
  Fixture f = make_fixture(FixtureKind::kLookaheadHazard, 4, 0.4);
  GProcess xg;
  xg.xF = TreeProcess::optional(*f.tree, 0.0);
  xg.k = DeathValues::zero(*f.gtree);
  TransferReport rep = transfer_snell_p(xg, *f.bundle, *f.gtree);
  EXPECT_LE(rep.max_gap, 1e-14);
  for (int sid = 0; sid < f.gtree->num_states(); ++sid)
    EXPECT_NEAR(rep.direct[sid], 0.0, 1e-14);
}

TEST(SnellTransferTest, ConstantDataIsConstant) {
  Fixture f = make_fixture(FixtureKind::kTerminalHazard, 4, 0.4);
  GProcess xg;
  xg.xF = TreeProcess::optional(*f.tree, 0.75);
  xg.k = DeathValues::zero(*f.gtree);
  for (double& v : xg.k.v) v = 0.75;
  TransferReport rq = transfer_snell_q(xg, *f.bundle, *f.gtree);
  for (int sid = 0; sid < f.gtree->num_states(); ++sid) {
    if (f.gtree->state_prob(sid) <= kTinyProb) continue;
    EXPECT_NEAR(rq.direct[sid], 0.75, 1e-13);
    EXPECT_NEAR(rq.transferred[sid], 0.75, 1e-13);
  }
}

// Exactness of the transfer formulas, confirmed first on oracle-sized trees.
TEST(SnellTransferTest, ExactOnOracleSizedTrees) {
  std::mt19937_64 rng(41);
  for (FixtureKind kind : all_fixture_kinds()) {
    Fixture f = make_fixture(kind, 3, 0.5);
    for (int rep = 0; rep < 10; ++rep) {
      GProcess xg;
      xg.xF = random_optional(*f.tree, rng, -1.0, 1.0);
      xg.k = DeathValues::zero(*f.gtree);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (double& v : xg.k.v) v = u(rng);
      TransferReport rp = transfer_snell_p(xg, *f.bundle, *f.gtree);
      TransferReport rq = transfer_snell_q(xg, *f.bundle, *f.gtree);
      EXPECT_LE(rp.max_gap, 1e-10) << fixture_name(kind);
      EXPECT_LE(rq.max_gap, 1e-10) << fixture_name(kind);
      // The enumeration oracle agrees with the direct envelope at the root.
      GStateVec payoff = compose_g2f(*f.gtree, xg);
      EXPECT_NEAR(rp.direct[0], brute_force_snell_g(*f.gtree, payoff, GMeasure::physical()),
                  1e-12);
      EXPECT_NEAR(rq.direct[0], brute_force_snell_g(*f.gtree, payoff, GMeasure::qtilde()),
                  1e-12);
    }
  }
}

TEST(SnellTransferTest, ImmersionMeasuresCoincide) {
  Fixture f = make_fixture(FixtureKind::kImmersion, 4, 0.4);
  std::mt19937_64 rng(43);
  GProcess xg;
  xg.xF = random_optional(*f.tree, rng, -1.0, 1.0);
  xg.k = DeathValues::zero(*f.gtree);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : xg.k.v) v = u(rng);
  TransferReport rp = transfer_snell_p(xg, *f.bundle, *f.gtree);
  TransferReport rq = transfer_snell_q(xg, *f.bundle, *f.gtree);
  EXPECT_LE(rp.max_gap, 1e-11);
  EXPECT_LE(rq.max_gap, 1e-11);
  for (int sid = 0; sid < f.gtree->num_states(); ++sid)
    EXPECT_NEAR(rp.direct[sid], rq.direct[sid], 1e-12);
}

TEST(SnellTransferTest, ResidualsSmallAtDepthEight) {
  for (FixtureKind kind : all_fixture_kinds()) {
    Fixture f = make_fixture(kind, 8, 0.125);
    std::mt19937_64 rng(47);
    GProcess xg;
    xg.xF = random_optional(*f.tree, rng, -1.0, 1.0);
    xg.k = DeathValues::zero(*f.gtree);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : xg.k.v) v = u(rng);
    EXPECT_LE(transfer_snell_p(xg, *f.bundle, *f.gtree).max_gap, 1e-10) << fixture_name(kind);
    EXPECT_LE(transfer_snell_q(xg, *f.bundle, *f.gtree).max_gap, 1e-10) << fixture_name(kind);
  }
}

}  // namespace
}  // namespace rbsde
