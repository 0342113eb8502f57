#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rbsde/errors.hpp"
#include "rbsde/gtree.hpp"
#include "rbsde/lattice.hpp"
#include "rbsde/random_time.hpp"
#include "rbsde/snell.hpp"

namespace rbsde {

// Driver functional f(step, node, y, z).
using Driver = std::function<double(int, int, double, double)>;

// Data triplet of a reflected equation with random horizon: driver, barrier
// and the terminal process h (the terminal value is always h at the stopped
// time, never a free variable).
struct RBSDEData {
  Driver f;
  bool linear = true;   // driver independent of (y, z)
  double c_lip = 0.0;   // declared Lipschitz constant in (y, z)
  TreeProcess S;        // barrier; kNoBarrier entries allowed
  TreeProcess h;        // terminal process, xi = h at the stopped time
  int horizon = -1;     // defaults to tree depth

  int horizon_or(int n) const { return horizon < 0 ? n : horizon; }
};

// Spot-checks the declared Lipschitz constant on randomized probes.
inline void validate_lipschitz(const RBSDEData& data, const FiltrationTree& tree,
                               std::uint64_t seed = 20240811, int probes = 256) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uy(-5.0, 5.0);
  std::uniform_int_distribution<int> un(0, tree.num_nodes() - 1);
  for (int i = 0; i < probes; ++i) {
    int id = un(rng);
    int t = tree.node_step(id);
    double y = uy(rng), z = uy(rng), y2 = uy(rng), z2 = uy(rng);
    double lhs = std::abs(data.f(t, id, y, z) - data.f(t, id, y2, z2));
    double rhs = data.c_lip * (std::abs(y - y2) + std::abs(z - z2));
    if (lhs > rhs + 1e-9)
      throw ConfigError("declared Lipschitz constant violated on probe (gap " +
                        std::to_string(lhs - rhs) + ")");
  }
}

// Solution on the enlarged tree.  Dynamics convention:
//   dY = -f d(t ^ tau) - dK + Z dW^tau + dM,
// with K nondecreasing predictable (K_0 = 0) and M a Qtilde-martingale
// orthogonal to the Brownian direction (M_0 = 0).  The quadruplet with -M
// solves the same equation written with the opposite martingale sign.
struct GSolution {
  GStateVec Y;             // per state; equals h at dead states
  std::vector<double> Z;   // per alive node: integrand for (t, t+1]
  std::vector<double> dK;  // per alive node: K increment over (t, t+1]
  GStateVec K;             // cumulative, stopped
  GStateVec M;             // cumulative, stopped
};

// Solution on the lattice; the Brownian filtration has the representation
// property, so no orthogonal part remains.
struct FSolution {
  TreeProcess Y;
  std::vector<double> Z;   // per node: integrand for (t, t+1]
  std::vector<double> dK;  // per node: K increment over (t, t+1]
  TreeProcess K;           // cumulative
  double max_residual = 0.0;  // leftover after Brownian projection
};

namespace detail {

inline void check_barrier_dominated(const FiltrationTree& tree, const TreeProcess& S,
                                    const TreeProcess& h, int horizon) {
  for (int t = 0; t <= horizon; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      if (S[id] != kNoBarrier && h[id] < S[id] - 1e-12)
        throw BarrierAboveTerminal("terminal process drops below the barrier at node " +
                                   std::to_string(id));
    }
}

}  // namespace detail

// Linear solve on the enlarged tree with the driver frozen to per-node
// values: one backward sweep computing Y, then (Z, K, M) by projecting the
// one-step martingale increment onto the Brownian direction.
inline GSolution solve_g_frozen(const std::vector<double>& fval, const TreeProcess& S,
                                const TreeProcess& h, const GTree& gt, int horizon) {
  const FiltrationTree& tree = gt.tree();
  double dt = tree.dt();
  int T = horizon;
  GSolution sol;
  sol.Y = g_state_vec(gt);
  sol.Z.assign(tree.num_nodes(), 0.0);
  sol.dK.assign(tree.num_nodes(), 0.0);
  sol.K = g_state_vec(gt);
  sol.M = g_state_vec(gt);

  for (int sid = gt.num_alive(); sid < gt.num_states(); ++sid)
    sol.Y[sid] = h[gt.fnode(sid)];
  for (int k = 0; k < tree.level_size(T); ++k) {
    int id = tree.node_id(T, k);
    sol.Y[id] = h[id];
  }
  for (int t = T - 1; t >= 0; --t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      const auto& w = gt.q_weights(id);
      double cont = 0.0, var_w = 0.0, znum = 0.0;
      for (int b = 0; b < 4; ++b) cont += w[b] * sol.Y[gt.child_state(id, b)];
      double target = cont + fval[id] * dt;
      sol.Y[id] = barrier_max(S[id], target);
      sol.dK[id] = sol.Y[id] - target;
      for (int b = 0; b < 4; ++b) {
        double dw = tree.dw(id, b & 1);
        double dmtot = sol.Y[gt.child_state(id, b)] - cont;
        znum += w[b] * dmtot * dw;
        var_w += w[b] * dw * dw;
      }
      sol.Z[id] = znum / var_w;
    }
  // Forward accumulation of K and M.
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      const auto& w = gt.q_weights(id);
      double cont = 0.0;
      for (int b = 0; b < 4; ++b) cont += w[b] * sol.Y[gt.child_state(id, b)];
      for (int b = 0; b < 4; ++b) {
        int c = gt.child_state(id, b);
        sol.K[c] = sol.K[id] + sol.dK[id];
        sol.M[c] = sol.M[id] + (sol.Y[c] - cont) - sol.Z[id] * tree.dw(id, b & 1);
      }
    }
  return sol;
}

// Linear equation on the enlarged tree (driver a function of (t, node)
// only).  Errors if the terminal process drops below the barrier.
inline GSolution solve_linear_g(const RBSDEData& data, const GTree& gt,
                                const AzemaBundle& bundle) {
  (void)bundle;
  const FiltrationTree& tree = gt.tree();
  if (!data.linear) throw ConfigError("solve_linear_g: driver must not depend on (y, z)");
  int T = data.horizon_or(tree.steps());
  if (T > tree.steps()) throw StepOutOfRange("solve_linear_g: horizon beyond depth");
  detail::check_barrier_dominated(tree, data.S, data.h, T);
  std::vector<double> fval(tree.num_nodes(), 0.0);
  for (int id = 0; id < tree.num_nodes(); ++id)
    fval[id] = data.f(tree.node_step(id), id, 0.0, 0.0);
  return solve_g_frozen(fval, data.S, data.h, gt, T);
}

// Data of the lattice counterpart equation: discounted driver and barrier,
// discounted terminal value, plus the undiscounted terminal process feeding
// the dV^F absorption term.
struct FData {
  TreeProcess fF;       // per-node frozen driver values (linear case)
  Driver fF_general;    // transformed functional (general case)
  double c_lip = 0.0;   // preserved by the transform
  TreeProcess SF;       // discounted barrier
  TreeProcess xiF;      // terminal values at the horizon level
  TreeProcess h;        // undiscounted terminal process
  int horizon = -1;
};

// Discounts the data triplet onto the lattice:
//   f^F = Etilde f,  S^F = Etilde S,  xi^F = Etilde_T h_T,
// and for general drivers f^F(s,y,z) = Etilde_s f(s, y/Etilde_s, z/Etilde_s)
// (the Lipschitz constant is unchanged).
inline FData make_f_data(const RBSDEData& data, const AzemaBundle& bundle,
                         const FiltrationTree& tree) {
  FData fd;
  int T = data.horizon_or(tree.steps());
  fd.horizon = T;
  fd.c_lip = data.c_lip;
  fd.h = data.h;
  fd.fF = TreeProcess::optional(tree);
  fd.SF = TreeProcess::optional(tree);
  fd.xiF = TreeProcess::optional(tree);
  for (int id = 0; id < tree.num_nodes(); ++id) {
    double e = bundle.Etilde[id];
    if (data.linear) fd.fF[id] = e * data.f(tree.node_step(id), id, 0.0, 0.0);
    fd.SF[id] = data.S[id] == kNoBarrier ? kNoBarrier : e * data.S[id];
  }
  for (int k = 0; k < tree.level_size(T); ++k) {
    int id = tree.node_id(T, k);
    fd.xiF[id] = bundle.Etilde[id] * data.h[id];
  }
  auto etilde = std::make_shared<TreeProcess>(bundle.Etilde);
  Driver f = data.f;
  fd.fF_general = [etilde, f](int t, int id, double y, double z) {
    double e = (*etilde)[id];
    return e * f(t, id, y / e, z / e);
  };
  return fd;
}

// The dV^F absorption term contributed by one branch.
inline double fd_hv(const AzemaBundle& bundle, const TreeProcess& h, int id, int c) {
  return h[c] * (bundle.Etilde[id] - bundle.Etilde[c]);
}

// Linear solve on the lattice with frozen per-node driver values.
inline FSolution solve_f_frozen(const TreeProcess& fval, const FData& fd, const AzemaBundle& bundle,
                                const FiltrationTree& tree) {
  double dt = tree.dt();
  int T = fd.horizon < 0 ? tree.steps() : fd.horizon;
  FSolution sol;
  sol.Y = TreeProcess::optional(tree);
  sol.Z.assign(tree.num_nodes(), 0.0);
  sol.dK.assign(tree.num_nodes(), 0.0);
  sol.K = TreeProcess::optional(tree);

  for (int k = 0; k < tree.level_size(T); ++k) {
    int id = tree.node_id(T, k);
    sol.Y[id] = fd.xiF[id];
  }
  for (int t = T - 1; t >= 0; --t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      double cont = 0.0, hv = 0.0, var_w = 0.0, znum = 0.0;
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        double pb = tree.branch_prob(id, b);
        cont += pb * sol.Y[c];
        hv += pb * fd.h[c] * (bundle.Etilde[id] - bundle.Etilde[c]);
      }
      double target = cont + fval[id] * dt + hv;
      sol.Y[id] = barrier_max(fd.SF[id], target);
      sol.dK[id] = sol.Y[id] - target;
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        double pb = tree.branch_prob(id, b);
        double dw = tree.dw(id, b);
        double dmtot = sol.Y[c] + fd.h[c] * (bundle.Etilde[id] - bundle.Etilde[c]) - (cont + hv);
        znum += pb * dmtot * dw;
        var_w += pb * dw * dw;
      }
      sol.Z[id] = znum / var_w;
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        double dmtot = sol.Y[c] + fd.h[c] * (bundle.Etilde[id] - bundle.Etilde[c]) - (cont + hv);
        double resid = std::abs(dmtot - sol.Z[id] * tree.dw(id, b));
        sol.max_residual = std::max(sol.max_residual, resid);
      }
    }
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      for (int b = 0; b < 2; ++b) sol.K[tree.child(id, b)] = sol.K[id] + sol.dK[id];
    }
  return sol;
}

inline FSolution solve_linear_f(const FData& fd, const AzemaBundle& bundle,
                                const FiltrationTree& tree) {
  int T = fd.horizon < 0 ? tree.steps() : fd.horizon;
  for (int k = 0; k < tree.level_size(T); ++k) {
    int id = tree.node_id(T, k);
    if (fd.SF[id] != kNoBarrier && fd.xiF[id] < fd.SF[id] - 1e-12)
      throw BarrierAboveTerminal("discounted terminal below discounted barrier");
  }
  return solve_f_frozen(fd.fF, fd, bundle, tree);
}

// Explicit lift of a lattice solution to the enlarged tree:
//   Y^G = (Y^F / Etilde) 1_{[0,tau[} + h 1_{[tau,inf[},
//   Z^G = Z^F / Etilde_-,   K^G = (1/Etilde_-) . (K^F)^tau,
//   M^G = (h - Y^F / Etilde) . N^G.
// The output is validated against the dynamics; a violation reports the
// worst offending state instead of passing silently.
inline GSolution transform_f2g(const FSolution& solF, const TreeProcess& h,
                               const AzemaBundle& bundle, const GTree& gt, int horizon = -1,
                               double check_tol = 1e-9) {
  const FiltrationTree& tree = gt.tree();
  int T = horizon < 0 ? tree.steps() : horizon;
  GSolution sol;
  sol.Y = g_state_vec(gt);
  sol.Z.assign(tree.num_nodes(), 0.0);
  sol.dK.assign(tree.num_nodes(), 0.0);
  sol.K = g_state_vec(gt);
  sol.M = g_state_vec(gt);

  for (int t = 0; t <= T; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      sol.Y[id] = solF.Y[id] / bundle.Etilde[id];
    }
  for (int sid = gt.num_alive(); sid < gt.num_states(); ++sid) sol.Y[sid] = h[gt.fnode(sid)];
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      sol.Z[id] = solF.Z[id] / bundle.Etilde[id];
      sol.dK[id] = solF.dK[id] / bundle.Etilde[id];
      for (int b = 0; b < 4; ++b) {
        int c = gt.child_state(id, b);
        int cf = gt.fnode(c);
        double hazard = (bundle.Gtilde[cf] - bundle.G[cf]) / bundle.Gtilde[cf];
        double integrand = h[cf] - solF.Y[cf] / bundle.Etilde[cf];
        sol.K[c] = sol.K[id] + sol.dK[id];
        sol.M[c] = sol.M[id] + integrand * (b < 2 ? -hazard : 1.0 - hazard);
      }
    }

  // Dynamics audit: dY + f dt + dK - Z dW - dM must vanish branchwise.  The
  // driver is recovered from the lattice equation, so the audit here only
  // needs the structural pieces.
  double worst = 0.0;
  int worst_state = -1;
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      // Recover f dt from the lattice dynamics at this node.
      double cont = 0.0, hv = 0.0;
      for (int b = 0; b < 2; ++b) {
        int c = tree.child(id, b);
        double pb = tree.branch_prob(id, b);
        cont += pb * solF.Y[c];
        hv += pb * fd_hv(bundle, h, id, c);
      }
      double fdt = (solF.Y[id] - solF.dK[id] - cont - hv) / bundle.Etilde[id];
      for (int b = 0; b < 4; ++b) {
        int c = gt.child_state(id, b);
        double resid = (sol.Y[c] - sol.Y[id]) + fdt + sol.dK[id] -
                       sol.Z[id] * tree.dw(id, b & 1) - (sol.M[c] - sol.M[id]);
        if (std::abs(resid) > worst) {
          worst = std::abs(resid);
          worst_state = c;
        }
      }
    }
  if (worst > check_tol)
    throw InvariantViolation("transform_f2g: lifted solution violates the dynamics", worst_state,
                             worst);
  return sol;
}

// ----------------------------------------------------------------------------
// Picard iteration for Lipschitz drivers.
// ----------------------------------------------------------------------------

struct PicardTrace {
  std::vector<double> deltas;  // sup|Y^n - Y^{n-1}| + sup|Z^n - Z^{n-1}|
  int iterations = 0;
  double final_residual = 0.0;  // dynamics residual with the live driver
};

struct PicardResultG {
  GSolution sol;
  PicardTrace trace;
};
struct PicardResultF {
  FSolution sol;
  PicardTrace trace;
};

// Picard scheme on the enlarged tree: every step is a linear solve with the
// driver frozen at the previous iterate.  Divergence is reported with the
// delta sequence, never damped or retried.
inline PicardResultG solve_general_g(const RBSDEData& data, const GTree& gt,
                                     const AzemaBundle& bundle, double tol, int max_iter) {
  (void)bundle;
  const FiltrationTree& tree = gt.tree();
  if (!(tol > 0.0)) throw ConfigError("solve_general_g: tol must be > 0");
  int T = data.horizon_or(tree.steps());
  detail::check_barrier_dominated(tree, data.S, data.h, T);
  validate_lipschitz(data, tree);

  PicardResultG out;
  GStateVec y_prev = g_state_vec(gt);
  std::vector<double> z_prev(tree.num_nodes(), 0.0);
  std::vector<double> fval(tree.num_nodes(), 0.0);
  for (int it = 1; it <= max_iter; ++it) {
    for (int id = 0; id < tree.num_nodes(); ++id)
      fval[id] = data.f(tree.node_step(id), id, y_prev[id], z_prev[id]);
    GSolution sol = solve_g_frozen(fval, data.S, data.h, gt, T);
    double dy = 0.0, dz = 0.0;
    for (int sid = 0; sid < gt.num_states(); ++sid)
      dy = std::max(dy, std::abs(sol.Y[sid] - y_prev[sid]));
    for (int id = 0; id < tree.num_nodes(); ++id)
      dz = std::max(dz, std::abs(sol.Z[id] - z_prev[id]));
    out.trace.deltas.push_back(dy + dz);
    out.trace.iterations = it;
    y_prev = sol.Y;
    z_prev = sol.Z;
    if (dy + dz < tol) {
      out.sol = std::move(sol);
      // Residual with the live driver.
      double worst = 0.0;
      double dt = tree.dt();
      for (int t = 0; t < T; ++t)
        for (int k = 0; k < tree.level_size(t); ++k) {
          int id = tree.node_id(t, k);
          double fdt = data.f(t, id, out.sol.Y[id], out.sol.Z[id]) * dt;
          for (int b = 0; b < 4; ++b) {
            int c = gt.child_state(id, b);
            double resid = (out.sol.Y[c] - out.sol.Y[id]) + fdt + out.sol.dK[id] -
                           out.sol.Z[id] * tree.dw(id, b & 1) -
                           (out.sol.M[c] - out.sol.M[id]);
            worst = std::max(worst, std::abs(resid));
          }
        }
      out.trace.final_residual = worst;
      return out;
    }
  }
  throw NoConvergence("solve_general_g: no convergence after " + std::to_string(max_iter) +
                          " iterations",
                      out.trace.deltas);
}

// Picard scheme for the lattice counterpart, iterating the transformed
// driver on the lattice directly.
inline PicardResultF solve_general_f(const RBSDEData& data, const AzemaBundle& bundle,
                                     const FiltrationTree& tree, double tol, int max_iter) {
  if (!(tol > 0.0)) throw ConfigError("solve_general_f: tol must be > 0");
  FData fd = make_f_data(data, bundle, tree);
  int T = fd.horizon;
  validate_lipschitz(data, tree);

  PicardResultF out;
  TreeProcess y_prev = TreeProcess::optional(tree);
  std::vector<double> z_prev(tree.num_nodes(), 0.0);
  TreeProcess fval = TreeProcess::optional(tree);
  for (int it = 1; it <= max_iter; ++it) {
    for (int id = 0; id < tree.num_nodes(); ++id)
      fval[id] = fd.fF_general(tree.node_step(id), id, y_prev[id], z_prev[id]);
    FSolution sol = solve_f_frozen(fval, fd, bundle, tree);
    double dy = 0.0, dz = 0.0;
    for (int id = 0; id < tree.num_nodes(); ++id) {
      dy = std::max(dy, std::abs(sol.Y[id] - y_prev[id]));
      dz = std::max(dz, std::abs(sol.Z[id] - z_prev[id]));
    }
    out.trace.deltas.push_back(dy + dz);
    out.trace.iterations = it;
    y_prev = sol.Y;
    z_prev = sol.Z;
    if (dy + dz < tol) {
      out.sol = std::move(sol);
      double worst = 0.0;
      double dt = tree.dt();
      for (int t = 0; t < T; ++t)
        for (int k = 0; k < tree.level_size(t); ++k) {
          int id = tree.node_id(t, k);
          double cont = 0.0, hv = 0.0;
          for (int b = 0; b < 2; ++b) {
            int c = tree.child(id, b);
            double pb = tree.branch_prob(id, b);
            cont += pb * out.sol.Y[c];
            hv += pb * fd_hv(bundle, fd.h, id, c);
          }
          double fdt = fd.fF_general(t, id, out.sol.Y[id], out.sol.Z[id]) * dt;
          double resid = out.sol.Y[id] - (cont + hv + fdt + out.sol.dK[id]);
          worst = std::max(worst, std::abs(resid));
        }
      out.trace.final_residual = worst;
      return out;
    }
  }
  throw NoConvergence("solve_general_f: no convergence after " + std::to_string(max_iter) +
                          " iterations",
                      out.trace.deltas);
}

// ----------------------------------------------------------------------------
// Skorokhod audit.
// ----------------------------------------------------------------------------

struct SkorokhodReport {
  double flat_sum = 0.0;  // largest pathwise sum of (Y_- - S_-) dK
  double min_gap = std::numeric_limits<double>::infinity();  // min (Y - S) before horizon
  double min_dK = std::numeric_limits<double>::infinity();
  bool pass = false;
};

namespace detail {

inline double skorokhod_term(double gap, double dK) {
  if (dK == 0.0) return 0.0;  // no 0 * inf with the no-barrier sentinel
  return gap * dK;
}

}  // namespace detail

inline SkorokhodReport skorokhod_check_g(const GSolution& sol, const TreeProcess& S,
                                         const GTree& gt, int horizon = -1) {
  const FiltrationTree& tree = gt.tree();
  int T = horizon < 0 ? tree.steps() : horizon;
  SkorokhodReport rep;
  // Largest pathwise accumulation via one forward sweep over alive nodes.
  std::vector<double> acc(tree.num_nodes(), 0.0);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      double gap = S[id] == kNoBarrier ? std::numeric_limits<double>::infinity()
                                       : sol.Y[id] - S[id];
      if (S[id] != kNoBarrier) rep.min_gap = std::min(rep.min_gap, gap);
      rep.min_dK = std::min(rep.min_dK, sol.dK[id]);
      double term = detail::skorokhod_term(gap, sol.dK[id]);
      for (int b = 0; b < 2; ++b) acc[tree.child(id, b)] = acc[id] + term;
      rep.flat_sum = std::max(rep.flat_sum, acc[id] + term);
    }
  if (rep.min_dK == std::numeric_limits<double>::infinity()) rep.min_dK = 0.0;
  if (rep.min_gap == std::numeric_limits<double>::infinity()) rep.min_gap = 0.0;
  rep.pass = rep.flat_sum <= 1e-10 && rep.min_gap >= -1e-10 && rep.min_dK >= -1e-12;
  return rep;
}

inline SkorokhodReport skorokhod_check_f(const FSolution& sol, const TreeProcess& SF,
                                         const FiltrationTree& tree, int horizon = -1) {
  int T = horizon < 0 ? tree.steps() : horizon;
  SkorokhodReport rep;
  std::vector<double> acc(tree.num_nodes(), 0.0);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < tree.level_size(t); ++k) {
      int id = tree.node_id(t, k);
      double gap = SF[id] == kNoBarrier ? std::numeric_limits<double>::infinity()
                                        : sol.Y[id] - SF[id];
      if (SF[id] != kNoBarrier) rep.min_gap = std::min(rep.min_gap, gap);
      rep.min_dK = std::min(rep.min_dK, sol.dK[id]);
      double term = detail::skorokhod_term(gap, sol.dK[id]);
      for (int b = 0; b < 2; ++b) acc[tree.child(id, b)] = acc[id] + term;
      rep.flat_sum = std::max(rep.flat_sum, acc[id] + term);
    }
  if (rep.min_dK == std::numeric_limits<double>::infinity()) rep.min_dK = 0.0;
  if (rep.min_gap == std::numeric_limits<double>::infinity()) rep.min_gap = 0.0;
  rep.pass = rep.flat_sum <= 1e-10 && rep.min_gap >= -1e-10 && rep.min_dK >= -1e-12;
  return rep;
}

// ----------------------------------------------------------------------------
// Horizon-truncation study.
// ----------------------------------------------------------------------------

struct TruncationReport {
  std::vector<int> levels;
  std::vector<double> dist_y;       // between consecutive levels
  std::vector<double> dist_z;
  std::vector<double> dist_total;   // dist_y + dist_z
  double admissibility = 0.0;       // E[int (|h|^p + F^p + sup S+^p) dV^F]
  bool decreasing = false;
};

namespace detail {

// Weighted distances between two solutions:
//   dY = E[sup_{t<=T^tau} Etilde_t |dY_t|^p]^{1/p},
//   dZ = E[(sum_{s<=T^tau} Etilde_{s-}^{2/p} dZ_s^2 dt)^{p/2}]^{1/p},
// computed scenariowise in one pass per leaf.
inline std::pair<double, double> weighted_distance(const GTree& gt, const AzemaBundle& bundle,
                                                   const GSolution& a, const GSolution& b,
                                                   double p) {
  const FiltrationTree& tree = gt.tree();
  const RandomTimeModel& model = gt.model();
  int N = tree.steps();
  double dt = tree.dt();
  double ey = 0.0, ez = 0.0;
  std::vector<double> runsup(N + 1), zsum(N + 1);
  for (int l = 0; l < tree.num_leaves(); ++l) {
    double pl = tree.node_prob(tree.node_id(N, l));
    if (pl <= kTinyProb) continue;
    // Alive-prefix running statistics.
    int id0 = 0;
    runsup[0] = bundle.Etilde[0] * std::pow(std::abs(a.Y[0] - b.Y[0]), p);
    zsum[0] = 0.0;
    for (int t = 1; t <= N; ++t) {
      int id = tree.node_id(t, l >> (N - t));
      double w = bundle.Etilde[id] * std::pow(std::abs(a.Y[id] - b.Y[id]), p);
      runsup[t] = std::max(runsup[t - 1], w);
      double dz = a.Z[id0] - b.Z[id0];
      zsum[t] = zsum[t - 1] + std::pow(bundle.Etilde[id0], 2.0 / p) * dz * dz * dt;
      id0 = id;
    }
    for (int s = 1; s <= N; ++s) {
      double mass = model.death_mass(l, s);
      if (mass <= 0.0) continue;
      int node = tree.node_id(s, l >> (N - s));
      int dead = gt.dead_id(s, l >> (N - s));
      double at_death = bundle.Etilde[node] * std::pow(std::abs(a.Y[dead] - b.Y[dead]), p);
      ey += pl * mass * std::max(s > 0 ? runsup[s - 1] : 0.0, at_death);
      ez += pl * mass * std::pow(zsum[s], p / 2.0);
    }
    double sv = model.survive_mass(l);
    if (sv > 0.0) {
      ey += pl * sv * runsup[N];
      ez += pl * sv * std::pow(zsum[N], p / 2.0);
    }
  }
  return {std::pow(ey, 1.0 / p), std::pow(ez, 1.0 / p)};
}

}  // namespace detail

// Truncates the data at each level n (driver and terminal process cut at n,
// barrier frozen at n) and reports the discount-weighted distances between
// consecutive solutions.  Distances must decrease for the report to pass.
inline TruncationReport horizon_truncation_study(const RBSDEData& data, const GTree& gt,
                                                 const AzemaBundle& bundle,
                                                 const std::vector<int>& levels, double p) {
  const FiltrationTree& tree = gt.tree();
  int N = tree.steps();
  for (size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] > N) throw LevelExceedsDepth("truncation level beyond tree depth");
    if (i > 0 && levels[i] <= levels[i - 1])
      throw ConfigError("horizon_truncation_study: levels must increase");
  }
  if (!data.linear)
    throw ConfigError("horizon_truncation_study: linear data required (general drivers go "
                      "through the Picard path per level)");

  TruncationReport rep;
  rep.levels = levels;

  // Admissibility: E[sum_t (|h_t|^p + F_t^p + sup_{u<=t} S_u+^p) dV^F_t].
  {
    double total = 0.0;
    int Nn = tree.steps();
    std::vector<double> F(Nn + 1), supS(Nn + 1), habs(Nn + 1);
    for (int l = 0; l < tree.num_leaves(); ++l) {
      double pl = tree.node_prob(tree.node_id(Nn, l));
      if (pl <= kTinyProb) continue;
      double f_acc = 0.0, s_sup = 0.0;
      int prev = 0;
      for (int t = 0; t <= Nn; ++t) {
        int id = tree.node_id(t, l >> (Nn - t));
        if (t > 0) f_acc += std::abs(data.f(t - 1, prev, 0.0, 0.0)) * tree.dt();
        double sp = data.S[id] == kNoBarrier ? 0.0 : std::max(data.S[id], 0.0);
        s_sup = std::max(s_sup, std::pow(sp, p));
        F[t] = std::pow(f_acc, p);
        supS[t] = s_sup;
        habs[t] = std::pow(std::abs(data.h[id]), p);
        if (t > 0) {
          double dvf = bundle.Etilde[prev] - bundle.Etilde[id];
          total += pl * (habs[t] + F[t] + supS[t]) * dvf;
        }
        prev = id;
      }
    }
    rep.admissibility = total;
  }

  std::vector<double> fval(tree.num_nodes(), 0.0);
  GSolution prev_sol;
  for (size_t i = 0; i < levels.size(); ++i) {
    int n = levels[i];
    RBSDEData trunc;
    trunc.linear = true;
    trunc.c_lip = 0.0;
    trunc.horizon = N;
    trunc.S = TreeProcess::optional(tree);
    trunc.h = TreeProcess::optional(tree);
    for (int id = 0; id < tree.num_nodes(); ++id) {
      int t = tree.node_step(id);
      // Barrier frozen at level n: value at the step-n ancestor.
      int anc = id;
      for (int s = t; s > n; --s) anc = tree.parent(anc);
      trunc.S[id] = data.S[anc];
      trunc.h[id] = t <= n ? data.h[id] : 0.0;
    }
    Driver base = data.f;
    trunc.f = [base, n](int t, int id, double y, double z) {
      return t < n ? base(t, id, y, z) : 0.0;
    };
    GSolution sol = solve_linear_g(trunc, gt, bundle);
    if (i > 0) {
      auto [dy, dz] = detail::weighted_distance(gt, bundle, prev_sol, sol, p);
      rep.dist_y.push_back(dy);
      rep.dist_z.push_back(dz);
      rep.dist_total.push_back(dy + dz);
    }
    prev_sol = std::move(sol);
  }
  rep.decreasing = true;
  for (size_t i = 1; i < rep.dist_total.size(); ++i)
    if (!(rep.dist_total[i] < rep.dist_total[i - 1])) rep.decreasing = false;
  return rep;
}

}  // namespace rbsde
