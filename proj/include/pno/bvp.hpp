#pragma once

#include "pno/rollout.hpp"

namespace pno {

/// Closed-form single-player solution of the penalty-free game under the
/// maximizing convention: lam_d is constant at mu, lam_v is affine in time,
/// u = lam_v / 2. Valid while the control stays inside its bounds.
struct AnalyticEval {
  double value = 0;
  double lam_d = 0;
  double lam_v = 0;
  double u = 0;
  bool clipped = false;
};
AnalyticEval analytic_player(const GameGeometry& g, double d, double v, double t);

struct LevelTrace {
  double level = 0;       // penalty scale of the continuation step
  int newton_iters = 0;
  double residual = 0;
  int restarts_used = 0;
};

struct BvpSolution {
  TrajectoryBundle bundle;
  DenseSolution dense;  // 12D (state, lam1, lam2) over [t0, T]
  double residual_norm = 0;
  bool converged = false;
  std::vector<LevelTrace> trace;
  int multiplicity = 1;
};

struct BvpOptions {
  std::vector<double> continuation;  // strictly increasing, ends at the target scale
  int newton_max_iters = 40;
  double tol = 1e-10;         // Newton target on the max-norm residual
  double accept_tol = 1e-6;   // convergence flag threshold
  int restarts = 5;
  double fd_step = 1e-7;
  double rk_rel_tol = 1e-9;
  double rk_abs_tol = 1e-11;
  double rk_max_step = 0.025;
  double dt_grid = 0.1;
  uint64_t seed = 0;
  bool cold_start = false;  // start Newton from zero costates instead of the
                            // analytic warm start
  // Yield-biased extra starts: near-symmetric entries admit several
  // equilibria and the grazing one is rarely the best by total value. Each
  // extra start biases one player's initial velocity costate by +/-
  // start_bias. The returned solution is the converged one with the largest
  // value sum; multiplicity counts distinct converged equilibria.
  int explore_starts = 3;
  double start_bias = 4.0;

  static std::vector<double> geometric_levels(double target, int n_levels = 8,
                                              double first_fraction = 1e-4);
};

/// Open-loop equilibrium by single shooting on the characteristic system with
/// penalty continuation. The unknowns are the 8 initial costates; the
/// residual is the terminal transversality mismatch.
BvpSolution solve_bvp(const GameGeometry& geom, const Vec4& x0, double t0, ThetaPair thetas,
                      const BvpOptions& opts);

/// Penalty-free equilibrium: closed form when no clipping occurs, otherwise a
/// b = 0 shooting solve.
BvpSolution analytic_unconstrained(const GameGeometry& geom, const Vec4& x0, double t0,
                                   const BvpOptions& opts);

struct SupervisedDataset {
  std::vector<TrajectoryBundle> trajectories;
  int requested = 0;
  int converged = 0;
  uint64_t seed = 0;
  uint64_t geometry_hash = 0;

  double convergence_rate() const {
    return requested == 0 ? 0.0 : static_cast<double>(converged) / requested;
  }
  /// 31 records per trajectory per player
  int record_count() const;
};

struct DatasetBox {
  double d_min = 15, d_max = 20;
  double v_min = 18, v_max = 25;
};

/// Equilibrium trajectories from uniform initial states at t = 0, solved per
/// theta pair in the given set. Failures are excluded and counted.
SupervisedDataset generate_dataset(const GameGeometry& geom, const DatasetBox& box, int count,
                                   const std::vector<ThetaPair>& theta_set, const BvpOptions& opts,
                                   uint64_t seed, int jobs = 1);

std::vector<TrajectoryBundle> read_trajectory_csv(std::istream& is);

}  // namespace pno
