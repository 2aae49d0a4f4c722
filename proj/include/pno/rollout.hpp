#pragma once

#include "pno/operator.hpp"
#include "pno/rk45.hpp"

#include <iosfwd>

namespace pno {

struct RolloutConfig {
  double dt_grid = 0.1;  // output spacing [s]
  double rk_rel_tol = 1e-6;
  double rk_abs_tol = 1e-8;
  // step cap for integrations forced by the penalty gradient; the zone
  // roll-off is narrow in time and an uncapped controller can stride past it
  double rk_max_step = 0.025;
  // state box for loss masking, (d, v) per player
  double d_min = 15.0, d_max = 105.0;
  double v_min = 15.0, v_max = 32.0;
  bool terminal_from_g = false;  // backward costates start from -grad g instead of the net
  double quad_tol = 1e-7;        // absolute tolerance of the running-cost quadrature

  void validate(double horizon, double t0) const;
};

/// One characteristic rollout on the shared output grid. Costates are stored
/// joint-order (d1, v1, d2, v2) per player.
struct TrajectoryBundle {
  VectorXd times;
  MatrixXd states;      // 4 x K
  MatrixXd controls;    // 2 x K
  MatrixXd lam_fwd[2];  // 4 x K
  MatrixXd lam_bwd[2];  // 4 x K
  MatrixXd values_bwd;  // 2 x K
  ThetaPair thetas;
  std::vector<char> in_bounds;

  int steps() const { return static_cast<int>(times.size()); }
};

VectorXd grid_times(double t0, double horizon, double dt);

bool state_in_bounds(const Vec4& x, const RolloutConfig& cfg);

struct RolloutResult {
  TrajectoryBundle bundle;
  DenseSolution dense;  // 4D state trajectory over [t0, T]
};

/// Closed-loop states under the costate-net policy, with forward costates
/// sampled from the net along the realized path. The net is re-queried at
/// every integrator stage.
RolloutResult forward_rollout(const OperatorEnsemble& ens, const ThetaContext& ctx, const Vec4& x0,
                              double t0, const RolloutConfig& cfg);

/// Backward costate integration along frozen states for both players
/// (8D stacked system): lam_d' = dc/dd, lam_v' = -lam_d. terminal is the
/// 8-vector (player 1 joint-order costate, then player 2) at T.
struct BackwardCostates {
  MatrixXd lam[2];       // 4 x K on the grid
  DenseSolution dense;   // 8D, for round-trip diagnostics
};
BackwardCostates backward_costate(const DenseSolution& states, const VectorXd& grid,
                                  const Eigen::Matrix<double, 8, 1>& terminal, ThetaPair thetas,
                                  const GameGeometry& geom, const RolloutConfig& cfg);

/// Cost-to-go values on the grid by adaptive quadrature of the running cost
/// along the dense states, with controls supplied per time. Under the
/// maximizing convention V(t) = -(integral of (l + c) + terminal loss).
MatrixXd backward_value(const DenseSolution& states, const Vec4& x_terminal,
                        const std::function<Vec2(double, const Vec4&)>& controls, ThetaPair thetas,
                        const GameGeometry& geom, const RolloutConfig& cfg, const VectorXd& grid,
                        SignConvention sign);

/// forward_rollout + backward passes, ready for loss assembly.
RolloutResult make_bundle(const OperatorEnsemble& ens, const ThetaContext& ctx, const Vec4& x0,
                          double t0, const RolloutConfig& cfg);

/// Shared trajectory CSV schema:
/// case_id,t,d1,v1,d2,v2,u1,u2,lam1_d1,...,lam2_v2,V1,V2,in_bounds
void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryBundle>& bundles,
                          const GameGeometry& geom, uint64_t config_hash, uint64_t seed);

}  // namespace pno
