#include "pno/rollout.hpp"

#include <cmath>
#include <ostream>

namespace pno {

void RolloutConfig::validate(double horizon, double t0) const {
  if (!(dt_grid > 0) || !(rk_rel_tol > 0) || !(rk_abs_tol > 0) || !(quad_tol > 0))
    throw std::invalid_argument("rollout: spacings and tolerances must be positive");
  const double span = horizon - t0;
  const double k = std::round(span / dt_grid);
  if (std::abs(k * dt_grid - span) > 1e-12 * std::max(1.0, std::abs(span)))
    throw std::invalid_argument("rollout: dt_grid must divide the horizon span");
}

VectorXd grid_times(double t0, double horizon, double dt) {
  const int k = static_cast<int>(std::round((horizon - t0) / dt));
  VectorXd times(k + 1);
  for (int i = 0; i <= k; ++i) times[i] = t0 + i * dt;
  times[k] = horizon;  // exact by contract
  return times;
}

bool state_in_bounds(const Vec4& x, const RolloutConfig& cfg) {
  return x[0] >= cfg.d_min && x[0] <= cfg.d_max && x[2] >= cfg.d_min && x[2] <= cfg.d_max &&
         x[1] >= cfg.v_min && x[1] <= cfg.v_max && x[3] >= cfg.v_min && x[3] <= cfg.v_max;
}

RolloutResult forward_rollout(const OperatorEnsemble& ens, const ThetaContext& ctx, const Vec4& x0,
                              double t0, const RolloutConfig& cfg) {
  const double T = ens.geom.horizon;
  cfg.validate(T, t0);
  if (t0 < 0 || t0 >= T) throw std::domain_error("rollout must start inside [0, T)");

  auto field = [&](double t, const VectorXd& y) {
    const Vec4 x(y[0], y[1], y[2], y[3]);
    const double tc = std::clamp(t, 0.0, T);
    const double u1 = op_policy(ens, ctx, PolicySource::CostateNet, 0, x, tc);
    const double u2 = op_policy(ens, ctx, PolicySource::CostateNet, 1, x, tc);
    VectorXd d(4);
    d << y[1], u1, y[3], u2;
    return d;
  };

  RolloutResult out;
  out.dense = rk45_integrate(field, x0, t0, T, {.rel_tol = cfg.rk_rel_tol, .abs_tol = cfg.rk_abs_tol});

  TrajectoryBundle& b = out.bundle;
  b.thetas = ctx.thetas;
  b.times = grid_times(t0, T, cfg.dt_grid);
  const int k = b.steps();
  b.states = out.dense.sample(b.times);
  b.states.col(k - 1) = out.dense.y_final_;
  b.controls.resize(2, k);
  b.lam_fwd[0].resize(4, k);
  b.lam_fwd[1].resize(4, k);
  b.lam_bwd[0] = MatrixXd::Zero(4, k);
  b.lam_bwd[1] = MatrixXd::Zero(4, k);
  b.values_bwd = MatrixXd::Zero(2, k);
  b.in_bounds.assign(static_cast<size_t>(k), 1);
  for (int i = 0; i < k; ++i) {
    const Vec4 x = b.states.col(i);
    const double t = b.times[i];
    for (int p = 0; p < 2; ++p) {
      const Vec4 lam = op_costate(ens, ctx, p, x, t);
      b.lam_fwd[p].col(i) = lam;
      b.controls(p, i) =
          std::clamp(0.5 * lam[own_velocity_index(p)], ens.geom.u_min, ens.geom.u_max);
    }
    b.in_bounds[static_cast<size_t>(i)] = state_in_bounds(x, cfg) ? 1 : 0;
  }
  return out;
}

BackwardCostates backward_costate(const DenseSolution& states, const VectorXd& grid,
                                  const Eigen::Matrix<double, 8, 1>& terminal, ThetaPair thetas,
                                  const GameGeometry& geom, const RolloutConfig& cfg) {
  const double t0 = grid[0];
  const double T = grid[grid.size() - 1];
  auto field = [&](double t, const VectorXd& y) {
    const Vec4 x = states.eval(std::clamp(t, std::min(t0, T), std::max(t0, T))).head<4>();
    const Vec2 g1 = penalty_gradient(geom, x, 0, thetas);  // (d own, d other) = (d1, d2)
    const Vec2 g2 = penalty_gradient(geom, x, 1, thetas);  // (d2, d1)
    VectorXd d(8);
    d[0] = g1[0];
    d[1] = -y[0];
    d[2] = g1[1];
    d[3] = -y[2];
    d[4] = g2[1];
    d[5] = -y[4];
    d[6] = g2[0];
    d[7] = -y[6];
    return d;
  };
  BackwardCostates out;
  out.dense = rk45_integrate(
      field, terminal, T, t0,
      {.rel_tol = cfg.rk_rel_tol, .abs_tol = cfg.rk_abs_tol, .max_step = cfg.rk_max_step});
  MatrixXd all = out.dense.sample(grid);
  out.lam[0] = all.topRows(4);
  out.lam[1] = all.bottomRows(4);
  return out;
}

namespace {

// adaptive Simpson on a two-component integrand
Vec2 simpson(const std::function<Vec2(double)>& f, double a, double b, const Vec2& fa,
             const Vec2& fm, const Vec2& fb, const Vec2& whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const Vec2 flm = f(lm), frm = f(rm);
  const Vec2 left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const Vec2 right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const Vec2 both = left + right;
  const Vec2 err = both - whole;
  if (depth <= 0 || err.cwiseAbs().maxCoeff() <= 15.0 * tol) return both + err / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

Vec2 integrate_segment(const std::function<Vec2(double)>& f, double a, double b, double tol) {
  const Vec2 fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const Vec2 whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson(f, a, b, fa, fm, fb, whole, tol, 24);
}

}  // namespace

MatrixXd backward_value(const DenseSolution& states, const Vec4& x_terminal,
                        const std::function<Vec2(double, const Vec4&)>& controls, ThetaPair thetas,
                        const GameGeometry& geom, const RolloutConfig& cfg, const VectorXd& grid,
                        SignConvention sign) {
  const int k = static_cast<int>(grid.size());
  MatrixXd values(2, k);
  const Vec4& xT = x_terminal;
  const double sgn = sign == SignConvention::Maximizing ? -1.0 : 1.0;
  values(0, k - 1) = sgn * terminal_loss(geom, xT[0], xT[1]);
  values(1, k - 1) = sgn * terminal_loss(geom, xT[2], xT[3]);

  auto running = [&](double s) {
    const Vec4 x = states.eval(s).head<4>();
    const Vec2 u = controls(s, x);
    return Vec2(u[0] * u[0] + penalty(geom, x, 0, thetas),
                u[1] * u[1] + penalty(geom, x, 1, thetas));
  };

  const double per_segment_tol = cfg.quad_tol / std::max(1, k - 1);
  for (int i = k - 2; i >= 0; --i) {
    const Vec2 seg = integrate_segment(running, grid[i], grid[i + 1], per_segment_tol);
    values.col(i) = values.col(i + 1) + sgn * seg;
  }
  return values;
}

RolloutResult make_bundle(const OperatorEnsemble& ens, const ThetaContext& ctx, const Vec4& x0,
                          double t0, const RolloutConfig& cfg) {
  RolloutResult r = forward_rollout(ens, ctx, x0, t0, cfg);
  TrajectoryBundle& b = r.bundle;
  const int k = b.steps();
  const double T = ens.geom.horizon;

  Eigen::Matrix<double, 8, 1> terminal;
  if (cfg.terminal_from_g) {
    const Vec4 xT = b.states.col(k - 1);
    const Vec2 g1 = terminal_gradient(ens.geom, xT[0], xT[1]);
    const Vec2 g2 = terminal_gradient(ens.geom, xT[2], xT[3]);
    terminal << -g1[0], -g1[1], 0, 0, 0, 0, -g2[0], -g2[1];
  } else {
    terminal.segment<4>(0) = b.lam_fwd[0].col(k - 1);
    terminal.segment<4>(4) = b.lam_fwd[1].col(k - 1);
  }
  BackwardCostates bc = backward_costate(r.dense, b.times, terminal, b.thetas, ens.geom, cfg);
  b.lam_bwd[0] = bc.lam[0];
  b.lam_bwd[1] = bc.lam[1];

  auto controls = [&](double t, const Vec4& x) {
    const double tc = std::clamp(t, 0.0, T);
    return Vec2(op_policy(ens, ctx, PolicySource::CostateNet, 0, x, tc),
                op_policy(ens, ctx, PolicySource::CostateNet, 1, x, tc));
  };
  b.values_bwd = backward_value(r.dense, b.states.col(k - 1), controls, b.thetas,
                                ens.geom, cfg, b.times, ens.cfg.sign);
  return r;
}

void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryBundle>& bundles,
                          const GameGeometry& geom, uint64_t config_hash, uint64_t seed) {
  os << "# geometry_hash=" << geom.hash() << " config_hash=" << config_hash << " seed=" << seed
     << "\n";
  os << "# R=" << geom.road_length << " L=" << geom.vehicle_length << " W=" << geom.vehicle_width
     << " gamma=" << geom.sigmoid_gamma << " b=" << geom.penalty_scale << " T=" << geom.horizon
     << "\n";
  os << "case_id,theta1,theta2,t,d1,v1,d2,v2,u1,u2,"
        "lam1_d1,lam1_v1,lam1_d2,lam1_v2,lam2_d1,lam2_v1,lam2_d2,lam2_v2,V1,V2,in_bounds\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf;
  };
  for (size_t c = 0; c < bundles.size(); ++c) {
    const auto& b = bundles[c];
    for (int i = 0; i < b.steps(); ++i) {
      os << c << ',' << b.thetas.theta1 << ',' << b.thetas.theta2 << ',';
      put(b.times[i]);
      for (int j = 0; j < 4; ++j) {
        os << ',';
        put(b.states(j, i));
      }
      os << ',';
      put(b.controls(0, i));
      os << ',';
      put(b.controls(1, i));
      for (int p = 0; p < 2; ++p)
        for (int j = 0; j < 4; ++j) {
          os << ',';
          put(b.lam_fwd[p](j, i));
        }
      os << ',';
      put(b.values_bwd(0, i));
      os << ',';
      put(b.values_bwd(1, i));
      os << ',' << static_cast<int>(b.in_bounds[static_cast<size_t>(i)]) << "\n";
    }
  }
}

}  // namespace pno
