#include "pno/bvp.hpp"

#include <cmath>
#include <istream>
#include <map>
#include <sstream>

namespace pno {

AnalyticEval analytic_player(const GameGeometry& g, double d, double v, double t) {
  const double mu = g.terminal_position_weight;
  const double vbar = g.nominal_speed;
  const double tau = g.horizon - t;
  AnalyticEval out;
  // lam_v(T) from the linear terminal coupling, then lam_v(t) = lam_v(T) + mu (T - t)
  const double lam_vT = (-2.0 * (v - vbar) - 0.5 * mu * tau * tau) / (1.0 + tau);
  out.lam_d = mu;
  out.lam_v = lam_vT + mu * tau;
  out.u = 0.5 * out.lam_v;
  const double uT = 0.5 * lam_vT;
  out.clipped = out.u < g.u_min || out.u > g.u_max || uT < g.u_min || uT > g.u_max;

  const double vT = v + 0.5 * lam_vT * tau + 0.25 * mu * tau * tau;
  const double dT = d + v * tau + 0.25 * lam_vT * tau * tau + mu * tau * tau * tau / 6.0;
  const double effort =
      0.25 * (lam_vT * lam_vT * tau + lam_vT * mu * tau * tau + mu * mu * tau * tau * tau / 3.0);
  out.value = -(effort + terminal_loss(g, dT, vT));
  return out;
}

std::vector<double> BvpOptions::geometric_levels(double target, int n_levels, double first_fraction) {
  if (n_levels < 2 || !(target > 0) || !(first_fraction > 0) || first_fraction >= 1.0)
    throw std::invalid_argument("bad continuation schedule parameters");
  std::vector<double> levels;
  levels.push_back(0.0);
  const int m = n_levels - 1;  // nonzero levels
  const double first = target * first_fraction;
  for (int i = 0; i < m; ++i)
    levels.push_back(first * std::pow(target / first, static_cast<double>(i) / (m - 1)));
  levels.back() = target;
  return levels;
}

namespace {

// 12D characteristic field: y = (x, lam1, lam2), costates joint-order.
VectorXd pmp_field(const GameGeometry& g, ThetaPair thetas, double, const VectorXd& y) {
  const Vec4 x = y.head<4>();
  const double u1 = std::clamp(0.5 * y[5], g.u_min, g.u_max);
  const double u2 = std::clamp(0.5 * y[11], g.u_min, g.u_max);
  const Vec2 g1 = penalty_gradient(g, x, 0, thetas);  // (d/d d1, d/d d2) of c1
  const Vec2 g2 = penalty_gradient(g, x, 1, thetas);  // (d/d d2, d/d d1) of c2
  VectorXd d(12);
  d << x[1], u1, x[3], u2,                      // state
      g1[0], -y[4], g1[1], -y[6],               // lam1
      g2[1], -y[8], g2[0], -y[10];              // lam2
  return d;
}

struct ShotResult {
  DenseSolution dense;
  Eigen::Matrix<double, 8, 1> residual;
};

ShotResult shoot(const GameGeometry& g, ThetaPair thetas, const Vec4& x0, double t0,
                 const Eigen::Matrix<double, 8, 1>& z, const BvpOptions& o) {
  VectorXd y0(12);
  y0.head<4>() = x0;
  y0.segment<8>(4) = z;
  ShotResult out;
  out.dense = rk45_integrate([&](double t, const VectorXd& y) { return pmp_field(g, thetas, t, y); },
                             y0, t0, g.horizon,
                             {.rel_tol = o.rk_rel_tol, .abs_tol = o.rk_abs_tol, .max_step = o.rk_max_step});
  const VectorXd& yT = out.dense.y_final_;
  const Vec2 tg1 = terminal_gradient(g, yT[0], yT[1]);
  const Vec2 tg2 = terminal_gradient(g, yT[2], yT[3]);
  out.residual[0] = yT[4] + tg1[0];
  out.residual[1] = yT[5] + tg1[1];
  out.residual[2] = yT[6];
  out.residual[3] = yT[7];
  out.residual[4] = yT[8];
  out.residual[5] = yT[9];
  out.residual[6] = yT[10] + tg2[0];
  out.residual[7] = yT[11] + tg2[1];
  return out;
}

struct NewtonOutcome {
  Eigen::Matrix<double, 8, 1> z;
  double residual = std::numeric_limits<double>::infinity();
  int iters = 0;
  bool converged = false;
  DenseSolution dense;
};

NewtonOutcome newton_solve(const GameGeometry& g, ThetaPair thetas, const Vec4& x0, double t0,
                           Eigen::Matrix<double, 8, 1> z, const BvpOptions& o) {
  NewtonOutcome out;
  ShotResult cur = shoot(g, thetas, x0, t0, z, o);
  double rn = cur.residual.lpNorm<Eigen::Infinity>();
  for (int it = 0; it < o.newton_max_iters; ++it) {
    out.iters = it;
    if (rn <= o.tol) break;
    // forward-difference Jacobian
    Eigen::Matrix<double, 8, 8> jac;
    for (int j = 0; j < 8; ++j) {
      const double h = o.fd_step * std::max(1.0, std::abs(z[j]));
      Eigen::Matrix<double, 8, 1> zp = z;
      zp[j] += h;
      jac.col(j) = (shoot(g, thetas, x0, t0, zp, o).residual - cur.residual) / h;
    }
    const Eigen::Matrix<double, 8, 1> step = jac.colPivHouseholderQr().solve(-cur.residual);
    if (!step.allFinite()) break;
    // backtracking on the residual norm
    double alpha = 1.0;
    bool improved = false;
    const double r2 = cur.residual.norm();
    while (alpha >= 1.0 / 4096.0) {
      ShotResult trial = shoot(g, thetas, x0, t0, z + alpha * step, o);
      if (trial.residual.norm() <= (1.0 - 1e-4 * alpha) * r2) {
        z += alpha * step;
        cur = std::move(trial);
        rn = cur.residual.lpNorm<Eigen::Infinity>();
        improved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!improved) break;  // stagnation
  }
  out.z = z;
  out.residual = rn;
  out.converged = rn <= o.accept_tol;
  out.dense = std::move(cur.dense);
  return out;
}

Eigen::Matrix<double, 8, 1> analytic_guess(const GameGeometry& g, const Vec4& x0, double t0) {
  const AnalyticEval a1 = analytic_player(g, x0[0], x0[1], t0);
  const AnalyticEval a2 = analytic_player(g, x0[2], x0[3], t0);
  Eigen::Matrix<double, 8, 1> z;
  z << a1.lam_d, a1.lam_v, 0, 0, 0, 0, a2.lam_d, a2.lam_v;
  return z;
}

BvpSolution assemble(const GameGeometry& geom, ThetaPair thetas, double t0,
                     const NewtonOutcome& res, const BvpOptions& opts) {
  BvpSolution sol;
  sol.residual_norm = res.residual;
  sol.converged = res.converged;
  sol.dense = res.dense;

  TrajectoryBundle& b = sol.bundle;
  b.thetas = thetas;
  b.times = grid_times(t0, geom.horizon, opts.dt_grid);
  const int k = b.steps();
  MatrixXd all = sol.dense.sample(b.times);
  all.col(k - 1) = sol.dense.y_final_;
  b.states = all.topRows(4);
  b.lam_fwd[0] = all.middleRows(4, 4);
  b.lam_fwd[1] = all.middleRows(8, 4);
  b.lam_bwd[0] = b.lam_fwd[0];
  b.lam_bwd[1] = b.lam_fwd[1];
  b.controls.resize(2, k);
  for (int i = 0; i < k; ++i) {
    b.controls(0, i) = std::clamp(0.5 * b.lam_fwd[0](1, i), geom.u_min, geom.u_max);
    b.controls(1, i) = std::clamp(0.5 * b.lam_fwd[1](3, i), geom.u_min, geom.u_max);
  }
  RolloutConfig rc;
  rc.dt_grid = opts.dt_grid;
  b.in_bounds.assign(static_cast<size_t>(k), 1);
  for (int i = 0; i < k; ++i)
    b.in_bounds[static_cast<size_t>(i)] = state_in_bounds(b.states.col(i), rc) ? 1 : 0;

  auto controls = [&sol, &geom](double t, const Vec4&) {
    const VectorXd y = sol.dense.eval(std::clamp(t, sol.dense.t_begin(), sol.dense.t_end()));
    return Vec2(std::clamp(0.5 * y[5], geom.u_min, geom.u_max),
                std::clamp(0.5 * y[11], geom.u_min, geom.u_max));
  };
  rc.quad_tol = 1e-7;
  b.values_bwd = backward_value(sol.dense, b.states.col(k - 1), controls, thetas, geom, rc,
                                b.times, SignConvention::Maximizing);
  return sol;
}

}  // namespace

namespace {

BvpSolution solve_bvp_one(const GameGeometry& geom, const Vec4& x0, double t0, ThetaPair thetas,
                          const BvpOptions& opts, const Eigen::Matrix<double, 8, 1>& start_bias) {
  thetas.validate();
  std::vector<double> levels = opts.continuation;
  if (levels.empty())
    levels = geom.penalty_scale > 0
                 ? BvpOptions::geometric_levels(geom.penalty_scale)
                 : std::vector<double>{0.0};
  if (std::abs(levels.back() - geom.penalty_scale) > 1e-12 * std::max(1.0, geom.penalty_scale))
    throw std::invalid_argument("continuation schedule must end at the configured penalty scale");

  Eigen::Matrix<double, 8, 1> z =
      opts.cold_start ? Eigen::Matrix<double, 8, 1>::Zero().eval() : analytic_guess(geom, x0, t0);
  z += start_bias;
  Rng rng(derive_seed(opts.seed, "bvp/restarts"));

  BvpSolution sol;
  NewtonOutcome last;
  // worklist in ascending order; a stagnating level gets a midpoint inserted
  // in front of it (adaptive homotopy), bounded by a total attempt budget
  std::vector<double> work(levels.rbegin(), levels.rend());
  double reached = -1.0;
  int attempts = 0;
  const int attempt_budget = 64;
  while (!work.empty() && attempts < attempt_budget) {
    const double level = work.back();
    GameGeometry gl = geom;
    gl.penalty_scale = level;
    ++attempts;
    NewtonOutcome best = newton_solve(gl, thetas, x0, t0, z, opts);
    int restarts_used = 0;
    std::vector<Eigen::Matrix<double, 8, 1>> found;
    if (best.converged) found.push_back(best.z);
    while (!best.converged && restarts_used < opts.restarts) {
      ++restarts_used;
      Eigen::Matrix<double, 8, 1> zr = z;
      for (int i = 0; i < 8; ++i) zr[i] += rng.normal() * (0.5 + 0.5 * std::abs(z[i]));
      NewtonOutcome trial = newton_solve(gl, thetas, x0, t0, zr, opts);
      if (trial.converged) found.push_back(trial.z);
      if (trial.residual < best.residual) best = std::move(trial);
    }
    sol.trace.push_back({level, best.iters, best.residual, restarts_used});
    sol.multiplicity = std::max<int>(sol.multiplicity, static_cast<int>(found.size()));
    if (best.converged) {
      work.pop_back();
      reached = level;
      z = best.z;
      last = std::move(best);
      continue;
    }
    // narrow the homotopy step unless the gap is already tight
    const double base = std::max(reached, 0.0);
    const double mid = base > 0.0 ? std::sqrt(base * level) : 0.5 * level;
    if (mid > base * 1.02 + 1e-9 && mid < level * 0.98) {
      work.push_back(mid);
    } else {
      last = std::move(best);  // genuinely stuck; report the best effort
      break;
    }
  }
  if (!work.empty() && last.dense.segments_.empty()) {
    // budget ran out before any terminal attempt was stored
    GameGeometry gl = geom;
    last = newton_solve(gl, thetas, x0, t0, z, opts);
  }
  if (!work.empty()) last.converged = false;
  BvpSolution out = assemble(geom, thetas, t0, last, opts);
  out.trace = std::move(sol.trace);
  out.multiplicity = sol.multiplicity;
  return out;
}

}  // namespace

BvpSolution solve_bvp(const GameGeometry& geom, const Vec4& x0, double t0, ThetaPair thetas,
                      const BvpOptions& opts) {
  BvpSolution best = solve_bvp_one(geom, x0, t0, thetas, opts, Eigen::Matrix<double, 8, 1>::Zero());
  if (!best.converged || geom.penalty_scale <= 1.0 || opts.explore_starts <= 1) return best;

  // Yield-biased refinements at the full penalty, warm-started from the
  // homotopy solution. Near-simultaneous arrivals admit several equilibria
  // and the continuation tends to land on the grazing one; the asymmetric
  // ones usually carry a larger total value.
  Eigen::Matrix<double, 8, 1> z0;
  z0.segment<4>(0) = best.bundle.lam_fwd[0].col(0);
  z0.segment<4>(4) = best.bundle.lam_fwd[1].col(0);

  auto total_value = [](const BvpSolution& s) {
    return s.bundle.values_bwd(0, 0) + s.bundle.values_bwd(1, 0);
  };
  std::vector<Eigen::Matrix<double, 8, 1>> seen{z0};
  int distinct = 1;
  for (int k = 0; k + 1 < opts.explore_starts; ++k) {
    Eigen::Matrix<double, 8, 1> z = z0;
    const double delta = opts.start_bias * (1 + k / 2);
    if (k % 2 == 0) {
      z[1] -= delta;  // player 1 yields
      z[7] += 0.5 * delta;
    } else {
      z[7] -= delta;  // player 2 yields
      z[1] += 0.5 * delta;
    }
    NewtonOutcome ref = newton_solve(geom, thetas, x0, t0, z, opts);
    if (!ref.converged) continue;
    BvpSolution cand = assemble(geom, thetas, t0, ref, opts);
    Eigen::Matrix<double, 8, 1> zc;
    zc.segment<4>(0) = cand.bundle.lam_fwd[0].col(0);
    zc.segment<4>(4) = cand.bundle.lam_fwd[1].col(0);
    bool is_new = true;
    for (const auto& zs : seen)
      if ((zs - zc).lpNorm<Eigen::Infinity>() <= 1e-5 * (1.0 + zc.lpNorm<Eigen::Infinity>()))
        is_new = false;
    if (is_new) {
      ++distinct;
      seen.push_back(zc);
      if (total_value(cand) > total_value(best)) {
        const auto trace = best.trace;
        best = std::move(cand);
        best.trace = trace;
      }
    }
  }
  best.multiplicity = std::max(best.multiplicity, distinct);
  return best;
}

BvpSolution analytic_unconstrained(const GameGeometry& geom, const Vec4& x0, double t0,
                                   const BvpOptions& opts) {
  GameGeometry g0 = geom;
  g0.penalty_scale = 1e-300;  // effectively off; keeps the geometry valid
  const AnalyticEval a1 = analytic_player(geom, x0[0], x0[1], t0);
  const AnalyticEval a2 = analytic_player(geom, x0[2], x0[3], t0);
  BvpOptions o = opts;
  o.continuation = {1e-300};
  if (a1.clipped || a2.clipped) {
    o.cold_start = false;
    return solve_bvp(g0, x0, t0, {1, 1}, o);
  }
  // single shot from the exact initial costates
  NewtonOutcome res;
  res.z = analytic_guess(geom, x0, t0);
  ShotResult shot = shoot(g0, {1, 1}, x0, t0, res.z, o);
  res.residual = shot.residual.lpNorm<Eigen::Infinity>();
  res.converged = res.residual <= o.accept_tol;
  res.dense = std::move(shot.dense);
  return assemble(g0, {1, 1}, t0, res, o);
}

int SupervisedDataset::record_count() const {
  int n = 0;
  for (const auto& b : trajectories) n += 2 * b.steps();
  return n;
}

SupervisedDataset generate_dataset(const GameGeometry& geom, const DatasetBox& box, int count,
                                   const std::vector<ThetaPair>& theta_set, const BvpOptions& opts,
                                   uint64_t seed, int jobs) {
  if (count <= 0) throw std::invalid_argument("dataset count must be positive");
  if (theta_set.empty()) throw std::invalid_argument("dataset needs at least one theta pair");
  SupervisedDataset ds;
  ds.seed = seed;
  ds.geometry_hash = geom.hash();

  struct Case {
    Vec4 x0;
    ThetaPair thetas;
  };
  std::vector<Case> cases;
  for (const auto& tp : theta_set) {
    Rng rng(derive_seed(seed, "dataset/" + std::to_string(tp.theta1) + "," +
                                  std::to_string(tp.theta2)));
    for (int i = 0; i < count; ++i) {
      Case c;
      c.x0 = Vec4(rng.uniform(box.d_min, box.d_max), rng.uniform(box.v_min, box.v_max),
                  rng.uniform(box.d_min, box.d_max), rng.uniform(box.v_min, box.v_max));
      c.thetas = tp;
      cases.push_back(c);
    }
  }
  ds.requested = static_cast<int>(cases.size());

  std::vector<BvpSolution> sols(cases.size());
  parallel_for(static_cast<int>(cases.size()), jobs, [&](int i) {
    BvpOptions o = opts;
    o.seed = derive_seed(seed, "dataset/case" + std::to_string(i));
    sols[static_cast<size_t>(i)] =
        solve_bvp(geom, cases[static_cast<size_t>(i)].x0, 0.0, cases[static_cast<size_t>(i)].thetas, o);
  });
  for (auto& s : sols) {
    if (s.converged) {
      ds.trajectories.push_back(std::move(s.bundle));
      ++ds.converged;
    }
  }
  return ds;
}

std::vector<TrajectoryBundle> read_trajectory_csv(std::istream& is) {
  std::vector<TrajectoryBundle> out;
  std::string line;
  std::map<long, std::vector<std::array<double, 20>>> rows;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {  // column header
      header_seen = true;
      continue;
    }
    std::array<double, 20> vals{};
    std::istringstream ls(line);
    std::string cell;
    int col = 0;
    long case_id = 0;
    while (std::getline(ls, cell, ',') && col < 21) {
      if (col == 0)
        case_id = std::stol(cell);
      else
        vals[static_cast<size_t>(col - 1)] = std::strtod(cell.c_str(), nullptr);
      ++col;
    }
    if (col != 21) throw std::runtime_error("trajectory CSV: malformed row");
    rows[case_id].push_back(vals);
  }
  for (auto& [id, rs] : rows) {
    TrajectoryBundle b;
    const int k = static_cast<int>(rs.size());
    b.thetas = {static_cast<int>(rs[0][0]), static_cast<int>(rs[0][1])};
    b.times.resize(k);
    b.states.resize(4, k);
    b.controls.resize(2, k);
    b.lam_fwd[0].resize(4, k);
    b.lam_fwd[1].resize(4, k);
    b.lam_bwd[0].resize(4, k);
    b.lam_bwd[1].resize(4, k);
    b.values_bwd.resize(2, k);
    b.in_bounds.assign(static_cast<size_t>(k), 1);
    for (int i = 0; i < k; ++i) {
      const auto& r = rs[static_cast<size_t>(i)];
      b.times[i] = r[2];
      for (int j = 0; j < 4; ++j) b.states(j, i) = r[3 + static_cast<size_t>(j)];
      b.controls(0, i) = r[7];
      b.controls(1, i) = r[8];
      for (int j = 0; j < 4; ++j) {
        b.lam_fwd[0](j, i) = r[9 + static_cast<size_t>(j)];
        b.lam_fwd[1](j, i) = r[13 + static_cast<size_t>(j)];
      }
      b.lam_bwd[0].col(i) = b.lam_fwd[0].col(i);
      b.lam_bwd[1].col(i) = b.lam_fwd[1].col(i);
      b.values_bwd(0, i) = r[17];
      b.values_bwd(1, i) = r[18];
      b.in_bounds[static_cast<size_t>(i)] = r[19] != 0.0 ? 1 : 0;
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace pno
