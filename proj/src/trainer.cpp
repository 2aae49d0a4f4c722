#include "pno/trainer.hpp"

#include <cmath>
#include <ostream>

namespace pno {

void LossWeights::validate() const {
  if (c1 < 0 || c2 < 0 || c3 < 0 || c4 < 0 || c5 < 0)
    throw std::invalid_argument("loss weights must be nonnegative");
}

void TrainConfig::validate() const {
  if (pretrain_iters < 0 || train_iters <= 0 || gradient_steps <= 0 || rollout_count <= 0 ||
      residual_points <= 0 || boundary_points <= 0 || bundle_batch <= 0 || pretrain_batch <= 0)
    throw std::invalid_argument("train config counts must be positive");
  if (resample_period <= 0) throw std::invalid_argument("resample period must be positive");
  if (theta_training.empty()) throw std::invalid_argument("training theta set is empty");
  for (const auto& tp : theta_training) tp.validate();
}

double curriculum_time_window(int num_epoch, int train_iters, double horizon) {
  if (num_epoch < 0 || train_iters <= 0) throw std::invalid_argument("bad curriculum counters");
  const int held = num_epoch - num_epoch % 10;  // refreshed every 10 epochs
  const double w = static_cast<double>(held + 10) * horizon / train_iters;
  return std::min(horizon, w);
}

void evolve_samples(SamplePool& pool,
                    const std::function<double(const SamplePool::Entry&)>& score,
                    const std::function<SamplePool::Entry()>& draw) {
  if (static_cast<int>(pool.entries.size()) != pool.capacity)
    throw std::logic_error("evolve_samples: pool must be at capacity");
  double mean = 0;
  for (auto& e : pool.entries) {
    e.residual = std::abs(score(e));
    mean += e.residual;
  }
  mean /= std::max<size_t>(1, pool.entries.size());
  std::vector<SamplePool::Entry> kept;
  kept.reserve(pool.entries.size());
  for (const auto& e : pool.entries)
    if (e.residual >= mean) kept.push_back(e);
  while (static_cast<int>(kept.size()) < pool.capacity) {
    SamplePool::Entry e = draw();
    e.residual = std::abs(score(e));
    kept.push_back(e);
  }
  pool.entries = std::move(kept);
}

EnsembleQuery::EnsembleQuery(const OperatorEnsemble& ens) : ens_(ens) {
  contexts_.reserve(25);
  for (int a = 1; a <= 5; ++a)
    for (int b = 1; b <= 5; ++b) contexts_.push_back(prepare_theta(ens, {a, b}));
}

const ThetaContext& EnsembleQuery::context(ThetaPair thetas) const {
  return contexts_[static_cast<size_t>((thetas.theta1 - 1) * 5 + (thetas.theta2 - 1))];
}

double EnsembleQuery::value(int player, const Vec4& x, double t, ThetaPair thetas) const {
  return op_value(ens_, context(thetas), player, x, t);
}

ValueGradientResult EnsembleQuery::value_gradient(int player, const Vec4& x, double t,
                                                  ThetaPair thetas) const {
  return op_value_gradient(ens_, context(thetas), player, x, t);
}

double pde_residual(const ValueQuery& q, const GameGeometry& geom, const Vec4& x, double t,
                    ThetaPair thetas, int player) {
  const ValueGradientResult own = q.value_gradient(player, x, t, thetas);
  const ValueGradientResult other = q.value_gradient(1 - player, x, t, thetas);
  const double u_other =
      std::clamp(0.5 * other.dx[own_velocity_index(1 - player)], geom.u_min, geom.u_max);
  const Costate lam = own_from_joint(player, own.dx);
  const auto hm = maximize_hamiltonian(geom, lam, x, player, thetas, u_other);
  return own.dt + hm.h_star;
}

std::vector<BundlePoint> flatten_bundles(const std::vector<TrajectoryBundle>& bundles,
                                         const std::vector<ThetaPair>& theta_training) {
  auto theta_index = [&](ThetaPair tp) {
    for (size_t i = 0; i < theta_training.size(); ++i)
      if (theta_training[i] == tp) return static_cast<int>(i);
    throw std::logic_error("bundle theta pair missing from the training set");
  };
  std::vector<BundlePoint> out;
  for (const auto& b : bundles) {
    const int ti = theta_index(b.thetas);
    const int k = b.steps();
    for (int i = 0; i < k; ++i) {
      if (!b.in_bounds[static_cast<size_t>(i)]) continue;
      BundlePoint p;
      p.x = b.states.col(i);
      p.t = b.times[i];
      p.theta_idx = ti;
      p.value_target = Vec2(b.values_bwd(0, i), b.values_bwd(1, i));
      p.costate_target[0] = b.lam_bwd[0].col(i);
      p.costate_target[1] = b.lam_bwd[1].col(i);
      p.terminal = i == k - 1;
      out.push_back(p);
    }
  }
  return out;
}

namespace {

inline double sign_of(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NonFiniteLoss(std::string("non-finite loss term: ") + term);
}

}  // namespace

LossBreakdown pno_loss(const OperatorEnsemble& ens, const std::vector<ThetaContext>& contexts,
                       const std::vector<ResidualPoint>& pde_batch,
                       const std::vector<BoundaryPoint>& boundary_batch,
                       const std::vector<BundlePoint>& bundle_batch, const LossWeights& weights,
                       EnsembleGrad* sink) {
  weights.validate();
  const GameGeometry& geom = ens.geom;
  const double T = geom.horizon;
  const double bc_sign = ens.cfg.sign == SignConvention::Maximizing ? 1.0 : -1.0;
  LossBreakdown out;

  // HJI residual over the collocation batch
  if (!pde_batch.empty()) {
    const double inv_n = 1.0 / static_cast<double>(pde_batch.size());
    for (const auto& pt : pde_batch) {
      const ThetaContext& ctx = contexts[static_cast<size_t>(pt.theta_idx)];
      ValueGradientResult vg[2] = {op_value_gradient(ens, ctx, 0, pt.x, pt.t),
                                   op_value_gradient(ens, ctx, 1, pt.x, pt.t)};
      double u[2], clipped[2];
      for (int p = 0; p < 2; ++p) {
        const double raw = 0.5 * vg[p].dx[own_velocity_index(p)];
        u[p] = std::clamp(raw, geom.u_min, geom.u_max);
        clipped[p] = raw != u[p];
      }
      const Vec4 f(pt.x[1], u[0], pt.x[3], u[1]);
      for (int p = 0; p < 2; ++p) {
        const double r =
            vg[p].dt + vg[p].dx.dot(f) - (u[p] * u[p] + penalty(geom, pt.x, p, ctx.thetas));
        check_finite(r, "pde");
        out.pde += std::abs(r) * inv_n;
        if (sink) {
          const double s = sign_of(r) * inv_n;
          accumulate_value_query(ens, ctx, p, pt.x, pt.t, 0.0, s * f, s, *sink);
          // the fellow's control feeds back through their value gradient
          const int o = 1 - p;
          if (!clipped[o]) {
            Vec4 dgo = Vec4::Zero();
            dgo[own_velocity_index(o)] = s * vg[p].dx[own_velocity_index(o)] * 0.5;
            accumulate_value_query(ens, ctx, o, pt.x, pt.t, 0.0, dgo, 0.0, *sink);
          }
        }
      }
    }
  }

  // terminal boundary residual
  if (!boundary_batch.empty() && weights.c1 > 0) {
    const double inv_n = 1.0 / static_cast<double>(boundary_batch.size());
    for (const auto& pt : boundary_batch) {
      const ThetaContext& ctx = contexts[static_cast<size_t>(pt.theta_idx)];
      for (int p = 0; p < 2; ++p) {
        const double g =
            terminal_loss(geom, pt.x[p == 0 ? 0 : 2], pt.x[p == 0 ? 1 : 3]);
        const double d = op_value(ens, ctx, p, pt.x, T) + bc_sign * g;
        check_finite(d, "boundary");
        out.bc += weights.c1 * std::abs(d) * inv_n;
        if (sink)
          accumulate_value_query(ens, ctx, p, pt.x, T, weights.c1 * sign_of(d) * inv_n,
                                 Vec4::Zero(), 0.0, *sink);
      }
    }
  }

  // rollout-consistency terms
  if (!bundle_batch.empty()) {
    const double inv_n = 1.0 / static_cast<double>(bundle_batch.size());
    int terminal_count = 0;
    for (const auto& pt : bundle_batch) terminal_count += pt.terminal ? 1 : 0;
    const double inv_t = terminal_count > 0 ? 1.0 / terminal_count : 0.0;
    for (const auto& pt : bundle_batch) {
      const ThetaContext& ctx = contexts[static_cast<size_t>(pt.theta_idx)];
      for (int p = 0; p < 2; ++p) {
        const ValueGradientResult vg = op_value_gradient(ens, ctx, p, pt.x, pt.t);
        const double dv = vg.value - pt.value_target[p];
        check_finite(dv, "value consistency");
        out.c2 += weights.c2 * std::abs(dv) * inv_n;
        Vec4 dgrad = Vec4::Zero();
        for (int j = 0; j < 4; ++j) {
          const double dj = vg.dx[j] - pt.costate_target[p][j];
          out.c3 += weights.c3 * std::abs(dj) * inv_n;
          dgrad[j] = weights.c3 * sign_of(dj) * inv_n;
        }
        if (sink)
          accumulate_value_query(ens, ctx, p, pt.x, pt.t, weights.c2 * sign_of(dv) * inv_n, dgrad,
                                 0.0, *sink);

        if (ens.has_costate()) {
          const Vec4 lam = op_costate(ens, ctx, p, pt.x, pt.t);
          Vec4 dc = Vec4::Zero();
          for (int j = 0; j < 4; ++j) {
            const double dj = lam[j] - pt.costate_target[p][j];
            out.c4 += weights.c4 * std::abs(dj) * inv_n;
            dc[j] = weights.c4 * sign_of(dj) * inv_n;
          }
          if (pt.terminal && weights.c5 > 0) {
            const Vec2 tg = terminal_gradient(geom, pt.x[p == 0 ? 0 : 2], pt.x[p == 0 ? 1 : 3]);
            Vec4 target = Vec4::Zero();
            target[p == 0 ? 0 : 2] = -tg[0];
            target[p == 0 ? 1 : 3] = -tg[1];
            for (int j = 0; j < 4; ++j) {
              const double dj = lam[j] - target[j];
              out.c5 += weights.c5 * std::abs(dj) * inv_t;
              dc[j] += weights.c5 * sign_of(dj) * inv_t;
            }
          }
          if (sink && dc.squaredNorm() > 0)
            accumulate_costate_query(ens, ctx, p, pt.x, pt.t, dc, *sink);
        }
      }
    }
  }

  out.total = out.pde + out.bc + out.c2 + out.c3 + out.c4 + out.c5;
  check_finite(out.total, "total");
  return out;
}

namespace {

double cosine_lr(double lr0, double lr1, int step, int total) {
  if (total <= 1) return lr0;
  const double f = 0.5 * (1.0 + std::cos(M_PI * std::min(step, total) / static_cast<double>(total)));
  return lr1 + (lr0 - lr1) * f;
}

Vec4 sample_state(Rng& rng, const RolloutConfig& b) {
  return Vec4(rng.uniform(b.d_min, b.d_max), rng.uniform(b.v_min, b.v_max),
              rng.uniform(b.d_min, b.d_max), rng.uniform(b.v_min, b.v_max));
}

struct DivergenceGuard {
  std::vector<double> window;
  void push(double loss, const char* where) {
    window.push_back(loss);
    if (window.size() > 100) window.erase(window.begin());
    const double lo = *std::min_element(window.begin(), window.end());
    if (window.size() >= 100 && lo > 0 && loss > 10.0 * lo)
      throw TrainingDivergence(std::string("loss diverged during ") + where);
  }
};

}  // namespace

PretrainReport pretrain(OperatorEnsemble& ens, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  const GameGeometry& geom = ens.geom;
  const double T = geom.horizon;
  const double bc_sign = ens.cfg.sign == SignConvention::Maximizing ? 1.0 : -1.0;
  Rng rng(cfg.seed, "pretrain");
  AdamState adam = AdamState::make(ens.param_count(), cfg.learning_rate);
  EnsembleGrad sink(ens);
  DivergenceGuard guard;
  PretrainReport rep;
  rep.iters = cfg.pretrain_iters;

  std::vector<ThetaContext> contexts;
  auto rebuild = [&] {
    contexts.clear();
    for (const auto& tp : cfg.theta_training) contexts.push_back(prepare_theta(ens, tp));
  };
  rebuild();

  for (int it = 0; it < cfg.pretrain_iters; ++it) {
    sink.reset();
    sink.contexts.clear();
    sink.value_branch_adj.clear();
    sink.costate_branch_adj.clear();
    double loss = 0;
    const double inv_n = 1.0 / cfg.pretrain_batch;
    for (int n = 0; n < cfg.pretrain_batch; ++n) {
      const int ti = rng.uniform_int(0, static_cast<int>(cfg.theta_training.size()) - 1);
      const ThetaContext& ctx = contexts[static_cast<size_t>(ti)];
      const Vec4 x = sample_state(rng, cfg.rollout);
      for (int p = 0; p < 2; ++p) {
        const double dpos = x[p == 0 ? 0 : 2], vpos = x[p == 0 ? 1 : 3];
        const double g = terminal_loss(geom, dpos, vpos);
        const double d = op_value(ens, ctx, p, x, T) + bc_sign * g;
        loss += std::abs(d) * inv_n;
        accumulate_value_query(ens, ctx, p, x, T, sign_of(d) * inv_n, Vec4::Zero(), 0.0, sink);
        if (ens.has_costate()) {
          const Vec2 tg = terminal_gradient(geom, dpos, vpos);
          Vec4 target = Vec4::Zero();
          target[p == 0 ? 0 : 2] = -tg[0];
          target[p == 0 ? 1 : 3] = -tg[1];
          const Vec4 lam = op_costate(ens, ctx, p, x, T);
          Vec4 dc;
          for (int j = 0; j < 4; ++j) {
            const double dj = lam[j] - target[j];
            loss += std::abs(dj) * inv_n;
            dc[j] = sign_of(dj) * inv_n;
          }
          accumulate_costate_query(ens, ctx, p, x, T, dc, sink);
        }
      }
    }
    flush_branch_gradients(ens, sink);
    adam.learning_rate = cosine_lr(cfg.learning_rate, cfg.lr_final, it, cfg.pretrain_iters);
    optimizer_step(ens.params, sink.grad, adam);
    rebuild();
    guard.push(loss, "pretraining");
    rep.final_loss = loss;
    if (log && (it % 200 == 0 || it + 1 == cfg.pretrain_iters))
      (*log) << "pretrain iter " << it << " loss " << loss << "\n";
  }

  // held-out evaluation
  Rng hrng(cfg.seed, "pretrain/heldout");
  const int n_eval = 1000;
  double err = 0;
  int sign_ok = 0, sign_total = 0;
  for (int n = 0; n < n_eval; ++n) {
    const int ti = hrng.uniform_int(0, static_cast<int>(cfg.theta_training.size()) - 1);
    const ThetaContext& ctx = contexts[static_cast<size_t>(ti)];
    const Vec4 x = sample_state(hrng, cfg.rollout);
    for (int p = 0; p < 2; ++p) {
      const double dpos = x[p == 0 ? 0 : 2], vpos = x[p == 0 ? 1 : 3];
      const double g = terminal_loss(geom, dpos, vpos);
      err += std::abs(op_value(ens, ctx, p, x, T) + bc_sign * g);
      if (ens.has_costate()) {
        const double lam_v = op_costate(ens, ctx, p, x, T)[own_velocity_index(p)];
        const double want = -2.0 * (vpos - geom.nominal_speed);
        if (std::abs(want) > 1e-6) {
          ++sign_total;
          if (sign_of(lam_v) == sign_of(want)) ++sign_ok;
        }
      }
    }
  }
  rep.mean_boundary_error = err / (2.0 * n_eval) / ens.cfg.norm.value_scale;
  rep.costate_sign_agreement = sign_total > 0 ? static_cast<double>(sign_ok) / sign_total : 1.0;
  return rep;
}

namespace {

double probe_residual(const OperatorEnsemble& ens, const std::vector<ResidualPoint>& probe,
                      const std::vector<ThetaPair>& theta_training) {
  EnsembleQuery q(ens);
  double acc = 0;
  for (const auto& pt : probe) {
    const ThetaPair tp = theta_training[static_cast<size_t>(pt.theta_idx)];
    acc += std::abs(pde_residual(q, ens.geom, pt.x, pt.t, tp, 0));
    acc += std::abs(pde_residual(q, ens.geom, pt.x, pt.t, tp, 1));
  }
  return acc / (2.0 * probe.size());
}

}  // namespace

TrainReport train_pno(OperatorEnsemble& ens, const TrainConfig& cfg, const LossWeights& weights,
                      const MetricsSink& metrics, std::ostream* log) {
  cfg.validate();
  weights.validate();
  if (!ens.has_costate()) throw std::logic_error("train_pno needs costate heads");
  const GameGeometry& geom = ens.geom;
  const double T = geom.horizon;
  TrainReport rep;
  rep.pretrain = pretrain(ens, cfg, log);
  if (log)
    (*log) << "pretrain done: boundary " << rep.pretrain.mean_boundary_error << ", sign "
           << rep.pretrain.costate_sign_agreement << "\n";

  Rng rng(cfg.seed, "train");
  AdamState adam = AdamState::make(ens.param_count(), cfg.learning_rate);
  EnsembleGrad sink(ens);
  DivergenceGuard guard;

  std::vector<ThetaContext> contexts;
  auto rebuild = [&] {
    contexts.clear();
    for (const auto& tp : cfg.theta_training) contexts.push_back(prepare_theta(ens, tp));
  };
  rebuild();

  // fixed probe set over the full horizon for an unbiased residual metric
  std::vector<ResidualPoint> probe;
  {
    Rng prng(cfg.seed, "train/probe");
    for (int i = 0; i < 512; ++i)
      probe.push_back({sample_state(prng, cfg.rollout), prng.uniform(0.0, T),
                       prng.uniform_int(0, static_cast<int>(cfg.theta_training.size()) - 1)});
  }
  rep.initial_probe_residual = probe_residual(ens, probe, cfg.theta_training);

  // grid-aligned rollout start times keep dt compatible with the horizon
  auto draw_entry = [&](double window) {
    SamplePool::Entry e;
    e.x = sample_state(rng, cfg.rollout);
    const int max_k = static_cast<int>(std::floor(std::min(window, T - cfg.rollout.dt_grid) /
                                                  cfg.rollout.dt_grid));
    e.t = cfg.rollout.dt_grid * rng.uniform_int(0, std::max(0, max_k));
    e.theta_idx = rng.uniform_int(0, static_cast<int>(cfg.theta_training.size()) - 1);
    return e;
  };

  SamplePool pool;
  pool.capacity = cfg.rollout_count;
  {
    const double w0 = curriculum_time_window(0, cfg.train_iters, T);
    for (int i = 0; i < pool.capacity; ++i) pool.entries.push_back(draw_entry(w0));
  }

  std::vector<BundlePoint> bundle_points;
  int total_steps = 0;
  for (int iter = 0; iter < cfg.train_iters; ++iter) {
    const int num_epoch = iter;
    const double window = curriculum_time_window(num_epoch, cfg.train_iters, T);

    if (num_epoch % cfg.resample_period == 0) {
      // evolutionary refresh of the rollout seeds, then fresh bundles
      EnsembleQuery q(ens);
      auto score = [&](const SamplePool::Entry& e) {
        const ThetaPair tp = cfg.theta_training[static_cast<size_t>(e.theta_idx)];
        return std::abs(pde_residual(q, geom, e.x, e.t, tp, 0)) +
               std::abs(pde_residual(q, geom, e.x, e.t, tp, 1));
      };
      evolve_samples(pool, score, [&] { return draw_entry(window); });

      std::vector<TrajectoryBundle> bundles;
      std::vector<std::optional<TrajectoryBundle>> slots(pool.entries.size());
      std::vector<int> failures(pool.entries.size(), 0);
      parallel_for(static_cast<int>(pool.entries.size()), cfg.jobs, [&](int i) {
        const auto& e = pool.entries[static_cast<size_t>(i)];
        try {
          auto r = make_bundle(ens, contexts[static_cast<size_t>(e.theta_idx)], e.x, e.t,
                               cfg.rollout);
          slots[static_cast<size_t>(i)] = std::move(r.bundle);
        } catch (const IntegrationError&) {
          failures[static_cast<size_t>(i)] = 1;
        }
      });
      int failed = 0;
      for (size_t i = 0; i < slots.size(); ++i) {
        if (slots[i])
          bundles.push_back(std::move(*slots[i]));
        else
          ++failed;
      }
      rep.rollout_failures += failed;
      if (failed * 2 > static_cast<int>(pool.entries.size()))
        throw TrainingDivergence("more than half of the rollouts failed to integrate");
      if (log && failed > 0) (*log) << "iter " << iter << ": " << failed << " rollouts failed\n";
      bundle_points = flatten_bundles(bundles, cfg.theta_training);
    }

    // fresh collocation and boundary batches for this iteration
    std::vector<ResidualPoint> pde_batch;
    for (int i = 0; i < cfg.residual_points; ++i)
      pde_batch.push_back({sample_state(rng, cfg.rollout), rng.uniform(0.0, window),
                           rng.uniform_int(0, static_cast<int>(cfg.theta_training.size()) - 1)});
    std::vector<BoundaryPoint> bc_batch;
    for (int i = 0; i < cfg.boundary_points; ++i)
      bc_batch.push_back({sample_state(rng, cfg.rollout),
                          rng.uniform_int(0, static_cast<int>(cfg.theta_training.size()) - 1)});

    LossBreakdown last;
    for (int step = 0; step < cfg.gradient_steps; ++step) {
      std::vector<BundlePoint> batch;
      if (!bundle_points.empty()) {
        const int n = std::min<int>(cfg.bundle_batch, static_cast<int>(bundle_points.size()));
        batch.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
          batch.push_back(
              bundle_points[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(bundle_points.size()) - 1))]);
      }
      sink.reset();
      sink.contexts.clear();
      sink.value_branch_adj.clear();
      sink.costate_branch_adj.clear();
      last = pno_loss(ens, contexts, pde_batch, bc_batch, batch, weights, &sink);
      flush_branch_gradients(ens, sink);
      adam.learning_rate =
          cosine_lr(cfg.learning_rate, cfg.lr_final, total_steps, cfg.train_iters * cfg.gradient_steps);
      optimizer_step(ens.params, sink.grad, adam);
      rebuild();
      ++total_steps;
    }
    guard.push(last.total, "training");
    if (iter == 0) rep.initial_loss = last.total;
    rep.final_loss = last.total;

    MetricsRow row;
    row.iter = iter;
    row.loss = last;
    row.mean_residual = probe_residual(ens, probe, cfg.theta_training);
    row.window = window;
    if (iter == 0) rep.initial_probe_residual = std::max(rep.initial_probe_residual, row.mean_residual);
    rep.final_probe_residual = row.mean_residual;
    if (metrics) metrics(row);
    if (log)
      (*log) << "iter " << iter << " loss " << last.total << " probe " << row.mean_residual
             << " window " << window << "\n";
  }
  return rep;
}

TrainReport train_hybrid(OperatorEnsemble& ens, const TrainConfig& cfg, const LossWeights& weights,
                         const SupervisedDataset& dataset, const MetricsSink& metrics,
                         std::ostream* log) {
  cfg.validate();
  weights.validate();
  if (dataset.trajectories.empty()) throw std::invalid_argument("hybrid training needs a dataset");
  const GameGeometry& geom = ens.geom;
  const double T = geom.horizon;
  TrainReport rep;

  // supervised records: bundle grid samples with value/costate targets
  std::vector<BundlePoint> records = flatten_bundles(dataset.trajectories, cfg.theta_training);
  if (records.empty()) throw std::invalid_argument("dataset contains no usable records");

  Rng rng(cfg.seed, "hybrid");
  AdamState adam = AdamState::make(ens.param_count(), cfg.learning_rate);
  EnsembleGrad sink(ens);
  DivergenceGuard guard1, guard2;
  std::vector<ThetaContext> contexts;
  auto rebuild = [&] {
    contexts.clear();
    for (const auto& tp : cfg.theta_training) contexts.push_back(prepare_theta(ens, tp));
  };
  rebuild();

  LossWeights stage1 = weights;  // c2/c3 reused as the supervised weights

  auto supervised_batch = [&](int n) {
    std::vector<BundlePoint> batch;
    batch.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      BundlePoint p = records[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(records.size()) - 1))];
      p.terminal = false;  // no terminal costate anchor without costate nets
      if (!cfg.hybrid_costate_supervision) {
        // value-only supervision: match the gradient targets to the current
        // prediction so the c3 term vanishes
        for (int pl = 0; pl < 2; ++pl)
          p.costate_target[pl] = op_value_gradient(ens, contexts[static_cast<size_t>(p.theta_idx)],
                                                   pl, p.x, p.t)
                                     .dx;
      }
      batch.push_back(p);
    }
    return batch;
  };

  // stage 1: pure regression
  for (int it = 0; it < cfg.pretrain_iters; ++it) {
    sink.reset();
    sink.contexts.clear();
    sink.value_branch_adj.clear();
    sink.costate_branch_adj.clear();
    auto batch = supervised_batch(cfg.pretrain_batch);
    LossBreakdown l = pno_loss(ens, contexts, {}, {}, batch, stage1, &sink);
    flush_branch_gradients(ens, sink);
    adam.learning_rate = cosine_lr(cfg.learning_rate, cfg.lr_final, it, cfg.pretrain_iters);
    optimizer_step(ens.params, sink.grad, adam);
    rebuild();
    guard1.push(l.total, "hybrid stage 1");
    rep.pretrain.final_loss = l.total;
    if (log && it % 200 == 0) (*log) << "hybrid stage1 iter " << it << " loss " << l.total << "\n";
  }
  rep.pretrain.iters = cfg.pretrain_iters;

  std::vector<ResidualPoint> probe;
  {
    Rng prng(cfg.seed, "train/probe");
    for (int i = 0; i < 512; ++i)
      probe.push_back({sample_state(prng, cfg.rollout), prng.uniform(0.0, T),
                       prng.uniform_int(0, static_cast<int>(cfg.theta_training.size()) - 1)});
  }
  rep.initial_probe_residual = probe_residual(ens, probe, cfg.theta_training);

  // stage 2: supervised + physics losses over the expanding window
  AdamState adam2 = AdamState::make(ens.param_count(), cfg.learning_rate);
  int total_steps = 0;
  for (int iter = 0; iter < cfg.train_iters; ++iter) {
    const double w = curriculum_time_window(iter, cfg.train_iters, T);
    const double t_lo = cfg.curriculum == CurriculumMode::Backward ? std::max(0.0, T - w) : 0.0;
    const double t_hi = cfg.curriculum == CurriculumMode::Backward ? T : w;

    std::vector<ResidualPoint> pde_batch;
    for (int i = 0; i < cfg.residual_points; ++i)
      pde_batch.push_back({sample_state(rng, cfg.rollout), rng.uniform(t_lo, t_hi),
                           rng.uniform_int(0, static_cast<int>(cfg.theta_training.size()) - 1)});
    std::vector<BoundaryPoint> bc_batch;
    for (int i = 0; i < cfg.boundary_points; ++i)
      bc_batch.push_back({sample_state(rng, cfg.rollout),
                          rng.uniform_int(0, static_cast<int>(cfg.theta_training.size()) - 1)});

    LossBreakdown last;
    for (int step = 0; step < cfg.gradient_steps; ++step) {
      sink.reset();
      sink.contexts.clear();
      sink.value_branch_adj.clear();
      sink.costate_branch_adj.clear();
      auto batch = supervised_batch(std::min<int>(cfg.bundle_batch, static_cast<int>(records.size())));
      last = pno_loss(ens, contexts, pde_batch, bc_batch, batch, weights, &sink);
      flush_branch_gradients(ens, sink);
      adam2.learning_rate =
          cosine_lr(cfg.learning_rate, cfg.lr_final, total_steps, cfg.train_iters * cfg.gradient_steps);
      optimizer_step(ens.params, sink.grad, adam2);
      rebuild();
      ++total_steps;
    }
    guard2.push(last.total, "hybrid stage 2");
    if (iter == 0) rep.initial_loss = last.total;
    rep.final_loss = last.total;
    MetricsRow row;
    row.iter = iter;
    row.loss = last;
    row.mean_residual = probe_residual(ens, probe, cfg.theta_training);
    row.window = w;
    rep.final_probe_residual = row.mean_residual;
    if (metrics) metrics(row);
    if (log) (*log) << "hybrid iter " << iter << " loss " << last.total << "\n";
  }
  return rep;
}

}  // namespace pno
