#pragma once

#include "pno/bvp.hpp"
#include "pno/rollout.hpp"

#include <functional>
#include <optional>

namespace pno {

struct LossWeights {
  double c1 = 1, c2 = 1, c3 = 1, c4 = 1, c5 = 1;
  void validate() const;
};

enum class CurriculumMode { Forward, Backward };

struct TrainConfig {
  int pretrain_iters = 2000;
  int train_iters = 60;
  int gradient_steps = 100;
  int rollout_count = 64;     // evolutionary pool capacity / bundles per resample
  int residual_points = 256;  // fresh PDE collocation points per iteration
  int boundary_points = 256;
  int bundle_batch = 256;     // bundle samples per gradient step
  int pretrain_batch = 256;
  double learning_rate = 1e-3;
  double lr_final = 1e-5;  // cosine floor
  int resample_period = 10;
  std::vector<ThetaPair> theta_training = {{1, 1}, {1, 5}, {5, 1}, {5, 5}};
  CurriculumMode curriculum = CurriculumMode::Forward;
  bool hybrid_costate_supervision = true;
  RolloutConfig rollout;
  uint64_t seed = 1;
  int jobs = 1;

  void validate() const;
};

/// Alg-style expanding time window: ((num_epoch + 10) / train_iters) * T,
/// refreshed every 10 epochs, saturating at the horizon. Computed as an
/// integer product followed by a single division so the grid values are
/// correctly rounded.
double curriculum_time_window(int num_epoch, int train_iters, double horizon);

struct SamplePool {
  struct Entry {
    Vec4 x;
    double t = 0;
    int theta_idx = 0;
    double residual = 0;
  };
  std::vector<Entry> entries;
  int capacity = 0;
};

/// Scores every entry, retains those with residual >= the pool mean (ties
/// kept), and refills to capacity with fresh draws.
void evolve_samples(SamplePool& pool,
                    const std::function<double(const SamplePool::Entry&)>& score,
                    const std::function<SamplePool::Entry()>& draw);

/// Read-only view of a value solution, so residuals can be evaluated against
/// either a trained operator or a reference solution.
class ValueQuery {
 public:
  virtual ~ValueQuery() = default;
  virtual double value(int player, const Vec4& x, double t, ThetaPair thetas) const = 0;
  virtual ValueGradientResult value_gradient(int player, const Vec4& x, double t,
                                             ThetaPair thetas) const = 0;
};

class EnsembleQuery : public ValueQuery {
 public:
  explicit EnsembleQuery(const OperatorEnsemble& ens);
  double value(int player, const Vec4& x, double t, ThetaPair thetas) const override;
  ValueGradientResult value_gradient(int player, const Vec4& x, double t,
                                     ThetaPair thetas) const override;
  const ThetaContext& context(ThetaPair thetas) const;

 private:
  const OperatorEnsemble& ens_;
  std::vector<ThetaContext> contexts_;  // all 25 theta pairs
};

/// HJI residual at one point for one player; the fellow control comes from
/// the fellow's value gradient.
double pde_residual(const ValueQuery& q, const GameGeometry& geom, const Vec4& x, double t,
                    ThetaPair thetas, int player);

struct LossBreakdown {
  double total = 0, pde = 0, bc = 0, c2 = 0, c3 = 0, c4 = 0, c5 = 0;
};

struct ResidualPoint {
  Vec4 x;
  double t = 0;
  int theta_idx = 0;
};
struct BoundaryPoint {
  Vec4 x;
  int theta_idx = 0;
};
/// One grid sample of a bundle: targets for both players at (x, t).
struct BundlePoint {
  Vec4 x;
  double t = 0;
  int theta_idx = 0;
  Vec2 value_target = Vec2::Zero();
  Vec4 costate_target[2] = {Vec4::Zero(), Vec4::Zero()};
  bool terminal = false;  // carries the terminal costate anchor
};

std::vector<BundlePoint> flatten_bundles(const std::vector<TrajectoryBundle>& bundles,
                                         const std::vector<ThetaPair>& theta_training);

/// Loss over the given batches; when sink is non-null the parameter gradient
/// is accumulated (bundle targets are constants). Each term is the mean over
/// its own batch of per-player L1 norms.
LossBreakdown pno_loss(const OperatorEnsemble& ens, const std::vector<ThetaContext>& contexts,
                       const std::vector<ResidualPoint>& pde_batch,
                       const std::vector<BoundaryPoint>& boundary_batch,
                       const std::vector<BundlePoint>& bundle_batch, const LossWeights& weights,
                       EnsembleGrad* sink);

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PretrainReport {
  double mean_boundary_error = 0;       // normalized value units, held-out
  double costate_sign_agreement = 0;    // fraction, held-out
  double final_loss = 0;
  int iters = 0;
};

/// Fits value and costate terminal conditions on resampled terminal states.
PretrainReport pretrain(OperatorEnsemble& ens, const TrainConfig& cfg, std::ostream* log);

struct MetricsRow {
  int iter = 0;
  LossBreakdown loss;
  double mean_residual = 0;  // fixed probe set, full horizon
  double window = 0;
};
using MetricsSink = std::function<void(const MetricsRow&)>;

struct TrainReport {
  PretrainReport pretrain;
  double initial_loss = 0, final_loss = 0;
  double initial_probe_residual = 0, final_probe_residual = 0;
  int rollout_failures = 0;
};

TrainReport train_pno(OperatorEnsemble& ens, const TrainConfig& cfg, const LossWeights& weights,
                      const MetricsSink& metrics, std::ostream* log);

/// Supervised baseline: stage 1 regresses values (and value gradients onto
/// costate targets), stage 2 adds PDE/boundary losses over an expanding
/// window anchored at the terminal time. No costate nets, no rollouts.
TrainReport train_hybrid(OperatorEnsemble& ens, const TrainConfig& cfg, const LossWeights& weights,
                         const SupervisedDataset& dataset, const MetricsSink& metrics,
                         std::ostream* log);

}  // namespace pno
