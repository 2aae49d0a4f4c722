#pragma once

#include "pno/game.hpp"
#include "pno/net.hpp"

namespace pno {

/// Node lattice feeding the branch nets. Positions-only by default: the
/// constraint encoding depends on (d1, d2) alone, which keeps the branch
/// input compact. Node ordering is row-major with d1 outermost (and, for the
/// full-state variant, nested d1, v1, d2, v2).
struct LatticeSpec {
  double d_min = 15.0, d_max = 105.0;
  int resolution = 31;  // per position axis
  bool full_state = false;
  double v_min = 15.0, v_max = 32.0;
  int v_resolution = 7;  // per velocity axis when full_state

  int node_count() const {
    const int r = resolution;
    return full_state ? r * v_resolution * r * v_resolution : r * r;
  }
  Vec4 node(int n) const;
};

/// Constraint bits a(X, theta) over the lattice, one bit per node.
VectorXd encode_theta(const LatticeSpec& lattice, ThetaPair thetas, const GameGeometry& geom);

/// Affine map of raw (d1, v1, d2, v2, t) into [-1, 1]^5 for trunk and costate
/// inputs, plus the value magnitude used to report normalized errors.
struct Normalization {
  double d_min = 15.0, d_max = 105.0;
  double v_min = 15.0, v_max = 32.0;
  double t_max = 3.0;
  double value_scale = 196.0;

  Vec5 normalize(const Vec4& x, double t) const;
  void denormalize(const Vec5& z, Vec4& x, double& t) const;
  /// diagonal of the raw -> normalized Jacobian
  Vec5 scales() const;

  static Normalization from_geometry(const GameGeometry& g, double d_min, double d_max,
                                     double v_min, double v_max);
};

enum class PolicySource { ValueGradient, CostateNet };

struct OperatorConfig {
  std::vector<int> hidden_widths = {64, 64, 64};
  ActivationKind act{Activation::Tanh, true};
  int basis_count = 64;  // q
  LatticeSpec lattice;
  Normalization norm;
  SignConvention sign = SignConvention::Maximizing;
  bool with_costate = true;
  uint64_t seed = 1;
};

/// One branch/trunk pair producing an out_dim-vector through grouped inner
/// products: output[c] = sum_k branch[c*q + k] * trunk[c*q + k].
struct OperatorHead {
  Mlp branch;  // bits -> out_dim * q
  Mlp trunk;   // normalized (x, t) -> out_dim * q
  int out_dim = 1;
  int q = 64;
  int branch_offset = 0;  // into the ensemble parameter vector
  int trunk_offset = 0;
};

/// Per-player value and costate operators sharing one flat parameter vector.
/// Parameter order: player 1 value branch, value trunk, costate branch,
/// costate trunk, then player 2. Evaluation is const and thread-safe.
struct OperatorEnsemble {
  GameGeometry geom;
  OperatorConfig cfg;
  OperatorHead value_head[2];
  OperatorHead costate_head[2];
  VectorXd params;
  uint64_t config_hash = 0;  // provenance echo, carried into the checkpoint

  int param_count() const { return static_cast<int>(params.size()); }
  bool has_costate() const { return cfg.with_costate; }
};

OperatorEnsemble make_ensemble(const GameGeometry& geom, const OperatorConfig& cfg);

/// Branch evaluations for one theta pair; reusable across queries and
/// rebuilt after every parameter update during training.
struct ThetaContext {
  ThetaPair thetas;
  VectorXd bits;
  VectorXd value_coeff[2];    // q
  VectorXd costate_coeff[2];  // 4q
  MlpWorkspace value_branch_ws[2];
  MlpWorkspace costate_branch_ws[2];
};

ThetaContext prepare_theta(const OperatorEnsemble& ens, ThetaPair thetas);

struct ValueGradientResult {
  Vec4 dx = Vec4::Zero();  // raw units, joint order
  double dt = 0.0;
  double value = 0.0;
};

double op_value(const OperatorEnsemble& ens, const ThetaContext& ctx, int player, const Vec4& x,
                double t);
ValueGradientResult op_value_gradient(const OperatorEnsemble& ens, const ThetaContext& ctx,
                                      int player, const Vec4& x, double t);
/// joint-order costate prediction
Vec4 op_costate(const OperatorEnsemble& ens, const ThetaContext& ctx, int player, const Vec4& x,
                double t);
double op_policy(const OperatorEnsemble& ens, const ThetaContext& ctx, PolicySource source,
                 int player, const Vec4& x, double t);

// convenience (builds the context per call)
double op_value(const OperatorEnsemble& ens, ThetaPair thetas, int player, const Vec4& x, double t);
ValueGradientResult op_value_gradient(const OperatorEnsemble& ens, ThetaPair thetas, int player,
                                      const Vec4& x, double t);
Vec4 op_costate(const OperatorEnsemble& ens, ThetaPair thetas, int player, const Vec4& x, double t);

// ---- training support ----------------------------------------------------

/// Parameter-gradient accumulator. Branch adjoints are buffered per theta
/// context and flushed in one backward pass per head, since branch inputs are
/// shared by every query under the same theta pair.
struct EnsembleGrad {
  VectorXd grad;
  std::vector<const ThetaContext*> contexts;
  std::vector<std::array<VectorXd, 2>> value_branch_adj;    // per context, per player
  std::vector<std::array<VectorXd, 2>> costate_branch_adj;  // per context, per player
  // reused scratch
  MlpWorkspace value_ws, costate_ws;
  VectorXd scratch_adj;

  explicit EnsembleGrad(const OperatorEnsemble& ens);
  void reset();
  int context_slot(const ThetaContext& ctx);
};

/// Accumulates dL/dparams for one value-head query given the loss cotangents
/// on the value, its raw-space state gradient, and its time derivative.
void accumulate_value_query(const OperatorEnsemble& ens, const ThetaContext& ctx, int player,
                            const Vec4& x, double t, double d_value, const Vec4& d_grad_x,
                            double d_grad_t, EnsembleGrad& sink);

/// Same for a costate-head query with cotangent on the joint-order output.
void accumulate_costate_query(const OperatorEnsemble& ens, const ThetaContext& ctx, int player,
                              const Vec4& x, double t, const Vec4& d_costate, EnsembleGrad& sink);

/// Runs the buffered branch backward passes; call once per gradient step.
void flush_branch_gradients(const OperatorEnsemble& ens, EnsembleGrad& sink);

}  // namespace pno
