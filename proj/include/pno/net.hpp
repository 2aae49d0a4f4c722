#pragma once

#include "pno/common.hpp"

namespace pno {

enum class Activation { Tanh, Sine, Relu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

struct ActivationKind {
  Activation kind = Activation::Tanh;
  bool adaptive = false;  // trainable per-hidden-layer slope multiplier
};

struct NetworkShape {
  int input_dim = 0;
  std::vector<int> hidden_widths;
  int output_dim = 0;

  int layer_count() const { return static_cast<int>(hidden_widths.size()) + 1; }
};

/// Fully-connected net descriptor. Hidden layers apply act(slope * (W z + b)),
/// the output layer is affine. Parameters live in one flat vector; the layout
/// is per layer, in order: W (column-major, out x in), b, then the slope
/// scalar when the layer is hidden and the activation is adaptive.
struct Mlp {
  NetworkShape shape;
  ActivationKind act;

  struct LayerLayout {
    int in = 0, out = 0;
    int w_off = 0, b_off = 0;
    int s_off = -1;  // -1: fixed slope of 1
  };

  Mlp() = default;
  Mlp(NetworkShape s, ActivationKind a);

  int param_count() const { return param_count_; }
  const std::vector<LayerLayout>& layers() const { return layers_; }

 private:
  std::vector<LayerLayout> layers_;
  int param_count_ = 0;
};

/// Scratch buffers for forward/backward sweeps. Reusable across calls.
struct MlpWorkspace {
  std::vector<VectorXd> pre;       // h_l = W z + b per layer
  std::vector<VectorXd> post;      // post[0] = input, post[l+1] = layer output
  std::vector<VectorXd> pre_dot;   // tangent of pre
  std::vector<VectorXd> post_dot;  // tangent of post
  bool has_tangent = false;
};

/// Deterministic scaled-uniform initialization; slopes start at 1.
VectorXd init_network(const Mlp& net, uint64_t seed);

/// Evaluates the net, recording intermediates for later backward sweeps.
const VectorXd& forward(const Mlp& net, Eigen::Ref<const VectorXd> params, const VectorXd& input,
                        MlpWorkspace& ws);

VectorXd forward(const Mlp& net, Eigen::Ref<const VectorXd> params, const VectorXd& input);

/// J^T a for the Jacobian J of forward() at the workspace's recorded input.
VectorXd input_gradient_adjoint(const Mlp& net, Eigen::Ref<const VectorXd> params, const MlpWorkspace& ws,
                                const VectorXd& adjoint);

/// Full Jacobian (output_dim x input_dim), one reverse sweep per row.
MatrixXd input_gradient(const Mlp& net, Eigen::Ref<const VectorXd> params, const VectorXd& input);

/// Accumulates d<adjoint, forward(input)>/dparams into grad (param-length).
void parameter_gradient(const Mlp& net, Eigen::Ref<const VectorXd> params, const MlpWorkspace& ws,
                        const VectorXd& adjoint, Eigen::Ref<VectorXd> grad);

VectorXd parameter_gradient(const Mlp& net, Eigen::Ref<const VectorXd> params, const VectorXd& input,
                            const VectorXd& adjoint);

/// Directional derivative J * dir; records the tangent line in ws for
/// parameter_gradient_tangent.
VectorXd forward_tangent(const Mlp& net, Eigen::Ref<const VectorXd> params, MlpWorkspace& ws,
                         const VectorXd& dir);

/// Accumulates d(<adj_value, N(x)> + <adj_tangent, J(x) dir>)/dparams into grad.
/// ws must hold a forward pass and, when adj_tangent is nonzero, the matching
/// tangent pass.
void parameter_gradient_tangent(const Mlp& net, Eigen::Ref<const VectorXd> params, const MlpWorkspace& ws,
                                const VectorXd& adj_value, const VectorXd& adj_tangent,
                                Eigen::Ref<VectorXd> grad);

struct AdamState {
  VectorXd first_moment;
  VectorXd second_moment;
  long step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  static AdamState make(int n, double lr);
};

struct NonFiniteGradient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// In-place Adam update with bias correction. Throws NonFiniteGradient when
/// grad has non-finite entries.
void optimizer_step(VectorXd& params, const VectorXd& grad, AdamState& state);

}  // namespace pno
