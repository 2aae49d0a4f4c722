#include "pno/net.hpp"

#include <cmath>

namespace pno {

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "sine") return Activation::Sine;
  if (s == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation: " + s);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Sine: return "sine";
    case Activation::Relu: return "relu";
  }
  return "?";
}

Mlp::Mlp(NetworkShape s, ActivationKind a) : shape(std::move(s)), act(a) {
  if (shape.input_dim <= 0 || shape.output_dim <= 0)
    throw std::invalid_argument("network dimensions must be positive");
  for (int w : shape.hidden_widths)
    if (w <= 0) throw std::invalid_argument("network dimensions must be positive");

  int off = 0;
  int in = shape.input_dim;
  const int n_layers = shape.layer_count();
  layers_.reserve(static_cast<size_t>(n_layers));
  for (int l = 0; l < n_layers; ++l) {
    const bool hidden = l + 1 < n_layers;
    LayerLayout ll;
    ll.in = in;
    ll.out = hidden ? shape.hidden_widths[static_cast<size_t>(l)] : shape.output_dim;
    ll.w_off = off;
    off += ll.in * ll.out;
    ll.b_off = off;
    off += ll.out;
    if (hidden && act.adaptive) {
      ll.s_off = off;
      off += 1;
    }
    layers_.push_back(ll);
    in = ll.out;
  }
  param_count_ = off;
}

namespace {

inline Eigen::Map<const MatrixXd> weight(Eigen::Ref<const VectorXd> p, const Mlp::LayerLayout& l) {
  return {p.data() + l.w_off, l.out, l.in};
}
inline Eigen::Map<const VectorXd> bias(Eigen::Ref<const VectorXd> p, const Mlp::LayerLayout& l) {
  return {p.data() + l.b_off, l.out};
}
inline double slope(Eigen::Ref<const VectorXd> p, const Mlp::LayerLayout& l) {
  return l.s_off >= 0 ? p[l.s_off] : 1.0;
}

// act, act', act'' evaluated from the pre-activation y (and cached output z
// where that is cheaper).
inline double act_value(Activation a, double y) {
  switch (a) {
    case Activation::Tanh: return std::tanh(y);
    case Activation::Sine: return std::sin(y);
    case Activation::Relu: return y > 0.0 ? y : 0.0;
  }
  return 0.0;
}
inline double act_d1(Activation a, double y, double z) {
  switch (a) {
    case Activation::Tanh: return 1.0 - z * z;
    case Activation::Sine: return std::cos(y);
    case Activation::Relu: return y > 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}
inline double act_d2(Activation a, double y, double z) {
  switch (a) {
    case Activation::Tanh: return -2.0 * z * (1.0 - z * z);
    case Activation::Sine: return -z;
    case Activation::Relu: (void)y; return 0.0;
  }
  return 0.0;
}

void ensure_ws(const Mlp& net, MlpWorkspace& ws) {
  const size_t n = net.layers().size();
  if (ws.pre.size() != n) {
    ws.pre.assign(n, VectorXd());
    ws.post.assign(n + 1, VectorXd());
    ws.pre_dot.assign(n, VectorXd());
    ws.post_dot.assign(n + 1, VectorXd());
  }
}

}  // namespace

VectorXd init_network(const Mlp& net, uint64_t seed) {
  Rng rng(seed);
  VectorXd p = VectorXd::Zero(net.param_count());
  const int n_layers = net.shape.layer_count();
  for (int l = 0; l < n_layers; ++l) {
    const auto& ll = net.layers()[static_cast<size_t>(l)];
    double a;
    if (net.act.kind == Activation::Sine) {
      // first layer spans one input period, later layers shrink by the
      // customary frequency factor
      const double omega0 = 30.0;
      a = (l == 0) ? 1.0 / ll.in : std::sqrt(6.0 / ll.in) / omega0;
    } else {
      a = std::sqrt(6.0 / (ll.in + ll.out));
    }
    for (int j = 0; j < ll.in * ll.out; ++j) p[ll.w_off + j] = rng.uniform(-a, a);
    const double ab = 1.0 / std::sqrt(static_cast<double>(ll.in));
    for (int j = 0; j < ll.out; ++j) p[ll.b_off + j] = rng.uniform(-ab, ab);
    if (ll.s_off >= 0) p[ll.s_off] = 1.0;
  }
  return p;
}

const VectorXd& forward(const Mlp& net, Eigen::Ref<const VectorXd> params, const VectorXd& input,
                        MlpWorkspace& ws) {
  if (input.size() != net.shape.input_dim)
    throw std::invalid_argument("forward: input dimension mismatch");
  if (params.size() != net.param_count())
    throw std::invalid_argument("forward: parameter length mismatch");
  ensure_ws(net, ws);
  ws.has_tangent = false;
  ws.post[0] = input;
  const auto& layers = net.layers();
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& ll = layers[l];
    ws.pre[l].noalias() = weight(params, ll) * ws.post[l];
    ws.pre[l] += bias(params, ll);
    const bool hidden = l + 1 < layers.size();
    if (hidden) {
      const double s = slope(params, ll);
      ws.post[l + 1].resize(ll.out);
      for (int j = 0; j < ll.out; ++j)
        ws.post[l + 1][j] = act_value(net.act.kind, s * ws.pre[l][j]);
    } else {
      ws.post[l + 1] = ws.pre[l];
    }
  }
  return ws.post.back();
}

VectorXd forward(const Mlp& net, Eigen::Ref<const VectorXd> params, const VectorXd& input) {
  MlpWorkspace ws;
  return forward(net, params, input, ws);
}

namespace {

// Shared reverse sweep. Either of adj_value / adj_tangent may be null.
// grad (when non-null) is accumulated; input_bar (when non-null) receives
// d<adj_value, z_L>/dinput (value part only).
void reverse_sweep(const Mlp& net, Eigen::Ref<const VectorXd> params, const MlpWorkspace& ws,
                   const VectorXd* adj_value, const VectorXd* adj_tangent, VectorXd* input_bar,
                   double* grad) {
  const auto& layers = net.layers();
  const int L = static_cast<int>(layers.size());
  const bool with_tan = adj_tangent != nullptr;
  if (with_tan && !ws.has_tangent)
    throw std::logic_error("reverse_sweep: tangent adjoint without a tangent pass");

  VectorXd u = adj_value ? *adj_value : VectorXd::Zero(net.shape.output_dim);
  VectorXd ud;
  if (with_tan) ud = *adj_tangent;

  VectorXd bar_h, bar_hd;
  for (int l = L - 1; l >= 0; --l) {
    const auto& ll = layers[static_cast<size_t>(l)];
    const auto lu = static_cast<size_t>(l);
    const bool hidden = l + 1 < L;
    if (!hidden) {
      bar_h = u;
      if (with_tan) bar_hd = ud;
    } else {
      const double s = slope(params, ll);
      bar_h.resize(ll.out);
      if (with_tan) bar_hd.resize(ll.out);
      double gs = 0.0;
      for (int j = 0; j < ll.out; ++j) {
        const double h = ws.pre[lu][j];
        const double y = s * h;
        const double z = ws.post[lu + 1][j];
        const double d1 = act_d1(net.act.kind, y, z);
        double bar_y = u[j] * d1;
        if (with_tan) {
          const double d2 = act_d2(net.act.kind, y, z);
          const double ydot = s * ws.pre_dot[lu][j];
          bar_y += ud[j] * d2 * ydot;
          const double bar_yd = ud[j] * d1;
          bar_hd[j] = s * bar_yd;
          gs += bar_y * h + bar_yd * ws.pre_dot[lu][j];
        } else {
          gs += bar_y * h;
        }
        bar_h[j] = s * bar_y;
      }
      if (grad && ll.s_off >= 0) grad[ll.s_off] += gs;
    }
    if (grad) {
      Eigen::Map<MatrixXd> gw(grad + ll.w_off, ll.out, ll.in);
      gw.noalias() += bar_h * ws.post[lu].transpose();
      if (with_tan) gw.noalias() += bar_hd * ws.post_dot[lu].transpose();
      Eigen::Map<VectorXd>(grad + ll.b_off, ll.out) += bar_h;
    }
    if (l > 0 || input_bar) {
      VectorXd nu = weight(params, ll).transpose() * bar_h;
      if (with_tan) ud = weight(params, ll).transpose() * bar_hd;
      u = std::move(nu);
    }
  }
  if (input_bar) *input_bar = u;
}

}  // namespace

VectorXd input_gradient_adjoint(const Mlp& net, Eigen::Ref<const VectorXd> params, const MlpWorkspace& ws,
                                const VectorXd& adjoint) {
  if (adjoint.size() != net.shape.output_dim)
    throw std::invalid_argument("input_gradient_adjoint: adjoint dimension mismatch");
  VectorXd bar;
  reverse_sweep(net, params, ws, &adjoint, nullptr, &bar, nullptr);
  return bar;
}

MatrixXd input_gradient(const Mlp& net, Eigen::Ref<const VectorXd> params, const VectorXd& input) {
  MlpWorkspace ws;
  forward(net, params, input, ws);
  MatrixXd jac(net.shape.output_dim, net.shape.input_dim);
  VectorXd e = VectorXd::Zero(net.shape.output_dim);
  for (int i = 0; i < net.shape.output_dim; ++i) {
    e[i] = 1.0;
    jac.row(i) = input_gradient_adjoint(net, params, ws, e).transpose();
    e[i] = 0.0;
  }
  return jac;
}

void parameter_gradient(const Mlp& net, Eigen::Ref<const VectorXd> params, const MlpWorkspace& ws,
                        const VectorXd& adjoint, Eigen::Ref<VectorXd> grad) {
  if (adjoint.size() != net.shape.output_dim)
    throw std::invalid_argument("parameter_gradient: adjoint dimension mismatch");
  if (grad.size() != net.param_count()) throw std::invalid_argument("parameter_gradient: bad grad size");
  reverse_sweep(net, params, ws, &adjoint, nullptr, nullptr, grad.data());
}

VectorXd parameter_gradient(const Mlp& net, Eigen::Ref<const VectorXd> params, const VectorXd& input,
                            const VectorXd& adjoint) {
  MlpWorkspace ws;
  forward(net, params, input, ws);
  VectorXd grad = VectorXd::Zero(net.param_count());
  parameter_gradient(net, params, ws, adjoint, grad);
  return grad;
}

VectorXd forward_tangent(const Mlp& net, Eigen::Ref<const VectorXd> params, MlpWorkspace& ws,
                         const VectorXd& dir) {
  if (dir.size() != net.shape.input_dim)
    throw std::invalid_argument("forward_tangent: direction dimension mismatch");
  const auto& layers = net.layers();
  ws.post_dot[0] = dir;
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& ll = layers[l];
    ws.pre_dot[l].noalias() = weight(params, ll) * ws.post_dot[l];
    const bool hidden = l + 1 < layers.size();
    if (hidden) {
      const double s = slope(params, ll);
      ws.post_dot[l + 1].resize(ll.out);
      for (int j = 0; j < ll.out; ++j) {
        const double y = s * ws.pre[l][j];
        const double z = ws.post[l + 1][j];
        ws.post_dot[l + 1][j] = act_d1(net.act.kind, y, z) * s * ws.pre_dot[l][j];
      }
    } else {
      ws.post_dot[l + 1] = ws.pre_dot[l];
    }
  }
  ws.has_tangent = true;
  return ws.post_dot.back();
}

void parameter_gradient_tangent(const Mlp& net, Eigen::Ref<const VectorXd> params, const MlpWorkspace& ws,
                                const VectorXd& adj_value, const VectorXd& adj_tangent,
                                Eigen::Ref<VectorXd> grad) {
  if (grad.size() != net.param_count())
    throw std::invalid_argument("parameter_gradient_tangent: bad grad size");
  reverse_sweep(net, params, ws, &adj_value, &adj_tangent, nullptr, grad.data());
}

AdamState AdamState::make(int n, double lr) {
  AdamState s;
  s.first_moment = VectorXd::Zero(n);
  s.second_moment = VectorXd::Zero(n);
  s.learning_rate = lr;
  return s;
}

void optimizer_step(VectorXd& params, const VectorXd& grad, AdamState& state) {
  if (grad.size() != params.size())
    throw std::invalid_argument("optimizer_step: gradient length mismatch");
  if (!grad.allFinite()) throw NonFiniteGradient("optimizer_step: non-finite gradient entries");
  state.step_count += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
  state.second_moment =
      state.beta2 * state.second_moment.array().matrix() + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  const double lr = state.learning_rate;
  params.array() -= lr * (state.first_moment.array() / bc1) /
                    ((state.second_moment.array() / bc2).sqrt() + state.epsilon);
}

}  // namespace pno
