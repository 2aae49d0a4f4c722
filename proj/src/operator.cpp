#include "pno/operator.hpp"

#include <cmath>

namespace pno {

Vec4 LatticeSpec::node(int n) const {
  auto lin = [](double lo, double hi, int i, int res) {
    return res == 1 ? lo : lo + (hi - lo) * i / (res - 1);
  };
  if (!full_state) {
    const int i1 = n / resolution;
    const int i2 = n % resolution;
    const double vmid = 0.5 * (v_min + v_max);
    return Vec4(lin(d_min, d_max, i1, resolution), vmid, lin(d_min, d_max, i2, resolution), vmid);
  }
  const int r = resolution, rv = v_resolution;
  int rest = n;
  const int i4 = rest % rv;
  rest /= rv;
  const int i3 = rest % r;
  rest /= r;
  const int i2 = rest % rv;
  rest /= rv;
  const int i1 = rest;
  return Vec4(lin(d_min, d_max, i1, r), lin(v_min, v_max, i2, rv), lin(d_min, d_max, i3, r),
              lin(v_min, v_max, i4, rv));
}

VectorXd encode_theta(const LatticeSpec& lattice, ThetaPair thetas, const GameGeometry& geom) {
  thetas.validate();
  VectorXd bits(lattice.node_count());
  for (int n = 0; n < bits.size(); ++n)
    bits[n] = collision_indicator(geom, lattice.node(n), thetas) ? 1.0 : 0.0;
  return bits;
}

Vec5 Normalization::normalize(const Vec4& x, double t) const {
  Vec5 z;
  z[0] = 2.0 * (x[0] - d_min) / (d_max - d_min) - 1.0;
  z[1] = 2.0 * (x[1] - v_min) / (v_max - v_min) - 1.0;
  z[2] = 2.0 * (x[2] - d_min) / (d_max - d_min) - 1.0;
  z[3] = 2.0 * (x[3] - v_min) / (v_max - v_min) - 1.0;
  z[4] = 2.0 * t / t_max - 1.0;
  return z;
}

void Normalization::denormalize(const Vec5& z, Vec4& x, double& t) const {
  x[0] = d_min + 0.5 * (z[0] + 1.0) * (d_max - d_min);
  x[1] = v_min + 0.5 * (z[1] + 1.0) * (v_max - v_min);
  x[2] = d_min + 0.5 * (z[2] + 1.0) * (d_max - d_min);
  x[3] = v_min + 0.5 * (z[3] + 1.0) * (v_max - v_min);
  t = 0.5 * (z[4] + 1.0) * t_max;
}

Vec5 Normalization::scales() const {
  Vec5 s;
  s[0] = s[2] = 2.0 / (d_max - d_min);
  s[1] = s[3] = 2.0 / (v_max - v_min);
  s[4] = 2.0 / t_max;
  return s;
}

Normalization Normalization::from_geometry(const GameGeometry& g, double d_min, double d_max,
                                           double v_min, double v_max) {
  Normalization n;
  n.d_min = d_min;
  n.d_max = d_max;
  n.v_min = v_min;
  n.v_max = v_max;
  n.t_max = g.horizon;
  const double dv = std::max(std::abs(v_min - g.nominal_speed), std::abs(v_max - g.nominal_speed));
  n.value_scale = dv * dv + g.terminal_position_weight * d_max;
  return n;
}

namespace {

OperatorHead make_head(const OperatorConfig& cfg, int out_dim) {
  OperatorHead h;
  h.out_dim = out_dim;
  h.q = cfg.basis_count;
  h.branch = Mlp({cfg.lattice.node_count(), cfg.hidden_widths, out_dim * cfg.basis_count}, cfg.act);
  h.trunk = Mlp({5, cfg.hidden_widths, out_dim * cfg.basis_count}, cfg.act);
  return h;
}

void check_time(const OperatorEnsemble& ens, double t) {
  const double tol = 1e-9 * (1.0 + ens.geom.horizon);
  if (t < -tol || t > ens.geom.horizon + tol)
    throw std::domain_error("operator query outside the game horizon");
}

}  // namespace

OperatorEnsemble make_ensemble(const GameGeometry& geom, const OperatorConfig& cfg) {
  geom.validate();
  if (cfg.basis_count <= 0) throw std::invalid_argument("basis_count must be positive");
  OperatorEnsemble ens;
  ens.geom = geom;
  ens.cfg = cfg;

  int off = 0;
  std::vector<std::pair<OperatorHead*, std::string>> heads;
  for (int p = 0; p < 2; ++p) {
    ens.value_head[p] = make_head(cfg, 1);
    if (cfg.with_costate) ens.costate_head[p] = make_head(cfg, 4);
  }
  std::vector<VectorXd> blocks;
  auto place = [&](OperatorHead& h, const std::string& tag) {
    h.branch_offset = off;
    off += h.branch.param_count();
    h.trunk_offset = off;
    off += h.trunk.param_count();
    blocks.push_back(init_network(h.branch, derive_seed(cfg.seed, tag + "/branch")));
    blocks.push_back(init_network(h.trunk, derive_seed(cfg.seed, tag + "/trunk")));
  };
  for (int p = 0; p < 2; ++p) {
    place(ens.value_head[p], "player" + std::to_string(p) + "/value");
    if (cfg.with_costate) place(ens.costate_head[p], "player" + std::to_string(p) + "/costate");
  }
  ens.params.resize(off);
  int pos = 0;
  for (const auto& b : blocks) {
    ens.params.segment(pos, b.size()) = b;
    pos += static_cast<int>(b.size());
  }
  return ens;
}

ThetaContext prepare_theta(const OperatorEnsemble& ens, ThetaPair thetas) {
  ThetaContext ctx;
  ctx.thetas = thetas;
  ctx.bits = encode_theta(ens.cfg.lattice, thetas, ens.geom);
  for (int p = 0; p < 2; ++p) {
    const auto& vh = ens.value_head[p];
    ctx.value_coeff[p] = forward(vh.branch, ens.params.segment(vh.branch_offset, vh.branch.param_count()),
                                 ctx.bits, ctx.value_branch_ws[p]);
    if (ens.has_costate()) {
      const auto& ch = ens.costate_head[p];
      ctx.costate_coeff[p] =
          forward(ch.branch, ens.params.segment(ch.branch_offset, ch.branch.param_count()),
                  ctx.bits, ctx.costate_branch_ws[p]);
    }
  }
  return ctx;
}

double op_value(const OperatorEnsemble& ens, const ThetaContext& ctx, int player, const Vec4& x,
                double t) {
  check_time(ens, t);
  const auto& h = ens.value_head[player];
  const Vec5 z = ens.cfg.norm.normalize(x, t);
  thread_local MlpWorkspace ws;
  const VectorXd& trunk =
      forward(h.trunk, ens.params.segment(h.trunk_offset, h.trunk.param_count()), z, ws);
  return ctx.value_coeff[player].dot(trunk);
}

ValueGradientResult op_value_gradient(const OperatorEnsemble& ens, const ThetaContext& ctx,
                                      int player, const Vec4& x, double t) {
  check_time(ens, t);
  const auto& h = ens.value_head[player];
  const Vec5 z = ens.cfg.norm.normalize(x, t);
  thread_local MlpWorkspace ws;
  const auto trunk_params = ens.params.segment(h.trunk_offset, h.trunk.param_count());
  const VectorXd& trunk = forward(h.trunk, trunk_params, z, ws);
  ValueGradientResult out;
  out.value = ctx.value_coeff[player].dot(trunk);
  VectorXd bar = input_gradient_adjoint(h.trunk, trunk_params, ws, ctx.value_coeff[player]);
  const Vec5 s = ens.cfg.norm.scales();
  for (int i = 0; i < 4; ++i) out.dx[i] = bar[i] * s[i];
  out.dt = bar[4] * s[4];
  return out;
}

Vec4 op_costate(const OperatorEnsemble& ens, const ThetaContext& ctx, int player, const Vec4& x,
                double t) {
  check_time(ens, t);
  if (!ens.has_costate()) throw std::logic_error("ensemble has no costate heads");
  const auto& h = ens.costate_head[player];
  const Vec5 z = ens.cfg.norm.normalize(x, t);
  thread_local MlpWorkspace ws;
  const VectorXd& trunk =
      forward(h.trunk, ens.params.segment(h.trunk_offset, h.trunk.param_count()), z, ws);
  Vec4 lam;
  for (int c = 0; c < 4; ++c)
    lam[c] = ctx.costate_coeff[player].segment(c * h.q, h.q).dot(trunk.segment(c * h.q, h.q));
  return lam;
}

double op_policy(const OperatorEnsemble& ens, const ThetaContext& ctx, PolicySource source,
                 int player, const Vec4& x, double t) {
  const Vec4 lam = source == PolicySource::ValueGradient
                       ? Vec4(op_value_gradient(ens, ctx, player, x, t).dx)
                       : op_costate(ens, ctx, player, x, t);
  return std::clamp(0.5 * lam[own_velocity_index(player)], ens.geom.u_min, ens.geom.u_max);
}

double op_value(const OperatorEnsemble& ens, ThetaPair thetas, int player, const Vec4& x,
                double t) {
  return op_value(ens, prepare_theta(ens, thetas), player, x, t);
}
ValueGradientResult op_value_gradient(const OperatorEnsemble& ens, ThetaPair thetas, int player,
                                      const Vec4& x, double t) {
  return op_value_gradient(ens, prepare_theta(ens, thetas), player, x, t);
}
Vec4 op_costate(const OperatorEnsemble& ens, ThetaPair thetas, int player, const Vec4& x,
                double t) {
  return op_costate(ens, prepare_theta(ens, thetas), player, x, t);
}

namespace {
inline Eigen::Ref<VectorXd> gtrunk_of(EnsembleGrad& sink, const OperatorHead& h) {
  return sink.grad.segment(h.trunk_offset, h.trunk.param_count());
}
}  // namespace

EnsembleGrad::EnsembleGrad(const OperatorEnsemble& ens) { grad = VectorXd::Zero(ens.param_count()); }

void EnsembleGrad::reset() {
  grad.setZero();
  for (auto& a : value_branch_adj)
    for (auto& v : a) v.setZero();
  for (auto& a : costate_branch_adj)
    for (auto& v : a) v.setZero();
}

int EnsembleGrad::context_slot(const ThetaContext& ctx) {
  for (size_t i = 0; i < contexts.size(); ++i)
    if (contexts[i] == &ctx) return static_cast<int>(i);
  contexts.push_back(&ctx);
  value_branch_adj.push_back({VectorXd::Zero(ctx.value_coeff[0].size()),
                              VectorXd::Zero(ctx.value_coeff[1].size())});
  const int cs = static_cast<int>(ctx.costate_coeff[0].size());
  costate_branch_adj.push_back({VectorXd::Zero(std::max(cs, 1)), VectorXd::Zero(std::max(cs, 1))});
  return static_cast<int>(contexts.size()) - 1;
}

void accumulate_value_query(const OperatorEnsemble& ens, const ThetaContext& ctx, int player,
                            const Vec4& x, double t, double d_value, const Vec4& d_grad_x,
                            double d_grad_t, EnsembleGrad& sink) {
  const auto& h = ens.value_head[player];
  const Vec5 z = ens.cfg.norm.normalize(x, t);
  const auto trunk_params = ens.params.segment(h.trunk_offset, h.trunk.param_count());
  MlpWorkspace& ws = sink.value_ws;
  const VectorXd& trunk = forward(h.trunk, trunk_params, z, ws);

  const Vec5 s = ens.cfg.norm.scales();
  Vec5 w;
  for (int i = 0; i < 4; ++i) w[i] = d_grad_x[i] * s[i];
  w[4] = d_grad_t * s[4];
  const bool with_grad = w.squaredNorm() > 0.0;

  const int slot = sink.context_slot(ctx);
  VectorXd& badj = sink.value_branch_adj[static_cast<size_t>(slot)][static_cast<size_t>(player)];
  auto gtrunk = sink.grad.segment(h.trunk_offset, h.trunk.param_count());

  sink.scratch_adj = d_value * ctx.value_coeff[player];
  if (with_grad) {
    badj += forward_tangent(h.trunk, trunk_params, ws, w);
    parameter_gradient_tangent(h.trunk, trunk_params, ws, sink.scratch_adj,
                               ctx.value_coeff[player], gtrunk);
    badj += d_value * trunk;
  } else {
    parameter_gradient(h.trunk, trunk_params, ws, sink.scratch_adj, gtrunk);
    badj += d_value * trunk;
  }
}

void accumulate_costate_query(const OperatorEnsemble& ens, const ThetaContext& ctx, int player,
                              const Vec4& x, double t, const Vec4& d_costate, EnsembleGrad& sink) {
  const auto& h = ens.costate_head[player];
  const Vec5 z = ens.cfg.norm.normalize(x, t);
  const auto trunk_params = ens.params.segment(h.trunk_offset, h.trunk.param_count());
  MlpWorkspace& ws = sink.costate_ws;
  const VectorXd& trunk = forward(h.trunk, trunk_params, z, ws);

  const int q = h.q;
  VectorXd& u = sink.scratch_adj;
  u.resize(4 * q);
  const int slot = sink.context_slot(ctx);
  VectorXd& badj = sink.costate_branch_adj[static_cast<size_t>(slot)][static_cast<size_t>(player)];
  for (int c = 0; c < 4; ++c) {
    u.segment(c * q, q) = d_costate[c] * ctx.costate_coeff[player].segment(c * q, q);
    badj.segment(c * q, q) += d_costate[c] * trunk.segment(c * q, q);
  }
  parameter_gradient(h.trunk, trunk_params, ws, u, gtrunk_of(sink, h));
}

void flush_branch_gradients(const OperatorEnsemble& ens, EnsembleGrad& sink) {
  for (size_t slot = 0; slot < sink.contexts.size(); ++slot) {
    const ThetaContext& ctx = *sink.contexts[slot];
    for (int p = 0; p < 2; ++p) {
      const VectorXd& vadj = sink.value_branch_adj[slot][static_cast<size_t>(p)];
      if (vadj.squaredNorm() > 0.0) {
        const auto& h = ens.value_head[p];
        parameter_gradient(h.branch, ens.params.segment(h.branch_offset, h.branch.param_count()),
                           ctx.value_branch_ws[p], vadj,
                           sink.grad.segment(h.branch_offset, h.branch.param_count()));
      }
      if (ens.has_costate()) {
        const VectorXd& cadj = sink.costate_branch_adj[slot][static_cast<size_t>(p)];
        if (cadj.size() == ens.costate_head[p].branch.shape.output_dim && cadj.squaredNorm() > 0.0) {
          const auto& h = ens.costate_head[p];
          parameter_gradient(h.branch, ens.params.segment(h.branch_offset, h.branch.param_count()),
                             ctx.costate_branch_ws[p], cadj,
                             sink.grad.segment(h.branch_offset, h.branch.param_count()));
        }
      }
    }
    sink.value_branch_adj[slot][0].setZero();
    sink.value_branch_adj[slot][1].setZero();
    if (sink.costate_branch_adj[slot][0].size()) sink.costate_branch_adj[slot][0].setZero();
    if (sink.costate_branch_adj[slot][1].size()) sink.costate_branch_adj[slot][1].setZero();
  }
}

}  // namespace pno
