#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pno/net.hpp"

#include <cmath>

using namespace pno;

namespace {

// Straight-line layer recursion, written independently of the library's
// autodiff bookkeeping. Slope-free on purpose: used both as the forward
// oracle and for the adaptive=false bit-identity check.
VectorXd plain_eval(const NetworkShape& shape, Activation act, const VectorXd& p,
                    const VectorXd& x) {
  VectorXd z = x;
  int off = 0;
  int in = shape.input_dim;
  const int n_layers = static_cast<int>(shape.hidden_widths.size()) + 1;
  for (int l = 0; l < n_layers; ++l) {
    const bool hidden = l + 1 < n_layers;
    const int out = hidden ? shape.hidden_widths[static_cast<size_t>(l)] : shape.output_dim;
    VectorXd h(out);
    for (int r = 0; r < out; ++r) {
      double acc = 0.0;
      for (int c = 0; c < in; ++c) acc += p[off + c * out + r] * z[c];
      h[r] = acc;
    }
    off += in * out;
    for (int r = 0; r < out; ++r) h[r] += p[off + r];
    off += out;
    if (hidden) {
      for (int r = 0; r < out; ++r) {
        switch (act) {
          case Activation::Tanh: h[r] = std::tanh(h[r]); break;
          case Activation::Sine: h[r] = std::sin(h[r]); break;
          case Activation::Relu: h[r] = h[r] > 0 ? h[r] : 0.0; break;
        }
      }
    }
    z = h;
    in = out;
  }
  return z;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("init is deterministic and counts parameters") {
  Mlp net({2, {2}, 1}, {Activation::Tanh, false});
  VectorXd p1 = init_network(net, 7);
  VectorXd p2 = init_network(net, 7);
  CHECK(p1.size() == 2 * 2 + 2 + 2 * 1 + 1);
  for (int i = 0; i < p1.size(); ++i) CHECK(p1[i] == p2[i]);

  Mlp big({5, {64, 64, 64}, 1}, {Activation::Tanh, false});
  CHECK(big.param_count() == 5 * 64 + 64 + 2 * (64 * 64 + 64) + 64 * 1 + 1);
  Mlp biga({5, {64, 64, 64}, 1}, {Activation::Tanh, true});
  CHECK(biga.param_count() == big.param_count() + 3);

  CHECK_THROWS_AS(Mlp({0, {4}, 1}, {}), std::invalid_argument);
  CHECK_THROWS_AS(Mlp({2, {0}, 1}, {}), std::invalid_argument);
}

TEST_CASE("no hidden layers behaves as a single affine map") {
  Mlp net({3, {}, 2}, {Activation::Tanh, false});
  VectorXd p = init_network(net, 3);
  VectorXd x(3);
  x << 0.3, -0.7, 0.1;
  VectorXd y = forward(net, p, x);
  Eigen::Map<const MatrixXd> w(p.data(), 2, 3);
  VectorXd expect = w * x + p.segment(6, 2);
  CHECK((y - expect).norm() == 0.0);
}

TEST_CASE("forward matches an independent layer recursion") {
  for (auto act : {Activation::Tanh, Activation::Sine, Activation::Relu}) {
    Mlp net({3, {8, 5, 6}, 2}, {act, false});
    VectorXd p = init_network(net, 11);
    Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
      VectorXd x(3);
      for (int i = 0; i < 3; ++i) x[i] = rng.uniform(-1, 1);
      VectorXd a = forward(net, p, x);
      VectorXd b = plain_eval(net.shape, act, p, x);
      CHECK((a - b).lpNorm<Eigen::Infinity>() == 0.0);
    }
  }
}

TEST_CASE("adaptive nets with unit slopes reproduce the plain activation bit-exactly") {
  NetworkShape shape{4, {6, 6}, 3};
  Mlp adaptive(shape, {Activation::Tanh, true});
  Mlp plain(shape, {Activation::Tanh, false});
  VectorXd pp = init_network(plain, 21);
  // splice plain params into the adaptive layout with slopes = 1
  VectorXd pa = VectorXd::Zero(adaptive.param_count());
  int src = 0;
  for (const auto& ll : adaptive.layers()) {
    const int block = ll.in * ll.out + ll.out;
    pa.segment(ll.w_off, block) = pp.segment(src, block);
    src += block;
    if (ll.s_off >= 0) pa[ll.s_off] = 1.0;
  }
  Rng rng(5);
  VectorXd x(4);
  for (int i = 0; i < 4; ++i) x[i] = rng.uniform(-1, 1);
  VectorXd ya = forward(adaptive, pa, x);
  VectorXd yb = plain_eval(shape, Activation::Tanh, pp, x);
  for (int i = 0; i < 3; ++i) CHECK(ya[i] == yb[i]);
}

TEST_CASE("zero weights give zero output; identity affine layer passes input through") {
  Mlp net({3, {4}, 3}, {Activation::Tanh, false});
  VectorXd p = VectorXd::Zero(net.param_count());
  VectorXd x(3);
  x << 1.0, 2.0, 3.0;
  CHECK(forward(net, p, x).norm() == 0.0);

  Mlp aff({3, {}, 3}, {Activation::Tanh, false});
  VectorXd pa = VectorXd::Zero(aff.param_count());
  pa[0] = pa[4] = pa[8] = 1.0;  // identity, column-major
  VectorXd y = forward(aff, pa, x);
  CHECK((y - x).norm() == 0.0);
}

TEST_CASE("input gradient of an affine layer is the weight matrix") {
  Mlp aff({3, {}, 2}, {Activation::Tanh, false});
  VectorXd p = init_network(aff, 17);
  VectorXd x(3);
  x << 0.2, -0.4, 0.9;
  MatrixXd jac = input_gradient(aff, p, x);
  Eigen::Map<const MatrixXd> w(p.data(), 2, 3);
  CHECK((jac - w).lpNorm<Eigen::Infinity>() == 0.0);

  VectorXd pz = VectorXd::Zero(aff.param_count());
  CHECK(input_gradient(aff, pz, x).norm() == 0.0);
}

TEST_CASE("input gradient matches central finite differences") {
  for (auto kind : {Activation::Tanh, Activation::Sine}) {
    for (bool adaptive : {false, true}) {
      Mlp net({4, {16, 16, 16}, 3}, {kind, adaptive});
      VectorXd p = init_network(net, 31);
      if (adaptive) {
        // move slopes off 1 so the slope path is exercised
        for (const auto& ll : net.layers())
          if (ll.s_off >= 0) p[ll.s_off] = 1.3;
      }
      Rng rng(7);
      VectorXd x(4);
      for (int i = 0; i < 4; ++i) x[i] = rng.uniform(-1, 1);
      MatrixXd jac = input_gradient(net, p, x);
      const double h = 1e-6;
      for (int c = 0; c < 4; ++c) {
        VectorXd xp = x, xm = x;
        xp[c] += h;
        xm[c] -= h;
        VectorXd fd = (forward(net, p, xp) - forward(net, p, xm)) / (2 * h);
        for (int r = 0; r < 3; ++r) CHECK(rel_err(jac(r, c), fd[r]) <= 1e-6);
      }
    }
  }
}

TEST_CASE("parameter gradient: zero adjoint, affine case, finite differences") {
  Mlp aff({3, {}, 2}, {Activation::Tanh, false});
  VectorXd p = init_network(aff, 9);
  VectorXd x(3);
  x << 0.5, -0.1, 0.8;
  VectorXd zero = VectorXd::Zero(2);
  CHECK(parameter_gradient(aff, p, x, zero).norm() == 0.0);

  VectorXd e1 = VectorXd::Zero(2);
  e1[0] = 1.0;
  VectorXd g = parameter_gradient(aff, p, x, e1);
  // weight block gradient = e1 (x)ᵀ laid out column-major, bias gradient = e1
  for (int c = 0; c < 3; ++c) {
    CHECK(g[c * 2 + 0] == x[c]);
    CHECK(g[c * 2 + 1] == 0.0);
  }
  CHECK(g[6] == 1.0);
  CHECK(g[7] == 0.0);

  Mlp net({3, {12, 12}, 2}, {Activation::Tanh, true});
  VectorXd pn = init_network(net, 13);
  Rng rng(3);
  VectorXd xn(3), adj(2);
  for (int i = 0; i < 3; ++i) xn[i] = rng.uniform(-1, 1);
  for (int i = 0; i < 2; ++i) adj[i] = rng.uniform(-1, 1);
  VectorXd gn = parameter_gradient(net, pn, xn, adj);
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const int k = rng.uniform_int(0, static_cast<int>(pn.size()) - 1);
    VectorXd pp = pn, pm = pn;
    pp[k] += h;
    pm[k] -= h;
    const double fd = (adj.dot(forward(net, pp, xn)) - adj.dot(forward(net, pm, xn))) / (2 * h);
    CHECK(rel_err(gn[k], fd) <= 1e-6);
  }
}

TEST_CASE("forward is reproducible bit-exactly") {
  Mlp net({2, {8, 8}, 1}, {Activation::Sine, true});
  VectorXd p = init_network(net, 77);
  VectorXd x(2);
  x << 0.123456, -0.654321;
  const double a = forward(net, p, x)[0];
  for (int i = 0; i < 5; ++i) CHECK(forward(net, p, x)[0] == a);
}

TEST_CASE("adam: zero gradient and zero learning rate leave parameters unchanged") {
  VectorXd p(3);
  p << 1.0, -2.0, 3.0;
  AdamState st = AdamState::make(3, 1e-2);
  VectorXd p0 = p;
  optimizer_step(p, VectorXd::Zero(3), st);
  CHECK((p - p0).norm() == 0.0);
  CHECK(st.step_count == 1);

  AdamState st0 = AdamState::make(3, 0.0);
  VectorXd g(3);
  g << 1.0, 2.0, 3.0;
  optimizer_step(p, g, st0);
  CHECK((p - p0).norm() == 0.0);
  CHECK(st0.first_moment.norm() > 0.0);
}

TEST_CASE("adam: constant gradient step size approaches lr * sign(g)") {
  // scalar recurrence iterated numerically, then compared with the library
  const double lr = 1e-3, g = -4.2;
  VectorXd p(1);
  p << 0.0;
  AdamState st = AdamState::make(1, lr);
  double prev = p[0];
  double step = 0.0;
  for (int i = 0; i < 500; ++i) {
    VectorXd gv(1);
    gv << g;
    optimizer_step(p, gv, st);
    step = p[0] - prev;
    prev = p[0];
  }
  CHECK(std::abs(step - lr * (g > 0 ? -1.0 : 1.0)) <= 1e-6);

  // independent scalar recurrence
  double m = 0, v = 0, x = 0, xprev = 0, dstep = 0;
  for (int t = 1; t <= 500; ++t) {
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    xprev = x;
    x -= lr * mh / (std::sqrt(vh) + 1e-8);
    dstep = x - xprev;
  }
  CHECK(std::abs(step - dstep) <= 1e-15);
}

TEST_CASE("adam rejects non-finite gradients") {
  VectorXd p(2);
  p << 1.0, 1.0;
  AdamState st = AdamState::make(2, 1e-3);
  VectorXd g(2);
  g << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(optimizer_step(p, g, st), NonFiniteGradient);
}

TEST_CASE("dimension mismatches are rejected") {
  Mlp net({3, {4}, 2}, {Activation::Tanh, false});
  VectorXd p = init_network(net, 1);
  VectorXd bad(2);
  bad << 1, 2;
  CHECK_THROWS_AS(forward(net, p, bad), std::invalid_argument);
  VectorXd x(3);
  x << 1, 2, 3;
  VectorXd bad_adj(3);
  bad_adj << 1, 2, 3;
  CHECK_THROWS_AS(parameter_gradient(net, p, x, bad_adj), std::invalid_argument);
}
