#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pno/rk45.hpp"

#include <cmath>

using namespace pno;

TEST_CASE("zero field gives an exactly constant trajectory") {
  VectorXd y0(3);
  y0 << 1.0, -2.0, 0.5;
  auto sol = rk45_integrate([](double, const VectorXd& y) { return VectorXd::Zero(y.size()); }, y0,
                            0.0, 2.0);
  CHECK((sol.y_final_ - y0).norm() == 0.0);
  CHECK((sol.eval(1.234) - y0).norm() == 0.0);
}

TEST_CASE("exponential growth hits e within 1e-8") {
  VectorXd y0(1);
  y0 << 1.0;
  auto sol = rk45_integrate([](double, const VectorXd& y) { return y; }, y0, 0.0, 1.0,
                            {.rel_tol = 1e-10, .abs_tol = 1e-12});
  CHECK(std::abs(sol.y_final_[0] - std::exp(1.0)) <= 1e-8);

  // dense output between nodes
  for (double t = 0.05; t < 1.0; t += 0.117)
    CHECK(std::abs(sol.eval(t)[0] - std::exp(t)) <= 1e-8);
}

TEST_CASE("backward span reverses a constant-field forward result") {
  VectorXd y0(2);
  y0 << 0.0, 1.0;
  VectorXd c(2);
  c << 0.7, -0.3;
  auto fwd = rk45_integrate([&](double, const VectorXd&) { return c; }, y0, 0.0, 3.0);
  auto bwd = rk45_integrate([&](double, const VectorXd&) { return c; }, fwd.y_final_, 3.0, 0.0);
  CHECK((bwd.y_final_ - y0).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK((bwd.eval(1.5) - fwd.eval(1.5)).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("halving tolerances moves the answer by less than the coarse tolerance") {
  VectorXd y0(2);
  y0 << 1.0, 0.0;
  // stiff-free oscillator
  auto f = [](double, const VectorXd& y) {
    VectorXd d(2);
    d << y[1], -y[0];
    return d;
  };
  Rk45Options coarse{.rel_tol = 1e-6, .abs_tol = 1e-8};
  Rk45Options fine{.rel_tol = 5e-7, .abs_tol = 5e-9};
  auto a = rk45_integrate(f, y0, 0.0, 10.0, coarse);
  auto b = rk45_integrate(f, y0, 0.0, 10.0, fine);
  CHECK((a.y_final_ - b.y_final_).lpNorm<Eigen::Infinity>() < 1e-6 * 10);
}

TEST_CASE("finite-time blow-up raises an integration failure with the failure time") {
  VectorXd y0(1);
  y0 << 10.0;  // dy/dt = y^2 blows up at t = 0.1
  bool threw = false;
  try {
    rk45_integrate([](double, const VectorXd& y) { return VectorXd(y.cwiseProduct(y)); }, y0, 0.0,
                   1.0, {.max_steps = 100000});
  } catch (const IntegrationError& e) {
    threw = true;
    CHECK(e.t_fail <= 0.11);
    CHECK(e.t_fail >= 0.0);
  }
  CHECK(threw);
}

TEST_CASE("sampling a grid matches pointwise evaluation") {
  VectorXd y0(1);
  y0 << 1.0;
  auto sol = rk45_integrate([](double t, const VectorXd&) { VectorXd d(1); d << std::cos(t); return d; },
                            y0, 0.0, 3.0, {.rel_tol = 1e-9, .abs_tol = 1e-11});
  VectorXd times(4);
  times << 0.0, 1.0, 2.0, 3.0;
  MatrixXd s = sol.sample(times);
  for (int i = 0; i < 4; ++i) {
    CHECK(s(0, i) == sol.eval(times[i])[0]);
    CHECK(std::abs(s(0, i) - (1.0 + std::sin(times[i]))) <= 1e-7);
  }
}
