#include "pno/game.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pno {

SignConvention sign_convention_from_string(const std::string& s) {
  if (s == "maximizing") return SignConvention::Maximizing;
  if (s == "printed") return SignConvention::Printed;
  throw std::invalid_argument("unknown sign convention: " + s);
}

std::string to_string(SignConvention c) {
  return c == SignConvention::Maximizing ? "maximizing" : "printed";
}

void GameGeometry::validate() const {
  if (!(u_min < u_max)) throw std::invalid_argument("geometry: u_min must be < u_max");
  if (!(sigmoid_gamma > 0)) throw std::invalid_argument("geometry: gamma must be positive");
  if (!(penalty_scale > 0)) throw std::invalid_argument("geometry: penalty scale must be positive");
  if (!(horizon > 0)) throw std::invalid_argument("geometry: horizon must be positive");
  if (!(road_length > vehicle_length + vehicle_width))
    throw std::invalid_argument("geometry: road must be longer than the vehicle envelope");
}

uint64_t GameGeometry::hash() const {
  std::ostringstream os;
  os.precision(17);
  os << road_length << '|' << vehicle_length << '|' << vehicle_width << '|' << sigmoid_gamma << '|'
     << penalty_scale << '|' << u_min << '|' << u_max << '|' << nominal_speed << '|'
     << terminal_position_weight << '|' << horizon;
  return fnv1a64(os.str());
}

void ThetaPair::validate() const {
  if (theta1 < 1 || theta1 > 5 || theta2 < 1 || theta2 > 5)
    throw std::invalid_argument("theta values must lie in {1..5}");
}

Vec4 joint_from_own(int player, const Costate& c) {
  return player == 0 ? Vec4(c.d_own, c.v_own, c.d_other, c.v_other)
                     : Vec4(c.d_other, c.v_other, c.d_own, c.v_own);
}

Costate own_from_joint(int player, const Vec4& g) {
  Costate c;
  if (player == 0) {
    c.d_own = g[0];
    c.v_own = g[1];
    c.d_other = g[2];
    c.v_other = g[3];
  } else {
    c.d_own = g[2];
    c.v_own = g[3];
    c.d_other = g[0];
    c.v_other = g[1];
  }
  return c;
}

namespace {

// overflow-safe logistic
inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double smooth_zone(const GameGeometry& g, double d, int theta) {
  const double a = logistic(g.sigmoid_gamma * (d - g.zone_lo(theta)));
  const double b = logistic(-g.sigmoid_gamma * (d - g.zone_hi()));
  return a * b;
}

double smooth_zone_deriv(const GameGeometry& g, double d, int theta) {
  const double a = logistic(g.sigmoid_gamma * (d - g.zone_lo(theta)));
  const double b = logistic(-g.sigmoid_gamma * (d - g.zone_hi()));
  const double da = g.sigmoid_gamma * a * (1.0 - a);
  const double db = -g.sigmoid_gamma * b * (1.0 - b);
  return da * b + a * db;
}

double penalty(const GameGeometry& g, const Vec4& x, int player, ThetaPair thetas) {
  const double d_own = player == 0 ? x[0] : x[2];
  const double d_other = player == 0 ? x[2] : x[0];
  return g.penalty_scale * smooth_zone(g, d_own, thetas.of(player)) * smooth_zone(g, d_other, 1);
}

Vec2 penalty_gradient(const GameGeometry& g, const Vec4& x, int player, ThetaPair thetas) {
  const double d_own = player == 0 ? x[0] : x[2];
  const double d_other = player == 0 ? x[2] : x[0];
  const double s_own = smooth_zone(g, d_own, thetas.of(player));
  const double s_other = smooth_zone(g, d_other, 1);
  return Vec2(g.penalty_scale * smooth_zone_deriv(g, d_own, thetas.of(player)) * s_other,
              g.penalty_scale * s_own * smooth_zone_deriv(g, d_other, 1));
}

double terminal_loss(const GameGeometry& g, double d, double v) {
  const double dv = v - g.nominal_speed;
  return -g.terminal_position_weight * d + dv * dv;
}

Vec2 terminal_gradient(const GameGeometry& g, double d, double v) {
  (void)d;
  return Vec2(-g.terminal_position_weight, 2.0 * (v - g.nominal_speed));
}

HamiltonianMax maximize_hamiltonian(const GameGeometry& g, const Costate& lam, const Vec4& x,
                                    int player, ThetaPair thetas, double u_other) {
  HamiltonianMax out;
  out.u_star = std::clamp(0.5 * lam.v_own, g.u_min, g.u_max);
  const double v_own = player == 0 ? x[1] : x[3];
  const double v_other = player == 0 ? x[3] : x[1];
  const double lam_dot_f = lam.d_own * v_own + lam.v_own * out.u_star + lam.d_other * v_other +
                           lam.v_other * u_other;
  out.h_star = lam_dot_f - (out.u_star * out.u_star + penalty(g, x, player, thetas));
  return out;
}

bool collision_indicator(const GameGeometry& g, const Vec4& x, ThetaPair thetas) {
  const double hi = g.zone_hi();
  return x[0] >= g.zone_lo(thetas.theta1) && x[0] <= hi && x[2] >= g.zone_lo(thetas.theta2) &&
         x[2] <= hi;
}

}  // namespace pno
