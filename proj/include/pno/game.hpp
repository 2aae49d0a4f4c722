#pragma once

#include "pno/common.hpp"

namespace pno {

// Value sign convention. Maximizing: the learned value is the negated payoff,
// so the terminal target is -g and the Hamiltonian is maximized. Printed
// keeps the +g terminal residual for A/B comparison; everything else is
// unchanged.
enum class SignConvention { Maximizing, Printed };

SignConvention sign_convention_from_string(const std::string& s);
std::string to_string(SignConvention c);

/// Physical and penalty constants of the two-vehicle intersection game.
/// Joint state is x = (d1, v1, d2, v2): position along each road [m] and
/// speed [m/s]; controls are longitudinal accelerations.
struct GameGeometry {
  double road_length = 70.0;             // R
  double vehicle_length = 3.0;           // L
  double vehicle_width = 1.5;            // W
  double sigmoid_gamma = 5.0;            // roll-off sharpness of the zone penalty
  double penalty_scale = 1e4;            // b
  double u_min = -5.0;                   // [m/s^2]
  double u_max = 10.0;
  double nominal_speed = 18.0;           // target speed at the horizon
  double terminal_position_weight = 1e-6;  // mu
  double horizon = 3.0;                  // T [s]

  void validate() const;

  // theta-scaled collision interval along one road; theta in {1..5}
  double zone_lo(int theta) const {
    return 0.5 * road_length - 0.5 * theta * vehicle_width;
  }
  double zone_hi() const {
    return 0.5 * (road_length + vehicle_width) + vehicle_length;
  }

  uint64_t hash() const;
};

/// Aggressiveness pair; each entry scales how wide the owner considers the
/// collision zone for their own position.
struct ThetaPair {
  int theta1 = 1;
  int theta2 = 1;

  int of(int player) const { return player == 0 ? theta1 : theta2; }
  bool operator==(const ThetaPair&) const = default;
  void validate() const;
};

/// One player's value gradient with respect to the joint state, stored
/// own-state-first: (d_own, v_own, d_other, v_other).
struct Costate {
  double d_own = 0, v_own = 0, d_other = 0, v_other = 0;
};

// Conversions between own-first costates and joint-order (d1,v1,d2,v2)
// 4-vectors. player is 0-based.
Vec4 joint_from_own(int player, const Costate& c);
Costate own_from_joint(int player, const Vec4& g);

inline int own_velocity_index(int player) { return player == 0 ? 1 : 3; }

/// ẋ = (v1, u1, v2, u2)
inline Vec4 dynamics(const Vec4& x, double u1, double u2) {
  return Vec4(x[1], u1, x[3], u2);
}

/// Two-sided logistic bump in (0,1): ~1 inside the theta-scaled zone, ~0 away
/// from it.
double smooth_zone(const GameGeometry& g, double d, int theta);
double smooth_zone_deriv(const GameGeometry& g, double d, int theta);

/// State penalty of one player (0-based). Depends on positions only.
double penalty(const GameGeometry& g, const Vec4& x, int player, ThetaPair thetas);

/// (d penalty / d d_own, d penalty / d d_other); velocity derivatives vanish.
Vec2 penalty_gradient(const GameGeometry& g, const Vec4& x, int player, ThetaPair thetas);

/// Terminal loss on a player's own (d, v): -mu d + (v - nominal)^2.
double terminal_loss(const GameGeometry& g, double d, double v);
Vec2 terminal_gradient(const GameGeometry& g, double d, double v);

struct HamiltonianMax {
  double u_star = 0;
  double h_star = 0;
};

/// Maximizes lam . f - (u^2 + c) over the player's own control; the fellow
/// control enters f as supplied. Stage loss is quadratic so the argmax is
/// clip(lam.v_own / 2).
HamiltonianMax maximize_hamiltonian(const GameGeometry& g, const Costate& lam, const Vec4& x,
                                    int player, ThetaPair thetas, double u_other);

/// 1 iff both positions lie in their theta-scaled interval simultaneously
/// (closed on both ends).
bool collision_indicator(const GameGeometry& g, const Vec4& x, ThetaPair thetas);

}  // namespace pno
