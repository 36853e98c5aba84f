#pragma once

// Ground-truth plants. The quadrotor is a translational triple-integrator
// with quadratic air-relative drag, a first-order actuation lag standing in
// for the attitude loop, and per-axis acceleration saturation from the
// thrust-to-weight ratio. The command u is a net acceleration about hover
// (u = 0 keeps a hovering vehicle at rest). The ground vehicle is a unicycle
// towing the landing deck with a vertical tag plate.

#include <algorithm>
#include <cmath>

#include "perch/core.hpp"
#include "perch/unicycle.hpp"

namespace perch::plant {

inline constexpr double kGravity = 9.81;  // m/s^2, used for the thrust bound

struct QuadrotorParams {
  double mass_kg = 0.564;
  double true_drag_c = 0.05;       // 1/m, quadratic drag coefficient
  double true_gain_b = 1.0;        // m/s^2 per unit command
  double thrust_to_weight = 1.75;
  double tau_att_s = 0.15;         // actuation lag; 0 means instantaneous
  double tau_yaw_s = 0.3;          // yaw slew lag

  double max_accel() const { return (thrust_to_weight - 1.0) * kGravity; }

  void validate() const {
    if (mass_kg <= 0.0) throw ConfigError("quad mass must be > 0");
    if (true_gain_b <= 0.0) throw ConfigError("quad gain b must be > 0");
    if (true_drag_c < 0.0) throw ConfigError("quad drag c must be >= 0");
    if (thrust_to_weight <= 1.0) throw ConfigError("thrust-to-weight must exceed 1");
    if (tau_att_s < 0.0 || tau_yaw_s < 0.0) throw ConfigError("lag constants must be >= 0");
  }
};

struct QuadrotorTruth {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 achieved_accel = Vec3::Zero();  // actuation-lag state
  double yaw = 0.0;
  QuadrotorParams params;
};

struct PlatformTruth {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double speed_cmd = 0.0;      // v_p, m/s
  double yaw_rate_cmd = 0.0;   // rad/s
  double deck_height = 0.8;    // m, tag center height above ground
  double tag_offset_back = 0.0;  // m, tag plane behind deck center
};

namespace detail {

inline Vec3 drag_accel(const Vec3& velocity, const Vec3& wind_vel, double c) {
  const Vec3 v_rel = velocity - wind_vel;  // air-relative velocity
  return -c * v_rel.norm() * v_rel;
}

struct QuadDeriv {
  Vec3 dpos, dvel, dacc;
};

inline QuadDeriv quad_deriv(const Vec3& vel, const Vec3& acc,
                            const Vec3& acc_target, const Vec3& wind_vel,
                            double c, double tau_att) {
  QuadDeriv d;
  d.dpos = vel;
  d.dvel = drag_accel(vel, wind_vel, c) + acc;
  d.dacc = tau_att > 0.0 ? Vec3((acc_target - acc) / tau_att) : Vec3::Zero();
  return d;
}

}  // namespace detail

/// RK4 step of the quadrotor translational dynamics under a held command u
/// and a wind velocity assumed constant over the step.
inline QuadrotorTruth step_quadrotor(QuadrotorTruth state, const Vec3& command_u,
                                     const Vec3& wind_vel, double dt) {
  if (!(dt > 0.0 && dt <= 0.01)) throw SimFault("plant step dt out of (0, 0.01]");
  if (!is_finite(command_u) || !is_finite(wind_vel) || !is_finite(state.position) ||
      !is_finite(state.velocity) || !is_finite(state.achieved_accel))
    throw SimFault("NaN in quadrotor step inputs");

  const QuadrotorParams& p = state.params;
  const double a_lim = p.max_accel();
  const Vec3 target =
      (p.true_gain_b * command_u).cwiseMax(-a_lim).cwiseMin(a_lim);

  if (p.tau_att_s <= 0.0) state.achieved_accel = target;

  const auto f = [&](const Vec3& vel, const Vec3& acc) {
    return detail::quad_deriv(vel, acc, target, wind_vel, p.true_drag_c,
                              p.tau_att_s);
  };

  const Vec3 v0 = state.velocity, a0 = state.achieved_accel;
  const auto k1 = f(v0, a0);
  const auto k2 = f(v0 + 0.5 * dt * k1.dvel, a0 + 0.5 * dt * k1.dacc);
  const auto k3 = f(v0 + 0.5 * dt * k2.dvel, a0 + 0.5 * dt * k2.dacc);
  const auto k4 = f(v0 + dt * k3.dvel, a0 + dt * k3.dacc);

  state.position += dt / 6.0 * (k1.dpos + 2.0 * k2.dpos + 2.0 * k3.dpos + k4.dpos);
  state.velocity = v0 + dt / 6.0 * (k1.dvel + 2.0 * k2.dvel + 2.0 * k3.dvel + k4.dvel);
  state.achieved_accel =
      (a0 + dt / 6.0 * (k1.dacc + 2.0 * k2.dacc + 2.0 * k3.dacc + k4.dacc))
          .cwiseMax(-a_lim)
          .cwiseMin(a_lim);
  return state;
}

/// First-order yaw slew toward a commanded heading (exact discretization).
inline QuadrotorTruth slew_yaw(QuadrotorTruth state, double yaw_cmd, double dt) {
  const double tau = state.params.tau_yaw_s;
  const double err = wrap_angle(yaw_cmd - state.yaw);
  const double gain = tau > 0.0 ? 1.0 - std::exp(-dt / tau) : 1.0;
  state.yaw = wrap_angle(state.yaw + gain * err);
  return state;
}

/// Exact constant-twist arc propagation of the ground vehicle.
inline PlatformTruth step_platform(PlatformTruth state, double dt) {
  if (!(dt > 0.0)) throw SimFault("platform step dt must be > 0");
  unicycle_step(state.x, state.y, state.theta, state.speed_cmd,
                state.yaw_rate_cmd, dt);
  return state;
}

struct TagPose {
  Vec3 position;  // tag bundle center, world frame
  Vec3 facing;    // unit vector the tag looks along (backward of the deck)
};

/// Tag bundle pose: deck center offset back along -heading, at deck height.
inline TagPose tag_pose(const PlatformTruth& state) {
  const Vec3 heading(std::cos(state.theta), std::sin(state.theta), 0.0);
  TagPose tag;
  tag.position = Vec3(state.x, state.y, state.deck_height) -
                 state.tag_offset_back * heading;
  tag.facing = -heading;
  return tag;
}

inline Vec2 platform_velocity(const PlatformTruth& state) {
  return state.speed_cmd * Vec2(std::cos(state.theta), std::sin(state.theta));
}

}  // namespace perch::plant
