#pragma once

// Exact constant-twist propagation of a planar unicycle, shared by the
// ground-truth platform, the EKF and the planner look-ahead. The sin/cos
// integrals switch to a series below |yaw_rate| = 1e-6 rad/s to avoid the
// 0/0 at straight-line motion.

#include <cmath>

#include "perch/core.hpp"

namespace perch {

inline constexpr double kStraightYawRateEps = 1e-6;

struct ArcCoeffs {
  double alpha;     // integral of cos(theta + w*t) dt over [0, dt]
  double beta;      // integral of sin(theta + w*t) dt over [0, dt]
  double dalpha_dw;
  double dbeta_dw;
};

inline ArcCoeffs arc_coeffs(double theta, double omega, double dt) {
  ArcCoeffs c;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  if (std::abs(omega) < kStraightYawRateEps) {
    // Series in omega, exact to O(omega^3).
    c.alpha = dt * ct - omega * dt * dt * 0.5 * st - omega * omega * dt * dt * dt / 6.0 * ct;
    c.beta = dt * st + omega * dt * dt * 0.5 * ct - omega * omega * dt * dt * dt / 6.0 * st;
    c.dalpha_dw = -dt * dt * 0.5 * st - omega * dt * dt * dt / 3.0 * ct;
    c.dbeta_dw = dt * dt * 0.5 * ct - omega * dt * dt * dt / 3.0 * st;
  } else {
    const double t1 = theta + omega * dt;
    const double s1 = std::sin(t1);
    const double c1 = std::cos(t1);
    c.alpha = (s1 - st) / omega;
    c.beta = (ct - c1) / omega;
    c.dalpha_dw = c1 * dt / omega - c.alpha / omega;
    c.dbeta_dw = s1 * dt / omega - c.beta / omega;
  }
  return c;
}

/// Advance (x, y, theta) by dt under constant speed v and yaw rate omega.
inline void unicycle_step(double& x, double& y, double& theta, double v,
                          double omega, double dt) {
  const ArcCoeffs c = arc_coeffs(theta, omega, dt);
  x += v * c.alpha;
  y += v * c.beta;
  theta = wrap_angle(theta + omega * dt);
}

/// Jacobian of the discrete arc map for the 5-state [x, y, v, theta, omega].
inline Mat5 unicycle_jacobian(double v, double theta, double omega, double dt) {
  const ArcCoeffs c = arc_coeffs(theta, omega, dt);
  Mat5 F = Mat5::Identity();
  F(0, 2) = c.alpha;
  F(0, 3) = -v * c.beta;
  F(0, 4) = v * c.dalpha_dw;
  F(1, 2) = c.beta;
  F(1, 3) = v * c.alpha;
  F(1, 4) = v * c.dbeta_dw;
  F(3, 4) = dt;
  return F;
}

}  // namespace perch
