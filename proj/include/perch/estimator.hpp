#pragma once

// Extended Kalman filter over the platform state [p_x, p_y, v_p, theta,
// theta_dot] under a constant-twist unicycle model. GPS and vision-derived
// measurements share the same (p_x, p_y, theta) update with per-source noise.
// The covariance is kept symmetric PSD by symmetrization plus an eigenvalue
// floor after every step.

#include <cmath>
#include <optional>

#include "perch/core.hpp"
#include "perch/plant.hpp"
#include "perch/sensors.hpp"
#include "perch/unicycle.hpp"

namespace perch::estimator {

struct PlatformBelief {
  Vec5 mean = Vec5::Zero();          // [p_x, p_y, v_p, theta, theta_dot]
  Mat5 covariance = Mat5::Identity();
  double last_update_time = 0.0;
};

struct NoiseConfig {
  Mat5 process_q = Mat5::Zero();  // PSD rate (per second)
  Mat3 r_gps = Mat3::Identity();
  Mat3 r_vision = Mat3::Identity();

  static NoiseConfig defaults() {
    NoiseConfig n;
    n.process_q = Vec5(1e-4, 1e-4, 0.05, 1e-4, 0.02).asDiagonal();
    n.r_gps = Vec3(0.25, 0.25, 0.0225).asDiagonal();
    n.r_vision = Vec3(2.5e-4, 2.5e-4, 1e-3).asDiagonal();
    return n;
  }
};

namespace detail {

inline Mat5 make_psd(Mat5 p) {
  p = 0.5 * (p + p.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat5> eig(p);
  if (eig.info() != Eigen::Success) throw SimFault("covariance eigensolve failed");
  if (eig.eigenvalues().minCoeff() >= 0.0) return p;
  Vec5 vals = eig.eigenvalues().cwiseMax(1e-12);
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

inline constexpr int kMeasIdx[3] = {0, 1, 3};  // H selects p_x, p_y, theta

}  // namespace detail

/// Propagate mean by the exact arc map and covariance by its Jacobian.
inline PlatformBelief ekf_predict(PlatformBelief belief, double dt,
                                  const NoiseConfig& noise) {
  if (!(dt > 0.0)) throw SimFault("ekf_predict dt must be > 0");
  double x = belief.mean(0), y = belief.mean(1), theta = belief.mean(3);
  const double v = belief.mean(2), omega = belief.mean(4);
  const Mat5 F = unicycle_jacobian(v, theta, omega, dt);
  unicycle_step(x, y, theta, v, omega, dt);
  belief.mean << x, y, v, theta, omega;
  belief.covariance = detail::make_psd(
      F * belief.covariance * F.transpose() + dt * noise.process_q);
  belief.last_update_time += dt;
  return belief;
}

/// Standard EKF update with z = (p_x, p_y, theta); the heading innovation is
/// wrapped before the gain is applied.
inline PlatformBelief ekf_update(PlatformBelief belief, const Vec3& z,
                                 const Mat3& r) {
  Vec3 innovation(z(0) - belief.mean(0), z(1) - belief.mean(1),
                  wrap_angle(z(2) - belief.mean(3)));

  Eigen::Matrix<double, 3, 5> h = Eigen::Matrix<double, 3, 5>::Zero();
  for (int i = 0; i < 3; ++i) h(i, detail::kMeasIdx[i]) = 1.0;

  const Mat3 s = h * belief.covariance * h.transpose() + r;
  const Eigen::LLT<Mat3> llt(s);
  if (llt.info() != Eigen::Success)
    throw SimFault("singular innovation covariance in ekf_update");
  const Eigen::Matrix<double, 5, 3> gain =
      belief.covariance * h.transpose() * llt.solve(Mat3::Identity());

  belief.mean += gain * innovation;
  belief.mean(3) = wrap_angle(belief.mean(3));

  // Joseph form keeps the posterior PSD even with a nearly singular gain.
  const Mat5 ikh = Mat5::Identity() - gain * h;
  belief.covariance = detail::make_psd(
      ikh * belief.covariance * ikh.transpose() + gain * r * gain.transpose());
  return belief;
}

/// First-measurement initialization: position/heading from the fix, zero
/// velocity and yaw rate with wide variance.
inline PlatformBelief ekf_init(const Vec3& z, const Mat3& r, double t) {
  PlatformBelief belief;
  belief.mean << z(0), z(1), 0.0, wrap_angle(z(2)), 0.0;
  Vec5 d(r(0, 0), r(1, 1), 10.0, r(2, 2), 1.0);
  belief.covariance = d.asDiagonal();
  belief.last_update_time = t;
  return belief;
}

/// World-frame platform measurement from a relative tag detection composed
/// with the known UAV pose. The platform heading is opposite the tag facing
/// and the deck center sits tag_offset_back ahead of the tag plane.
inline Vec3 vision_to_measurement(const sensors::VisionMeasurement& vis,
                                  const plant::QuadrotorTruth& quad,
                                  double tag_offset_back = 0.0) {
  const double cy = std::cos(quad.yaw), sy = std::sin(quad.yaw);
  const Vec3& rel = vis.relative_tag_position;
  const double tag_x = quad.position.x() + cy * rel.x() - sy * rel.y();
  const double tag_y = quad.position.y() + sy * rel.x() + cy * rel.y();
  const double facing = wrap_angle(quad.yaw + vis.relative_tag_yaw);
  const double theta = wrap_angle(facing + kPi);
  return Vec3(tag_x + tag_offset_back * std::cos(theta),
              tag_y + tag_offset_back * std::sin(theta), theta);
}

struct PlatformPrediction {
  double x = 0.0, y = 0.0, theta = 0.0;
  Vec2 velocity = Vec2::Zero();  // world frame
};

/// Arc-propagate the belief mean tau seconds ahead (tau = 0 returns the
/// current mean pose).
inline PlatformPrediction predict_platform_ahead(const PlatformBelief& belief,
                                                 double tau) {
  if (tau < 0.0) throw SimFault("predict_platform_ahead needs tau >= 0");
  PlatformPrediction out;
  out.x = belief.mean(0);
  out.y = belief.mean(1);
  out.theta = belief.mean(3);
  const double v = belief.mean(2), omega = belief.mean(4);
  if (tau > 0.0) unicycle_step(out.x, out.y, out.theta, v, omega, tau);
  out.velocity = v * Vec2(std::cos(out.theta), std::sin(out.theta));
  return out;
}

}  // namespace perch::estimator
