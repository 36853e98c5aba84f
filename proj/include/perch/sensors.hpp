#pragma once

// Simulated sensing of the platform: a 2 Hz GPS-like pose feed with white
// Gaussian noise, and a geometric stand-in for the fiducial detector that
// emits relative tag poses at camera rate, gated by range, field of view and
// the tag's facing side. Noise on the vision channel grows with range.

#include <optional>

#include "perch/core.hpp"
#include "perch/plant.hpp"

namespace perch::sensors {

struct GpsConfig {
  double rate_hz = 2.0;
  double sigma_pos_m = 0.5;
  double sigma_theta_rad = 0.15;
};

struct VisionConfig {
  double rate_hz = 30.0;
  double min_range_m = 0.05;
  double max_range_m = 3.5;
  double fov_half_angle_rad = deg2rad(45.0);
  double sigma0_m = 0.005;   // position noise at zero range
  double k_range = 0.01;     // position noise growth per meter of range
  double sigma_yaw_rad = 0.03;

  double sigma_pos(double range) const { return sigma0_m + k_range * range; }
};

struct GpsMeasurement {
  double p_x = 0.0;
  double p_y = 0.0;
  double theta = 0.0;
  double timestamp = 0.0;
};

struct VisionMeasurement {
  Vec3 relative_tag_position = Vec3::Zero();  // yaw-aligned body frame
  double relative_tag_yaw = 0.0;              // tag facing angle minus UAV yaw
  double timestamp = 0.0;
};

/// Value-semantic GPS sensor; owns its tick counter and noise stream.
class GpsSensor {
 public:
  GpsSensor() = default;
  GpsSensor(const GpsConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {}

  /// Emits a measurement only when t reaches the next rate tick.
  std::optional<GpsMeasurement> sense(const plant::PlatformTruth& platform,
                                      double t) {
    if (t * cfg_.rate_hz < static_cast<double>(next_tick_)) return std::nullopt;
    ++next_tick_;
    GpsMeasurement z;
    z.p_x = platform.x + cfg_.sigma_pos_m * rng_.next();
    z.p_y = platform.y + cfg_.sigma_pos_m * rng_.next();
    z.theta = wrap_angle(platform.theta + cfg_.sigma_theta_rad * rng_.next());
    z.timestamp = t;
    return z;
  }

 private:
  GpsConfig cfg_;
  NormalStream rng_;
  long next_tick_ = 0;
};

/// Value-semantic vision sensor. Detection requires the tag inside the
/// [min, max] range gate, within the camera cone around the UAV yaw axis,
/// and the UAV on the side the tag faces.
class VisionSensor {
 public:
  VisionSensor() = default;
  VisionSensor(const VisionConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), rng_(seed) {}

  std::optional<VisionMeasurement> sense(const plant::QuadrotorTruth& quad,
                                         const plant::PlatformTruth& platform,
                                         double t) {
    if (t * cfg_.rate_hz < static_cast<double>(next_tick_)) return std::nullopt;
    ++next_tick_;

    const plant::TagPose tag = plant::tag_pose(platform);
    const Vec3 rel_world = tag.position - quad.position;
    const double range = rel_world.norm();
    if (range < cfg_.min_range_m || range > cfg_.max_range_m) return std::nullopt;
    if ((quad.position - tag.position).dot(tag.facing) <= 0.0) return std::nullopt;

    // Relative position in the yaw-aligned body frame; the camera looks
    // along +x of that frame.
    const double cy = std::cos(quad.yaw), sy = std::sin(quad.yaw);
    const Vec3 rel(cy * rel_world.x() + sy * rel_world.y(),
                   -sy * rel_world.x() + cy * rel_world.y(), rel_world.z());
    if (rel.x() <= 0.0) return std::nullopt;
    if (std::abs(std::atan2(rel.y(), rel.x())) > cfg_.fov_half_angle_rad)
      return std::nullopt;
    if (std::abs(std::atan2(rel.z(), rel.x())) > cfg_.fov_half_angle_rad)
      return std::nullopt;

    const double facing_angle = std::atan2(tag.facing.y(), tag.facing.x());
    const double sigma = cfg_.sigma_pos(range);
    VisionMeasurement z;
    z.relative_tag_position =
        rel + sigma * Vec3(rng_.next(), rng_.next(), rng_.next());
    z.relative_tag_yaw =
        wrap_angle(facing_angle - quad.yaw + cfg_.sigma_yaw_rad * rng_.next());
    z.timestamp = t;
    return z;
  }

 private:
  VisionConfig cfg_;
  NormalStream rng_;
  long next_tick_ = 0;
};

}  // namespace perch::sensors
