#pragma once

// Distance-dependent turbulent wind in front of the landing plate: a
// tabulated (distance, mean, std) profile along a fixed jet direction, plus
// an Ornstein-Uhlenbeck gust realization used by the plant. The controller
// only ever sees the profile, never the realization.

#include <utility>
#include <vector>

#include "perch/core.hpp"

namespace perch::wind {

struct ProfileSample {
  double distance_m = 0.0;
  double mean_mps = 0.0;
  double std_mps = 0.0;
};

struct WindProfile {
  std::vector<ProfileSample> samples;         // strictly increasing distances
  Vec3 direction = Vec3(-1.0, 0.0, 0.0);      // unit vector u_w, world frame
  double correlation_time_s = 0.2;            // gust correlation time

  void validate() const {
    if (samples.empty()) throw ConfigError("wind profile has no samples");
    double prev = -1.0;
    for (const auto& s : samples) {
      if (s.distance_m < 0.0 || s.distance_m <= prev)
        throw ConfigError("wind profile distances must be >= 0 and strictly increasing");
      if (s.mean_mps < 0.0 || s.std_mps < 0.0)
        throw ConfigError("wind profile mean/std must be >= 0");
      prev = s.distance_m;
    }
    if (std::abs(direction.norm() - 1.0) > 1e-9)
      throw ConfigError("wind direction must be a unit vector");
    if (correlation_time_s <= 0.0)
      throw ConfigError("wind correlation time must be > 0");
  }
};

/// Gust state: signed speed deviation along u_w plus its noise stream.
struct WindState {
  double gust_scalar = 0.0;  // m/s
  NormalStream rng;
};

/// Mean and std of the wind speed at a distance from the plate. Linear
/// interpolation inside the table, clamped below the first sample, linear
/// decay to zero over one sample spacing beyond the last (the jet is
/// spatially bounded).
inline std::pair<double, double> wind_params_at(const WindProfile& profile,
                                                double distance) {
  const auto& s = profile.samples;
  if (s.empty()) throw ConfigError("wind profile has no samples");
  if (distance <= s.front().distance_m)
    return {s.front().mean_mps, s.front().std_mps};
  if (distance >= s.back().distance_m) {
    const double spacing =
        s.size() >= 2 ? s.back().distance_m - s[s.size() - 2].distance_m : 1.0;
    const double excess = distance - s.back().distance_m;
    const double k = std::max(0.0, 1.0 - excess / spacing);
    return {s.back().mean_mps * k, s.back().std_mps * k};
  }
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (distance <= s[i].distance_m) {
      const double w = (distance - s[i - 1].distance_m) /
                       (s[i].distance_m - s[i - 1].distance_m);
      return {s[i - 1].mean_mps + w * (s[i].mean_mps - s[i - 1].mean_mps),
              s[i - 1].std_mps + w * (s[i].std_mps - s[i - 1].std_mps)};
    }
  }
  return {s.back().mean_mps, s.back().std_mps};  // unreachable
}

/// One Ornstein-Uhlenbeck step of the gust scalar. Exact discretization, so
/// the stationary distribution is N(0, std^2) for any dt.
inline WindState step_gust(WindState state, double std_mps, double dt,
                           double correlation_time_s) {
  const double decay = std::exp(-dt / correlation_time_s);
  const double diffusion = std_mps * std::sqrt(1.0 - decay * decay);
  state.gust_scalar = state.gust_scalar * decay + diffusion * state.rng.next();
  return state;
}

/// Wind velocity seen at a distance from the plate: (mean + gust) * u_w.
/// There is no cross-axis component; the jet is constant perpendicular to
/// its direction.
inline Vec3 wind_velocity(const WindProfile& profile, const WindState& state,
                          double distance) {
  return (wind_params_at(profile, distance).first + state.gust_scalar) *
         profile.direction;
}

}  // namespace perch::wind
