#pragma once

// Shared basics: vector aliases, angle helpers, seeded noise streams and the
// two error categories the CLI maps to exit codes.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>

namespace perch {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

inline constexpr double kPi = 3.14159265358979323846;

/// Invalid configuration or malformed input files. CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical fault inside a simulation loop (NaN state). CLI exit code 2.
class SimFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wrap an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) {
    a += 2.0 * kPi;
  } else if (a > kPi) {
    a -= 2.0 * kPi;
  }
  return a;
}

inline double deg2rad(double deg) { return deg * kPi / 180.0; }

inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

/// FNV-1a over a string. Used to derive per-component RNG streams from
/// (seed, stream name) without relying on std::hash being stable.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = fnv1a(stream);
  return h ^ (seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2));
}

/// Value-semantic N(0,1) stream. Copies replay the identical sequence, which
/// is what makes scenario runs bit-reproducible.
class NormalStream {
 public:
  NormalStream() : engine_(0) {}
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

  double next() { return normal_(engine_); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace perch
