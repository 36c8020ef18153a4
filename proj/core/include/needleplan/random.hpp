#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "needleplan/geometry.hpp"

namespace needleplan {

/// Seeded generator whose streams are identical on every standard library.
/// std::normal_distribution is implementation-defined, so gaussians are drawn
/// with Box-Muller straight from the engine bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }
  double gaussian(double sigma) { return sigma * gaussian(); }

  Vec3 gaussian_vec(double sigma) {
    const double x = gaussian(sigma), y = gaussian(sigma), z = gaussian(sigma);
    return Vec3(x, y, z);
  }

  Vec3 unit_vector() {
    Vec3 v;
    do {
      v = gaussian_vec(1.0);
    } while (v.norm() < 1e-9);
    return v.normalized();
  }

  /// Uniformly distributed rotation (via a random unit quaternion).
  Mat3 rotation() {
    Eigen::Quaterniond q(gaussian(), gaussian(), gaussian(), gaussian());
    q.normalize();
    return q.toRotationMatrix();
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace needleplan
