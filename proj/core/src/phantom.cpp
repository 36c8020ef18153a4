#include <algorithm>
#include <cmath>

#include "needleplan/random.hpp"
#include "needleplan/volume.hpp"

namespace needleplan {

namespace {

bool hu_in_range(double hu) { return hu >= kMinHu && hu <= kMaxHu; }

// Visits every voxel whose center lies in the box [lo, hi].
template <typename Fn>
void for_voxels_in_box(const Volume& v, const Vec3& lo, const Vec3& hi, Fn&& fn) {
  const Vec3 glo = v.to_grid(lo);
  const Vec3 ghi = v.to_grid(hi);
  int a[3], b[3];
  for (int k = 0; k < 3; ++k) {
    a[k] = std::max(0, static_cast<int>(std::ceil(glo[k] - 1e-9)));
    b[k] = std::min(v.dims()[k] - 1, static_cast<int>(std::floor(ghi[k] + 1e-9)));
  }
  for (int k = a[2]; k <= b[2]; ++k) {
    for (int j = a[1]; j <= b[1]; ++j) {
      for (int i = a[0]; i <= b[0]; ++i) fn(i, j, k);
    }
  }
}

}  // namespace

bool PhantomSpec::inside_body(const Vec3& p) const {
  return (p - body_center).cwiseQuotient(body_semi_axes).squaredNorm() <= 1.0;
}

void PhantomSpec::validate() const {
  if ((body_semi_axes.array() <= 0.0).any()) throw Error(ErrorCode::InvalidSpec, "body semi-axes must be positive");
  if (!hu_in_range(body_hu) || !hu_in_range(ball_hu)) throw Error(ErrorCode::InvalidSpec, "HU out of range");
  if (noise_sigma < 0.0) throw Error(ErrorCode::InvalidSpec, "noise sigma must be >= 0");
  for (const auto& organ : organs) {
    if (!hu_in_range(organ.hu)) throw Error(ErrorCode::InvalidSpec, "organ HU out of range: " + organ.name);
    if (!(organ.radius > 0.0)) throw Error(ErrorCode::InvalidSpec, "organ radius must be positive: " + organ.name);
    // Probe the organ sphere along axes and diagonals.
    bool inside = inside_body(organ.center);
    for (int dx = -1; dx <= 1 && inside; ++dx) {
      for (int dy = -1; dy <= 1 && inside; ++dy) {
        for (int dz = -1; dz <= 1 && inside; ++dz) {
          const Vec3 d(dx, dy, dz);
          if (d.isZero()) continue;
          inside = inside_body(organ.center + organ.radius * d.normalized());
        }
      }
    }
    if (!inside) throw Error(ErrorCode::InvalidSpec, "organ outside body: " + organ.name);
  }
  for (const auto& rib : ribs) {
    if (!hu_in_range(rib.hu) || !(rib.radius > 0.0)) throw Error(ErrorCode::InvalidSpec, "invalid rib");
  }
  for (const auto& ball : balls) {
    if (!(ball.radius > 0.0)) throw Error(ErrorCode::InvalidSpec, "ball radius must be positive");
  }
}

Volume synthesize_phantom(const PhantomSpec& spec, std::array<int, 3> dims, const Vec3& spacing, std::uint64_t seed,
                          GroundTruth* truth) {
  const Vec3 extent(spacing.x() * (dims[0] - 1), spacing.y() * (dims[1] - 1), spacing.z() * (dims[2] - 1));
  return synthesize_phantom(spec, dims, spacing, spec.body_center - 0.5 * extent, seed, truth);
}

Volume synthesize_phantom(const PhantomSpec& spec, std::array<int, 3> dims, const Vec3& spacing, const Vec3& origin,
                          std::uint64_t seed, GroundTruth* truth) {
  spec.validate();
  Volume vol(dims, spacing, origin, static_cast<std::int16_t>(kAirHu));
  std::vector<double> hu(vol.voxel_count(), kAirHu);

  for_voxels_in_box(vol, spec.body_center - spec.body_semi_axes, spec.body_center + spec.body_semi_axes,
                    [&](int i, int j, int k) {
                      if (spec.inside_body(vol.voxel_position(i, j, k))) hu[vol.index(i, j, k)] = spec.body_hu;
                    });
  for (const auto& organ : spec.organs) {
    const Vec3 r = Vec3::Constant(organ.radius);
    for_voxels_in_box(vol, organ.center - r, organ.center + r, [&](int i, int j, int k) {
      if ((vol.voxel_position(i, j, k) - organ.center).norm() <= organ.radius) hu[vol.index(i, j, k)] = organ.hu;
    });
  }
  for (const auto& rib : spec.ribs) {
    const Vec3 r = Vec3::Constant(rib.radius);
    for_voxels_in_box(vol, rib.a.cwiseMin(rib.b) - r, rib.a.cwiseMax(rib.b) + r, [&](int i, int j, int k) {
      if (point_segment_distance(vol.voxel_position(i, j, k), rib.a, rib.b) <= rib.radius) {
        hu[vol.index(i, j, k)] = rib.hu;
      }
    });
  }
  for (const auto& ball : spec.balls) {
    const Vec3 r = Vec3::Constant(ball.radius);
    for_voxels_in_box(vol, ball.center - r, ball.center + r, [&](int i, int j, int k) {
      if ((vol.voxel_position(i, j, k) - ball.center).norm() <= ball.radius) hu[vol.index(i, j, k)] = spec.ball_hu;
    });
  }

  Rng rng(seed);
  auto& out = vol.mutable_data();
  for (std::size_t n = 0; n < hu.size(); ++n) {
    double value = hu[n];
    if (spec.noise_sigma > 0.0) value += rng.gaussian(spec.noise_sigma);
    out[n] = static_cast<std::int16_t>(std::clamp(std::round(value), kMinHu, kMaxHu));
  }

  if (truth) {
    truth->organs = spec.organs;
    truth->balls = spec.balls;
  }
  return vol;
}

}  // namespace needleplan
