#pragma once

// Fixtures shared by the unit and acceptance tests.

#include <memory>
#include <string>

#include "needleplan/random.hpp"
#include "needleplan/scenario.hpp"

namespace testing_support {

using namespace needleplan;

/// The default desk case, built once per process.
inline const DeskCase& desk() {
  static const DeskCase c = build_desk_case(default_desk_scene());
  return c;
}

inline RigidTransform random_transform(Rng& rng, FrameId from, FrameId to, double max_t = 500.0) {
  return RigidTransform(rng.rotation(), Vec3(rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t)),
                        from, to);
}

inline JointVector random_q(Rng& rng, const KinematicChain& chain, double margin = 5.0) {
  JointVector q;
  for (int i = 0; i < kJointCount; ++i) {
    const auto& l = chain.limits()[i];
    q[i] = rng.uniform(l.min_deg + margin, l.max_deg - margin);
  }
  return q;
}

/// Orientation difference in degrees.
inline double angle_deg(const Mat3& a, const Mat3& b) { return rad2deg(rotation_angle(a.transpose() * b)); }

/// Unit cube [0,1]^3 as 12 outward-wound triangles.
inline TriMesh unit_cube() {
  std::vector<Vec3> v;
  for (int i = 0; i < 8; ++i) v.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
  std::vector<Triangle> t = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return TriMesh(std::move(v), std::move(t));
}

}  // namespace testing_support
