#pragma once

// Rigid-body math, frames, rays, planes and triangle meshes.
//
// Units are millimeters and degrees at every public boundary. A RigidTransform
// labelled (from = A, to = B) is the pose of frame B expressed in frame A, i.e.
// it maps coordinates given in B into A. Chains therefore compose left to right:
// compose(A->B, B->C) = A->C.

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "needleplan/error.hpp"

namespace needleplan {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

constexpr double kPi = 3.14159265358979323846;
constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

enum class Frame : std::uint8_t {
  W,    // world (viewer scene)
  B,    // robot base
  CT,   // CT imaging system
  SB,   // steel-ball grid of the registration phantom
  RM,   // retro-reflective marker of the registration phantom
  C,    // tracking camera
  TB,   // marker on the mobile platform
  EEF,  // robot flange / end effector
  N,    // needle hub
  SM,   // skin model
  M,    // tracked marker rigidly attached to the end effector
  P,    // slice plane, indexed
};

struct FrameId {
  Frame kind = Frame::W;
  int index = 0;  // only meaningful for P(n)

  constexpr FrameId() = default;
  constexpr FrameId(Frame k, int i = 0) : kind(k), index(k == Frame::P ? i : 0) {}

  friend constexpr bool operator==(const FrameId&, const FrameId&) = default;
};

std::string to_string(FrameId id);

/// Orthogonal polar factor of m with det = +1 (closest rotation in Frobenius norm).
/// Throws DegenerateInput for (numerically) singular input.
Mat3 nearest_rotation(const Mat3& m);

class RigidTransform {
 public:
  /// Identity B->B style default; frames W->W.
  RigidTransform() = default;
  /// Rotation is projected onto SO(3) on construction.
  RigidTransform(const Mat3& rotation, const Vec3& translation, FrameId from, FrameId to);

  static RigidTransform identity(FrameId from, FrameId to);
  static RigidTransform translation_only(const Vec3& t, FrameId from, FrameId to);
  /// Wraps a 4x4 homogeneous matrix (bottom row ignored).
  static RigidTransform from_matrix(const Mat4& m, FrameId from, FrameId to);

  const Mat3& rotation() const noexcept { return rotation_; }
  const Vec3& translation() const noexcept { return translation_; }
  FrameId from() const noexcept { return from_; }
  FrameId to() const noexcept { return to_; }
  Mat4 matrix() const;

  /// Maps a point expressed in `to()` into `from()`.
  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 apply_direction(const Vec3& d) const { return rotation_ * d; }

  RigidTransform inverse() const;
  RigidTransform relabeled(FrameId from, FrameId to) const;

 private:
  struct Trusted {};
  RigidTransform(Trusted, const Mat3& r, const Vec3& t, FrameId from, FrameId to)
      : rotation_(r), translation_(t), from_(from), to_(to) {}

  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
  FrameId from_{};
  FrameId to_{};

  friend RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
};

/// a.to() must equal b.from(); throws FrameError otherwise.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

/// Rotation about a unit axis (radians).
Mat3 axis_angle(const Vec3& axis, double angle_rad);
/// Rotation angle of R in radians, in [0, pi].
double rotation_angle(const Mat3& r);
/// Rotation vector (axis * angle) of R.
Vec3 rotation_log(const Mat3& r);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  /// Normalizes direction; throws InvalidInput for a zero vector.
  static Ray make(const Vec3& origin, const Vec3& direction);
  Vec3 at(double s) const { return origin + s * direction; }
};

/// Perpendicular distance from p to the infinite line through line_point along line_dir.
double point_line_distance(const Vec3& p, const Vec3& line_point, const Vec3& line_dir);

struct SlicePlane {
  Vec3 origin = Vec3::Zero();
  Vec3 axis_u = Vec3::UnitX();
  Vec3 axis_v = Vec3::UnitY();
  double extent_u = 1.0;
  double extent_v = 1.0;
  double resolution = 1.0;  // mm per pixel

  /// Throws InvalidInput when axes are not orthonormal or extents/resolution not positive.
  void validate() const;
  int width() const;
  int height() const;
  Vec3 pixel_position(int i, int j) const { return origin + (i * resolution) * axis_u + (j * resolution) * axis_v; }
  /// In-plane pose: maps (x_hat, y_hat, 0) plane coordinates into `parent`.
  RigidTransform to_parent(FrameId parent, int plane_index) const;
};

using Triangle = std::array<std::uint32_t, 3>;

class TriMesh {
 public:
  TriMesh() = default;
  /// Validates indices and drops zero-area triangles.
  TriMesh(std::vector<Vec3> vertices, std::vector<Triangle> triangles);

  const std::vector<Vec3>& vertices() const noexcept { return vertices_; }
  const std::vector<Triangle>& triangles() const noexcept { return triangles_; }
  const std::vector<double>& scalars() const noexcept { return scalars_; }
  void set_scalars(std::vector<double> values);

  bool empty() const noexcept { return triangles_.empty(); }
  std::size_t vertex_count() const noexcept { return vertices_.size(); }
  std::size_t triangle_count() const noexcept { return triangles_.size(); }

  double surface_area() const;
  Vec3 triangle_normal(std::size_t tri) const;  // unnormalized, length = 2 * area
  /// Area-weighted unit vertex normals following triangle winding.
  std::vector<Vec3> vertex_normals() const;
  /// True when every undirected edge is shared by exactly two triangles.
  bool is_watertight() const;
  TriMesh transformed(const RigidTransform& t) const;

 private:
  std::vector<Vec3> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<double> scalars_;
};

struct RayHit {
  Vec3 point;
  double distance = 0.0;
  std::uint32_t triangle = 0;
};

/// Moller-Trumbore, two-sided; returns the ray parameter of the hit if any.
std::optional<double> ray_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c);

/// Nearest hit over all triangles; ties go to the lowest triangle index.
std::optional<RayHit> ray_mesh_intersect(const Ray& ray, const TriMesh& mesh);

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);
/// Minimum distance between segment [p0,p1] and triangle (a,b,c).
double segment_triangle_distance(const Vec3& p0, const Vec3& p1, const Vec3& a, const Vec3& b, const Vec3& c);
double segment_segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1);
double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b);

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void extend(const Aabb& o) {
    lo = lo.cwiseMin(o.lo);
    hi = hi.cwiseMax(o.hi);
  }
  bool valid() const { return (lo.array() <= hi.array()).all(); }
  Vec3 center() const { return 0.5 * (lo + hi); }
  /// Euclidean distance between two boxes (0 when overlapping).
  double distance(const Aabb& o) const;
  bool contains(const Vec3& p, double tol = 0.0) const {
    return (p.array() >= lo.array() - tol).all() && (p.array() <= hi.array() + tol).all();
  }
  /// Slab test; returns entry parameter if the ray reaches the box within [0, t_max].
  std::optional<double> ray_entry(const Ray& ray, double t_max) const;
  /// Signed distance (negative inside).
  double signed_distance(const Vec3& p) const;
};

/// Bounding-volume hierarchy over a mesh for ray casts, distance and inside queries.
/// Immutable after construction; all queries are const and thread-safe.
class MeshIndex {
 public:
  explicit MeshIndex(TriMesh mesh);

  const TriMesh& mesh() const noexcept { return mesh_; }
  const Aabb& bounds() const noexcept { return nodes_.front().box; }

  std::optional<RayHit> intersect(const Ray& ray) const;
  /// All hit parameters along the ray within [0, t_max], sorted.
  std::vector<double> all_hits(const Ray& ray, double t_max) const;
  /// Minimum distance from segment to mesh surface; stops refining above `cutoff`.
  double segment_distance(const Vec3& p0, const Vec3& p1, double cutoff = std::numeric_limits<double>::infinity()) const;
  double point_distance(const Vec3& p) const { return segment_distance(p, p); }
  /// Parity test along a fixed generic direction; assumes a closed mesh.
  bool contains(const Vec3& p) const;
  /// Length of segment [p0,p1] lying inside the closed mesh.
  double inside_length(const Vec3& p0, const Vec3& p1) const;

 private:
  struct Node {
    Aabb box;
    std::uint32_t first = 0;  // into order_ for leaves, child index otherwise
    std::uint32_t count = 0;  // 0 for interior nodes
    std::uint32_t right = 0;
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end, std::vector<Vec3>& centroids);

  TriMesh mesh_;
  std::vector<std::uint32_t> order_;
  std::vector<Aabb> tri_boxes_;
  std::vector<Node> nodes_;
};

}  // namespace needleplan
