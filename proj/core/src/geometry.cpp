#include "needleplan/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <Eigen/SVD>

namespace needleplan {

std::string to_string(FrameId id) {
  switch (id.kind) {
    case Frame::W: return "W";
    case Frame::B: return "B";
    case Frame::CT: return "CT";
    case Frame::SB: return "SB";
    case Frame::RM: return "RM";
    case Frame::C: return "C";
    case Frame::TB: return "TB";
    case Frame::EEF: return "EEF";
    case Frame::N: return "N";
    case Frame::SM: return "SM";
    case Frame::M: return "M";
    case Frame::P: return "P" + std::to_string(id.index);
  }
  return "?";
}

Mat3 nearest_rotation(const Mat3& m) {
  if (!m.allFinite()) throw Error(ErrorCode::DegenerateInput, "non-finite matrix");
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (s(0) <= 0.0 || s(2) <= 1e-12 * s(0)) {
    throw Error(ErrorCode::DegenerateInput, "matrix is singular, no unique closest rotation");
  }
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return u * d * v.transpose();
}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation, FrameId from, FrameId to)
    : rotation_(nearest_rotation(rotation)), translation_(translation), from_(from), to_(to) {
  if (!translation.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite translation");
}

RigidTransform RigidTransform::identity(FrameId from, FrameId to) {
  return RigidTransform(Trusted{}, Mat3::Identity(), Vec3::Zero(), from, to);
}

RigidTransform RigidTransform::translation_only(const Vec3& t, FrameId from, FrameId to) {
  return RigidTransform(Trusted{}, Mat3::Identity(), t, from, to);
}

RigidTransform RigidTransform::from_matrix(const Mat4& m, FrameId from, FrameId to) {
  return RigidTransform(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>(), from, to);
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return RigidTransform(Trusted{}, rt, -(rt * translation_), to_, from_);
}

RigidTransform RigidTransform::relabeled(FrameId from, FrameId to) const {
  return RigidTransform(Trusted{}, rotation_, translation_, from, to);
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  if (!(a.to_ == b.from_)) {
    throw Error(ErrorCode::FrameError,
                "cannot compose " + to_string(a.from_) + "->" + to_string(a.to_) + " with " +
                    to_string(b.from_) + "->" + to_string(b.to_));
  }
  return RigidTransform(nearest_rotation(a.rotation_ * b.rotation_), a.rotation_ * b.translation_ + a.translation_,
                        a.from_, b.to_);
}

RigidTransform invert(const RigidTransform& t) { return t.inverse(); }

Mat3 axis_angle(const Vec3& axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

double rotation_angle(const Mat3& r) {
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  // acos loses precision near 0; use atan2 with the skew part instead.
  const Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * w.norm(), c);
}

Vec3 rotation_log(const Mat3& r) {
  Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

Ray Ray::make(const Vec3& origin, const Vec3& direction) {
  const double n = direction.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw Error(ErrorCode::InvalidInput, "ray direction must be non-zero");
  return Ray{origin, direction / n};
}

double point_line_distance(const Vec3& p, const Vec3& line_point, const Vec3& line_dir) {
  const double n = line_dir.norm();
  if (!(n > 0.0)) throw Error(ErrorCode::InvalidInput, "line direction must be non-zero");
  const Vec3 d = line_dir / n;
  const Vec3 w = p - line_point;
  return (w - w.dot(d) * d).norm();
}

// ---------------------------------------------------------------------------
// SlicePlane

void SlicePlane::validate() const {
  if (!origin.allFinite() || !axis_u.allFinite() || !axis_v.allFinite()) {
    throw Error(ErrorCode::InvalidInput, "slice plane has non-finite parameters");
  }
  if (std::abs(axis_u.norm() - 1.0) > 1e-9 || std::abs(axis_v.norm() - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidInput, "slice plane axes must be unit length");
  }
  if (std::abs(axis_u.dot(axis_v)) > 1e-9) throw Error(ErrorCode::InvalidInput, "slice plane axes must be orthogonal");
  if (!(extent_u > 0.0) || !(extent_v > 0.0)) throw Error(ErrorCode::InvalidInput, "slice extents must be positive");
  if (!(resolution > 0.0)) throw Error(ErrorCode::InvalidInput, "slice resolution must be positive");
  if (extent_u / resolution > 1e5 || extent_v / resolution > 1e5) {
    throw Error(ErrorCode::InvalidInput, "slice too large");
  }
}

int SlicePlane::width() const { return static_cast<int>(std::floor(extent_u / resolution + 1e-9)) + 1; }
int SlicePlane::height() const { return static_cast<int>(std::floor(extent_v / resolution + 1e-9)) + 1; }

RigidTransform SlicePlane::to_parent(FrameId parent, int plane_index) const {
  Mat3 r;
  r.col(0) = axis_u;
  r.col(1) = axis_v;
  r.col(2) = axis_u.cross(axis_v);
  return RigidTransform(r, origin, parent, FrameId(Frame::P, plane_index));
}

// ---------------------------------------------------------------------------
// TriMesh

TriMesh::TriMesh(std::vector<Vec3> vertices, std::vector<Triangle> triangles) : vertices_(std::move(vertices)) {
  triangles_.reserve(triangles.size());
  const auto n = static_cast<std::uint32_t>(vertices_.size());
  for (const auto& t : triangles) {
    if (t[0] >= n || t[1] >= n || t[2] >= n) throw Error(ErrorCode::InvalidInput, "triangle index out of range");
    const Vec3 cr = (vertices_[t[1]] - vertices_[t[0]]).cross(vertices_[t[2]] - vertices_[t[0]]);
    if (cr.squaredNorm() > 0.0) triangles_.push_back(t);
  }
}

void TriMesh::set_scalars(std::vector<double> values) {
  if (!values.empty() && values.size() != vertices_.size()) {
    throw Error(ErrorCode::InvalidInput, "scalar channel must have one value per vertex");
  }
  scalars_ = std::move(values);
}

Vec3 TriMesh::triangle_normal(std::size_t tri) const {
  const auto& t = triangles_[tri];
  return (vertices_[t[1]] - vertices_[t[0]]).cross(vertices_[t[2]] - vertices_[t[0]]);
}

double TriMesh::surface_area() const {
  double area = 0.0;
  for (std::size_t i = 0; i < triangles_.size(); ++i) area += 0.5 * triangle_normal(i).norm();
  return area;
}

std::vector<Vec3> TriMesh::vertex_normals() const {
  std::vector<Vec3> normals(vertices_.size(), Vec3::Zero());
  for (std::size_t i = 0; i < triangles_.size(); ++i) {
    const Vec3 n = triangle_normal(i);
    for (auto v : triangles_[i]) normals[v] += n;
  }
  for (auto& n : normals) {
    const double len = n.norm();
    if (len > 0.0) n /= len;
  }
  return normals;
}

bool TriMesh::is_watertight() const {
  if (triangles_.empty()) return false;
  std::unordered_map<std::uint64_t, int> edges;
  edges.reserve(triangles_.size() * 3);
  for (const auto& t : triangles_) {
    for (int k = 0; k < 3; ++k) {
      std::uint64_t a = t[k], b = t[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      ++edges[(a << 32) | b];
    }
  }
  return std::all_of(edges.begin(), edges.end(), [](const auto& e) { return e.second == 2; });
}

TriMesh TriMesh::transformed(const RigidTransform& t) const {
  TriMesh out;
  out.vertices_.reserve(vertices_.size());
  for (const auto& v : vertices_) out.vertices_.push_back(t.apply(v));
  out.triangles_ = triangles_;
  out.scalars_ = scalars_;
  return out;
}

// ---------------------------------------------------------------------------
// Primitive queries

std::optional<double> ray_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = ray.direction.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-14 * e1.norm() * e2.norm()) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = ray.origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = ray.direction.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (t < 0.0) return std::nullopt;
  return t;
}

std::optional<RayHit> ray_mesh_intersect(const Ray& ray, const TriMesh& mesh) {
  std::optional<RayHit> best;
  const auto& v = mesh.vertices();
  const auto& tris = mesh.triangles();
  for (std::size_t i = 0; i < tris.size(); ++i) {
    const auto t = ray_triangle(ray, v[tris[i][0]], v[tris[i][1]], v[tris[i][2]]);
    if (t && (!best || *t < best->distance)) best = RayHit{ray.at(*t), *t, static_cast<std::uint32_t>(i)};
  }
  return best;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 <= 0.0) return (p - a).norm();
  const double s = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + s * ab)).norm();
}

double segment_segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1) {
  const Vec3 d1 = p1 - p0, d2 = q1 - q0, r = p0 - q0;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s = 0.0, t = 0.0;
  if (a <= 1e-300 && e <= 1e-300) return r.norm();
  if (a <= 1e-300) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= 1e-300) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > 1e-14 * a * e ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p0 + s * d1) - (q0 + t * d2)).norm();
}

double segment_triangle_distance(const Vec3& p0, const Vec3& p1, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 d = p1 - p0;
  const double len = d.norm();
  if (len > 0.0) {
    const Ray ray{p0, d / len};
    if (auto t = ray_triangle(ray, a, b, c); t && *t <= len) return 0.0;
  }
  double best = (p0 - closest_point_on_triangle(p0, a, b, c)).norm();
  if (len > 0.0) {
    best = std::min(best, (p1 - closest_point_on_triangle(p1, a, b, c)).norm());
    best = std::min(best, segment_segment_distance(p0, p1, a, b));
    best = std::min(best, segment_segment_distance(p0, p1, b, c));
    best = std::min(best, segment_segment_distance(p0, p1, c, a));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Aabb

double Aabb::distance(const Aabb& o) const {
  const Vec3 gap = (o.lo - hi).cwiseMax(lo - o.hi).cwiseMax(0.0);
  return gap.norm();
}

std::optional<double> Aabb::ray_entry(const Ray& ray, double t_max) const {
  double t0 = 0.0, t1 = t_max;
  for (int k = 0; k < 3; ++k) {
    const double inv = 1.0 / ray.direction[k];
    double ta = (lo[k] - ray.origin[k]) * inv;
    double tb = (hi[k] - ray.origin[k]) * inv;
    if (ta > tb) std::swap(ta, tb);
    // NaN from 0*inf means the ray lies in the slab plane; keep the current interval.
    if (!std::isnan(ta)) t0 = std::max(t0, ta);
    if (!std::isnan(tb)) t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return t0;
}

double Aabb::signed_distance(const Vec3& p) const {
  const Vec3 c = center();
  const Vec3 half = 0.5 * (hi - lo);
  const Vec3 q = (p - c).cwiseAbs() - half;
  const double outside = q.cwiseMax(0.0).norm();
  const double inside = std::min(q.maxCoeff(), 0.0);
  return outside + inside;
}

// ---------------------------------------------------------------------------
// MeshIndex

namespace {
constexpr std::uint32_t kLeafSize = 4;

Aabb segment_box(const Vec3& a, const Vec3& b) {
  Aabb box;
  box.extend(a);
  box.extend(b);
  return box;
}

const Vec3& parity_direction() {
  static const Vec3 d = Vec3(0.5773502691896258, 0.5773502691896259, 0.5773502691896257).normalized() +
                        Vec3(1.3e-4, -0.7e-4, 0.3e-4);
  static const Vec3 n = d.normalized();
  return n;
}
}  // namespace

MeshIndex::MeshIndex(TriMesh mesh) : mesh_(std::move(mesh)) {
  const auto& v = mesh_.vertices();
  const auto& tris = mesh_.triangles();
  const auto n = static_cast<std::uint32_t>(tris.size());
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0u);
  tri_boxes_.resize(n);
  std::vector<Vec3> centroids(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (auto k : tris[i]) tri_boxes_[i].extend(v[k]);
    centroids[i] = tri_boxes_[i].center();
  }
  nodes_.reserve(n > 0 ? 2 * n / kLeafSize + 2 : 1);
  if (n == 0) {
    nodes_.push_back(Node{});
  } else {
    build(0, n, centroids);
  }
}

std::uint32_t MeshIndex::build(std::uint32_t begin, std::uint32_t end, std::vector<Vec3>& centroids) {
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(Node{});
  Aabb box, cbox;
  for (std::uint32_t i = begin; i < end; ++i) {
    box.extend(tri_boxes_[order_[i]]);
    cbox.extend(centroids[order_[i]]);
  }
  nodes_[index].box = box;
  if (end - begin <= kLeafSize) {
    nodes_[index].first = begin;
    nodes_[index].count = end - begin;
    return index;
  }
  int axis = 0;
  (cbox.hi - cbox.lo).maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     if (centroids[a][axis] != centroids[b][axis]) return centroids[a][axis] < centroids[b][axis];
                     return a < b;
                   });
  const std::uint32_t left = build(begin, mid, centroids);
  const std::uint32_t right = build(mid, end, centroids);
  nodes_[index].first = left;
  nodes_[index].right = right;
  nodes_[index].count = 0;
  return index;
}

std::optional<RayHit> MeshIndex::intersect(const Ray& ray) const {
  std::optional<RayHit> best;
  if (mesh_.empty()) return best;
  const auto& v = mesh_.vertices();
  const auto& tris = mesh_.triangles();
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    const double limit = best ? best->distance : std::numeric_limits<double>::infinity();
    const auto entry = node.box.ray_entry(ray, limit);
    if (!entry) continue;
    if (node.count > 0) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
        const std::uint32_t tri = order_[i];
        const auto t = ray_triangle(ray, v[tris[tri][0]], v[tris[tri][1]], v[tris[tri][2]]);
        if (!t) continue;
        if (!best || *t < best->distance || (*t == best->distance && tri < best->triangle)) {
          best = RayHit{ray.at(*t), *t, tri};
        }
      }
    } else {
      stack[top++] = node.right;
      stack[top++] = node.first;
    }
  }
  return best;
}

std::vector<double> MeshIndex::all_hits(const Ray& ray, double t_max) const {
  // (t, +1 leaving / -1 entering). A ray through a shared edge or vertex hits
  // several triangles at the same t; such a cluster is one crossing when the
  // facings agree and none when they cancel (a graze).
  std::vector<std::pair<double, int>> raw;
  if (mesh_.empty()) return {};
  const auto& v = mesh_.vertices();
  const auto& tris = mesh_.triangles();
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (!node.box.ray_entry(ray, t_max)) continue;
    if (node.count > 0) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
        const std::uint32_t tri = order_[i];
        const Vec3& a = v[tris[tri][0]];
        const Vec3& b = v[tris[tri][1]];
        const Vec3& c = v[tris[tri][2]];
        const auto t = ray_triangle(ray, a, b, c);
        if (t && *t <= t_max) raw.emplace_back(*t, ray.direction.dot((b - a).cross(c - a)) > 0.0 ? 1 : -1);
      }
    } else {
      stack[top++] = node.right;
      stack[top++] = node.first;
    }
  }
  std::sort(raw.begin(), raw.end());
  const double eps = 1e-9 * std::max(1.0, (bounds().hi - bounds().lo).maxCoeff());
  std::vector<double> hits;
  for (std::size_t i = 0; i < raw.size();) {
    std::size_t j = i;
    int facing = 0;
    while (j < raw.size() && raw[j].first - raw[i].first <= eps) facing += raw[j++].second;
    if (facing != 0) hits.push_back(raw[i].first);
    i = j;
  }
  return hits;
}

double MeshIndex::segment_distance(const Vec3& p0, const Vec3& p1, double cutoff) const {
  double best = std::numeric_limits<double>::infinity();
  if (mesh_.empty()) return best;
  const auto& v = mesh_.vertices();
  const auto& tris = mesh_.triangles();
  const Aabb sbox = segment_box(p0, p1);
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    const double lower = node.box.distance(sbox);
    if (lower >= best || lower > cutoff) continue;
    if (node.count > 0) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
        const std::uint32_t tri = order_[i];
        if (tri_boxes_[tri].distance(sbox) >= best) continue;
        best = std::min(best, segment_triangle_distance(p0, p1, v[tris[tri][0]], v[tris[tri][1]], v[tris[tri][2]]));
        if (best == 0.0) return 0.0;
      }
    } else {
      const double dl = nodes_[node.first].box.distance(sbox);
      const double dr = nodes_[node.right].box.distance(sbox);
      // Visit the closer child first.
      if (dl <= dr) {
        stack[top++] = node.right;
        stack[top++] = node.first;
      } else {
        stack[top++] = node.first;
        stack[top++] = node.right;
      }
    }
  }
  return best;
}

bool MeshIndex::contains(const Vec3& p) const {
  if (mesh_.empty() || !bounds().contains(p)) return false;
  const Ray ray{p, parity_direction()};
  const auto hits = all_hits(ray, std::numeric_limits<double>::infinity());
  return hits.size() % 2 == 1;
}

double MeshIndex::inside_length(const Vec3& p0, const Vec3& p1) const {
  const Vec3 d = p1 - p0;
  const double len = d.norm();
  if (len <= 0.0) return 0.0;
  Aabb sbox = segment_box(p0, p1);
  if (mesh_.empty() || sbox.distance(bounds()) > 0.0) return 0.0;
  const Ray ray{p0, d / len};
  const auto hits = all_hits(ray, len);
  bool inside = contains(p0);
  double total = 0.0;
  double last = 0.0;
  for (double t : hits) {
    if (inside) total += t - last;
    inside = !inside;
    last = t;
  }
  if (inside) total += len - last;
  return total;
}

}  // namespace needleplan
