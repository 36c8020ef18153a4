#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "needleplan/volume.hpp"

namespace needleplan {

namespace {

// Six tetrahedra of the Kuhn split sharing the cell diagonal 0 -> 7. Corner bits:
// bit0 = +x, bit1 = +y, bit2 = +z. Every cell face is cut along the diagonal
// from its lowest to its highest corner, so neighbouring cells agree and the
// resulting surface is closed.
constexpr int kTets[6][4] = {
    {0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7}, {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7},
};

struct UnionFind {
  std::vector<std::uint32_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

TriMesh extract_skin_mesh(const Volume& v, double iso) {
  // Stored values are integers; keep the level off the integer lattice so that
  // no surface vertex coincides with a voxel center.
  const double level = std::abs(iso - std::round(iso)) < 1e-3 ? iso + 1e-3 : iso;
  const auto [nx, ny, nz] = v.dims();
  const auto& data = v.data();

  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  const std::uint64_t total = data.size();

  auto vertex_on_edge = [&](std::size_t ga, std::size_t gb) -> std::uint32_t {
    if (ga > gb) std::swap(ga, gb);
    const std::uint64_t key = static_cast<std::uint64_t>(ga) * total + gb;
    auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<std::uint32_t>(vertices.size()));
    if (inserted) {
      auto pos = [&](std::size_t g) {
        const int i = static_cast<int>(g % nx);
        const int j = static_cast<int>((g / nx) % ny);
        const int k = static_cast<int>(g / (static_cast<std::size_t>(nx) * ny));
        return v.voxel_position(i, j, k);
      };
      const double va = data[ga], vb = data[gb];
      const double t = (level - va) / (vb - va);
      vertices.push_back(pos(ga) + t * (pos(gb) - pos(ga)));
    }
    return it->second;
  };

  auto emit = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c, const Vec3& outward) {
    const Vec3 n = (vertices[b] - vertices[a]).cross(vertices[c] - vertices[a]);
    if (n.dot(outward) < 0.0) std::swap(b, c);
    triangles.push_back({a, b, c});
  };

  std::size_t corner_index[8];
  double corner_value[8];
  Vec3 corner_pos[8];
  for (int k = 0; k + 1 < nz; ++k) {
    for (int j = 0; j + 1 < ny; ++j) {
      for (int i = 0; i + 1 < nx; ++i) {
        int inside_count = 0;
        for (int c = 0; c < 8; ++c) {
          const int ci = i + (c & 1), cj = j + ((c >> 1) & 1), ck = k + ((c >> 2) & 1);
          corner_index[c] = v.index(ci, cj, ck);
          corner_value[c] = data[corner_index[c]];
          inside_count += corner_value[c] > level;
        }
        if (inside_count == 0 || inside_count == 8) continue;
        for (int c = 0; c < 8; ++c) {
          corner_pos[c] = v.voxel_position(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
        }
        for (const auto& tet : kTets) {
          int in[4], out[4];
          int n_in = 0, n_out = 0;
          for (int c : tet) (corner_value[c] > level ? in[n_in++] : out[n_out++]) = c;
          if (n_in == 0 || n_out == 0) continue;
          Vec3 in_center = Vec3::Zero(), out_center = Vec3::Zero();
          for (int a = 0; a < n_in; ++a) in_center += corner_pos[in[a]];
          for (int a = 0; a < n_out; ++a) out_center += corner_pos[out[a]];
          const Vec3 outward = out_center / n_out - in_center / n_in;
          auto edge = [&](int a, int b) { return vertex_on_edge(corner_index[a], corner_index[b]); };
          if (n_in == 1) {
            emit(edge(in[0], out[0]), edge(in[0], out[1]), edge(in[0], out[2]), outward);
          } else if (n_out == 1) {
            emit(edge(out[0], in[0]), edge(out[0], in[1]), edge(out[0], in[2]), outward);
          } else {
            const auto p00 = edge(in[0], out[0]);
            const auto p01 = edge(in[0], out[1]);
            const auto p11 = edge(in[1], out[1]);
            const auto p10 = edge(in[1], out[0]);
            emit(p00, p01, p11, outward);
            emit(p00, p11, p10, outward);
          }
        }
      }
    }
  }

  if (triangles.empty()) throw Error(ErrorCode::EmptySurface, "volume never crosses the iso level");

  // Keep the connected component with the most triangles.
  UnionFind uf(vertices.size());
  for (const auto& t : triangles) {
    uf.unite(t[0], t[1]);
    uf.unite(t[1], t[2]);
  }
  std::unordered_map<std::uint32_t, std::size_t> component_size;
  for (const auto& t : triangles) ++component_size[uf.find(t[0])];
  std::uint32_t best_root = 0;
  std::size_t best_size = 0;
  for (const auto& [root, size] : component_size) {
    if (size > best_size || (size == best_size && root < best_root)) {
      best_root = root;
      best_size = size;
    }
  }

  std::vector<std::uint32_t> remap(vertices.size(), UINT32_MAX);
  std::vector<Vec3> kept_vertices;
  std::vector<Triangle> kept_triangles;
  kept_triangles.reserve(best_size);
  for (const auto& t : triangles) {
    if (uf.find(t[0]) != best_root) continue;
    Triangle out;
    for (int c = 0; c < 3; ++c) {
      auto& slot = remap[t[c]];
      if (slot == UINT32_MAX) {
        slot = static_cast<std::uint32_t>(kept_vertices.size());
        kept_vertices.push_back(vertices[t[c]]);
      }
      out[c] = slot;
    }
    kept_triangles.push_back(out);
  }
  return TriMesh(std::move(kept_vertices), std::move(kept_triangles));
}

}  // namespace needleplan
