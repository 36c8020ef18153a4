#include <algorithm>
#include <cmath>
#include <vector>

#include "needleplan/volume.hpp"

namespace needleplan {

std::vector<SegmentedBlob> segment_high_density_blobs(const Volume& v, double threshold, std::size_t min_blob_voxels) {
  const auto [nx, ny, nz] = v.dims();
  const auto& data = v.data();
  std::vector<std::uint8_t> visited(data.size(), 0);
  std::vector<SegmentedBlob> blobs;
  std::vector<std::array<int, 3>> stack;
  const double voxel_volume = v.spacing().prod();

  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const std::size_t seed = v.index(i, j, k);
        if (visited[seed] || !(data[seed] > threshold)) continue;
        visited[seed] = 1;
        stack.push_back({i, j, k});
        Vec3 sum = Vec3::Zero();
        std::size_t count = 0;
        while (!stack.empty()) {
          const auto [x, y, z] = stack.back();
          stack.pop_back();
          sum += v.voxel_position(x, y, z);
          ++count;
          for (int dz = -1; dz <= 1; ++dz) {
            const int zz = z + dz;
            if (zz < 0 || zz >= nz) continue;
            for (int dy = -1; dy <= 1; ++dy) {
              const int yy = y + dy;
              if (yy < 0 || yy >= ny) continue;
              for (int dx = -1; dx <= 1; ++dx) {
                const int xx = x + dx;
                if (xx < 0 || xx >= nx) continue;
                const std::size_t idx = v.index(xx, yy, zz);
                if (visited[idx] || !(data[idx] > threshold)) continue;
                visited[idx] = 1;
                stack.push_back({xx, yy, zz});
              }
            }
          }
        }
        if (count < min_blob_voxels) continue;
        SegmentedBlob blob;
        blob.centroid = sum / static_cast<double>(count);
        blob.voxel_count = count;
        blob.equivalent_radius = std::cbrt(3.0 * static_cast<double>(count) * voxel_volume / (4.0 * kPi));
        blobs.push_back(blob);
      }
    }
  }

  std::sort(blobs.begin(), blobs.end(), [](const SegmentedBlob& a, const SegmentedBlob& b) {
    if (a.voxel_count != b.voxel_count) return a.voxel_count > b.voxel_count;
    return std::lexicographical_compare(a.centroid.data(), a.centroid.data() + 3, b.centroid.data(),
                                        b.centroid.data() + 3);
  });
  return blobs;
}

}  // namespace needleplan
