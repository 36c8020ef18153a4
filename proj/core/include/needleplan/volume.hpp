#pragma once

// CT-like volume container and the image operations built on it.
//
// Voxel (i, j, k) sits at origin + (i*sx, j*sy, k*sz) in the CT frame; x varies
// fastest in memory. HU values are stored as int16 exactly as on disk.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "needleplan/geometry.hpp"

namespace needleplan {

constexpr double kAirHu = -1000.0;
constexpr double kSliceSentinel = -1024.0;
constexpr double kMinHu = -1024.0;
constexpr double kMaxHu = 4095.0;

class Volume {
 public:
  Volume() = default;
  /// Throws InvalidInput when dims < 2, spacing <= 0 or data size mismatches.
  Volume(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, std::vector<std::int16_t> data);
  /// Constant-filled volume.
  Volume(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, std::int16_t fill);

  const std::array<int, 3>& dims() const noexcept { return dims_; }
  const Vec3& spacing() const noexcept { return spacing_; }
  const Vec3& origin() const noexcept { return origin_; }
  const std::vector<std::int16_t>& data() const noexcept { return data_; }
  std::vector<std::int16_t>& mutable_data() noexcept { return data_; }

  std::size_t voxel_count() const noexcept { return data_.size(); }
  std::size_t index(int i, int j, int k) const noexcept {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * k);
  }
  std::int16_t at(int i, int j, int k) const noexcept { return data_[index(i, j, k)]; }
  Vec3 voxel_position(int i, int j, int k) const {
    return origin_ + Vec3(i * spacing_.x(), j * spacing_.y(), k * spacing_.z());
  }
  /// Continuous voxel coordinates of a CT-frame point.
  Vec3 to_grid(const Vec3& p) const { return (p - origin_).cwiseQuotient(spacing_); }
  /// Bounding box of the voxel-center lattice.
  Aabb bounds() const;
  bool contains(const Vec3& p) const;

 private:
  std::array<int, 3> dims_{2, 2, 2};
  Vec3 spacing_ = Vec3::Ones();
  Vec3 origin_ = Vec3::Zero();
  std::vector<std::int16_t> data_ = std::vector<std::int16_t>(8, 0);
};

struct WindowLevel {
  double center = 40.0;
  double width = 400.0;

  void validate() const;
  /// Linear ramp onto [0, 1], clamped.
  double map(double hu) const;
};

/// Trilinear interpolation; exact voxel value at voxel centers. Throws OutOfBounds.
double sample_trilinear(const Volume& v, const Vec3& p);

struct SliceImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major: pixels[j * width + i]

  double at(int i, int j) const { return pixels[static_cast<std::size_t>(j) * width + i]; }
};

/// Reslices along an arbitrary plane. Out-of-bounds pixels hold kSliceSentinel
/// (or its windowed intensity when a window is given).
SliceImage extract_slice(const Volume& v, const SlicePlane& plane, const WindowLevel* window = nullptr);

/// Exact maximum of the trilinear field along [a, b]: the segment is split at
/// voxel-cell boundaries and the cubic restriction maximized in every piece.
double max_hu_along_segment(const Volume& v, const Vec3& a, const Vec3& b);

struct SegmentedBlob {
  Vec3 centroid;
  std::size_t voxel_count = 0;
  double equivalent_radius = 0.0;
};

/// 26-connected components of voxels strictly above `threshold`; sorted by
/// descending voxel count, then lexicographic centroid.
std::vector<SegmentedBlob> segment_high_density_blobs(const Volume& v, double threshold,
                                                      std::size_t min_blob_voxels = 4);

constexpr double kDefaultSkinIso = -300.0;
constexpr double kDefaultBallThreshold = 2000.0;

/// Isosurface (marching tetrahedra over a Kuhn split of each voxel cell) at `iso`,
/// largest connected component only, triangles wound outward. Throws EmptySurface.
TriMesh extract_skin_mesh(const Volume& v, double iso = kDefaultSkinIso);

// ---------------------------------------------------------------------------
// Synthetic phantoms

struct OrganSpec {
  std::string name;
  Vec3 center = Vec3::Zero();
  double radius = 10.0;
  double hu = 60.0;
};

struct RibSpec {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::UnitX();
  double radius = 5.0;
  double hu = 1200.0;
};

struct BallSpec {
  Vec3 center = Vec3::Zero();
  double radius = 2.0;
};

struct PhantomSpec {
  Vec3 body_center = Vec3::Zero();
  Vec3 body_semi_axes = Vec3(140.0, 100.0, 150.0);
  double body_hu = 40.0;
  std::vector<OrganSpec> organs;
  std::vector<RibSpec> ribs;
  std::vector<BallSpec> balls;  // steel balls of the registration grid, CT frame
  double ball_hu = 3000.0;
  double noise_sigma = 0.0;

  /// Throws InvalidSpec when organs leave the body or HU values are out of range.
  void validate() const;
  bool inside_body(const Vec3& p) const;
};

struct GroundTruth {
  std::vector<OrganSpec> organs;
  std::vector<BallSpec> balls;
};

/// Rasterizes the spec at voxel centers. Priority: ball > bone > organ > body > air.
/// Deterministic for a fixed seed on every platform.
Volume synthesize_phantom(const PhantomSpec& spec, std::array<int, 3> dims, const Vec3& spacing, std::uint64_t seed,
                          GroundTruth* truth = nullptr);
/// Same, with an explicit lattice origin instead of centering on the body.
Volume synthesize_phantom(const PhantomSpec& spec, std::array<int, 3> dims, const Vec3& spacing, const Vec3& origin,
                          std::uint64_t seed, GroundTruth* truth = nullptr);

// ---------------------------------------------------------------------------
// File formats

/// Writes `<prefix>.vol` (little-endian int16) and `<prefix>.volmeta`.
void write_volume(const Volume& v, const std::filesystem::path& prefix);
Volume read_volume(const std::filesystem::path& prefix);

std::string format_ground_truth(const GroundTruth& truth);
GroundTruth parse_ground_truth(const std::string& text);

}  // namespace needleplan
