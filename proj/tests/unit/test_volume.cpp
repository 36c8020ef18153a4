#include <gtest/gtest.h>

#include <filesystem>

#include "needleplan/volume.hpp"
#include "support.hpp"

using namespace needleplan;

namespace {

// Independent trilinear oracle straight from the voxel array.
double oracle_trilinear(const Volume& v, const Vec3& p) {
  const Vec3 g = v.to_grid(p);
  const auto& d = v.dims();
  for (int k = 0; k < 3; ++k) {
    if (g[k] < -1e-9 || g[k] > d[k] - 1 + 1e-9) return kSliceSentinel;
  }
  const int i = std::clamp(static_cast<int>(std::floor(g.x())), 0, d[0] - 2);
  const int j = std::clamp(static_cast<int>(std::floor(g.y())), 0, d[1] - 2);
  const int k = std::clamp(static_cast<int>(std::floor(g.z())), 0, d[2] - 2);
  const double fx = g.x() - i, fy = g.y() - j, fz = g.z() - k;
  double sum = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
    sum += w * v.at(i + dx, j + dy, k + dz);
  }
  return sum;
}

Volume random_volume(std::uint64_t seed, std::array<int, 3> dims = {12, 10, 9}) {
  Rng rng(seed);
  std::vector<std::int16_t> data(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
  for (auto& x : data) x = static_cast<std::int16_t>(rng.uniform(-1000.0, 2000.0));
  return Volume(dims, Vec3(1.5, 2.0, 2.5), Vec3(-5.0, 3.0, 1.0), std::move(data));
}

}  // namespace

TEST(Volume, RejectsBadGeometry) {
  EXPECT_THROW(Volume({1, 4, 4}, Vec3::Ones(), Vec3::Zero(), std::int16_t{0}), Error);
  EXPECT_THROW(Volume({4, 4, 4}, Vec3(1, 0, 1), Vec3::Zero(), std::int16_t{0}), Error);
  EXPECT_THROW(Volume({4, 4, 4}, Vec3::Ones(), Vec3::Zero(), std::vector<std::int16_t>(10)), Error);
}

TEST(Trilinear, ExactAtVoxelCentersAndMatchesOracle) {
  const Volume v = random_volume(1);
  for (int k = 0; k < 9; k += 2) {
    for (int j = 0; j < 10; j += 3) {
      for (int i = 0; i < 12; i += 5) EXPECT_EQ(sample_trilinear(v, v.voxel_position(i, j, k)), v.at(i, j, k));
    }
  }
  Rng rng(2);
  const Aabb b = v.bounds();
  for (int n = 0; n < 500; ++n) {
    const Vec3 p(rng.uniform(b.lo.x(), b.hi.x()), rng.uniform(b.lo.y(), b.hi.y()), rng.uniform(b.lo.z(), b.hi.z()));
    EXPECT_NEAR(sample_trilinear(v, p), oracle_trilinear(v, p), 1e-9);
  }
  try {
    (void)sample_trilinear(v, b.hi + Vec3::Ones());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfBounds);
  }
}

TEST(Slice, NativeAxialSliceIsBitIdenticalToRawData) {
  const Volume v = random_volume(3);
  for (int k : {0, 4, 8}) {
    SlicePlane plane;
    plane.origin = v.voxel_position(0, 0, k);
    plane.axis_u = Vec3::UnitX();
    plane.axis_v = Vec3::UnitY();
    plane.resolution = 1.5;  // x spacing; only row 0 lands on voxel centers
    plane.extent_u = 11 * 1.5;
    plane.extent_v = 1.0;
    const auto img = extract_slice(v, plane);
    ASSERT_EQ(img.width, 12);
    for (int i = 0; i < 12; ++i) EXPECT_EQ(img.at(i, 0), static_cast<double>(v.at(i, 0, k)));
  }
}

TEST(Slice, IsotropicNativePlanesAlongEveryAxis) {
  const auto& vol = *testing_support::desk().volume;
  const double s = vol.spacing().x();
  const int n = vol.dims()[0];
  // Axial, coronal and sagittal through the middle of the volume.
  const std::array<std::pair<Vec3, Vec3>, 3> axes = {{{Vec3::UnitX(), Vec3::UnitY()},
                                                      {Vec3::UnitX(), Vec3::UnitZ()},
                                                      {Vec3::UnitY(), Vec3::UnitZ()}}};
  for (int a = 0; a < 3; ++a) {
    SlicePlane plane;
    const int mid = n / 2;
    plane.origin = a == 0 ? vol.voxel_position(0, 0, mid) : a == 1 ? vol.voxel_position(0, mid, 0) : vol.voxel_position(mid, 0, 0);
    plane.axis_u = axes[a].first;
    plane.axis_v = axes[a].second;
    plane.resolution = s;
    plane.extent_u = plane.extent_v = (n - 1) * s;
    const auto img = extract_slice(vol, plane);
    ASSERT_EQ(img.width, n);
    int mismatches = 0;
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const double raw = a == 0 ? vol.at(i, j, mid) : a == 1 ? vol.at(i, mid, j) : vol.at(mid, i, j);
        mismatches += img.at(i, j) != raw;
      }
    }
    EXPECT_EQ(mismatches, 0) << "plane " << a;
  }
}

TEST(Slice, ObliquePlaneMatchesPerPixelOracle) {
  const Volume v = random_volume(4, {20, 18, 16});
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat3 r = rng.rotation();
    SlicePlane plane;
    plane.origin = v.bounds().center() - 8.0 * r.col(0) - 8.0 * r.col(1);
    plane.axis_u = r.col(0);
    plane.axis_v = r.col(1);
    plane.extent_u = plane.extent_v = 16.0;
    plane.resolution = 0.7;
    const auto img = extract_slice(v, plane);
    for (int j = 0; j < img.height; ++j) {
      for (int i = 0; i < img.width; ++i) {
        EXPECT_NEAR(img.at(i, j), oracle_trilinear(v, plane.pixel_position(i, j)), 1e-9);
      }
    }
  }
}

TEST(Slice, WindowMapsOntoUnitRange) {
  const Volume v = random_volume(6);
  SlicePlane plane;
  plane.origin = v.voxel_position(0, 0, 3);
  plane.extent_u = 10;
  plane.extent_v = 10;
  const WindowLevel w{100.0, 800.0};
  const auto raw = extract_slice(v, plane);
  const auto mapped = extract_slice(v, plane, &w);
  for (std::size_t k = 0; k < raw.pixels.size(); ++k) {
    EXPECT_DOUBLE_EQ(mapped.pixels[k], std::clamp((raw.pixels[k] - (100.0 - 400.0)) / 800.0, 0.0, 1.0));
  }
  EXPECT_THROW((WindowLevel{0.0, 0.0}.validate()), Error);
}

TEST(MaxHu, NeverBelowDenseSampling) {
  const Volume v = random_volume(7, {16, 16, 16});
  Rng rng(8);
  const Aabb b = v.bounds();
  for (int n = 0; n < 200; ++n) {
    auto pick = [&] {
      return Vec3(rng.uniform(b.lo.x(), b.hi.x()), rng.uniform(b.lo.y(), b.hi.y()), rng.uniform(b.lo.z(), b.hi.z()));
    };
    const Vec3 a = pick(), c = pick();
    // Dense enough that the sampling gap stays below 1 HU even at a gradient kink.
    double sampled = -1e300;
    for (int s = 0; s <= 100000; ++s) sampled = std::max(sampled, oracle_trilinear(v, a + (c - a) * (s / 100000.0)));
    const double exact = max_hu_along_segment(v, a, c);
    EXPECT_GE(exact, sampled - 1e-9);
    EXPECT_LT(exact - sampled, 1.0);
  }
}

TEST(MaxHu, ConstantVolumeAndDegenerateSegment) {
  const Volume v({4, 4, 4}, Vec3::Ones(), Vec3::Zero(), std::int16_t{42});
  EXPECT_DOUBLE_EQ(max_hu_along_segment(v, Vec3(0.5, 0.5, 0.5), Vec3(2.5, 1.0, 2.0)), 42.0);
  EXPECT_DOUBLE_EQ(max_hu_along_segment(v, Vec3(1, 1, 1), Vec3(1, 1, 1)), 42.0);
}

TEST(Blobs, RecoverSphereCentroidsAndSizes) {
  PhantomSpec spec;
  spec.body_semi_axes = Vec3(60, 60, 60);
  spec.balls = {{Vec3(-20, 0, 0), 5.0}, {Vec3(20, 10, -5), 5.0}, {Vec3(0, -25, 15), 3.0}};
  GroundTruth truth;
  const Volume v = synthesize_phantom(spec, {64, 64, 64}, Vec3::Constant(2.0), 1, &truth);
  const auto blobs = segment_high_density_blobs(v, kDefaultBallThreshold);
  ASSERT_EQ(blobs.size(), 3u);
  for (const auto& ball : spec.balls) {
    double best = 1e9;
    for (const auto& b : blobs) best = std::min(best, (b.centroid - ball.center).norm());
    EXPECT_LT(best, 1.0);
  }
  // Sorted by size: the two 5 mm balls come first.
  EXPECT_GE(blobs[1].voxel_count, blobs[2].voxel_count);
  EXPECT_GT(blobs[0].equivalent_radius, blobs[2].equivalent_radius);
}

TEST(Phantom, DeterministicAndNoiseFree) {
  const auto spec = default_thorax_phantom();
  const Volume a = synthesize_phantom(spec, {32, 32, 32}, Vec3::Constant(10.0), 5);
  const Volume b = synthesize_phantom(spec, {32, 32, 32}, Vec3::Constant(10.0), 5);
  EXPECT_EQ(a.data(), b.data());
  auto noisy = spec;
  noisy.noise_sigma = 10.0;
  const Volume c = synthesize_phantom(noisy, {32, 32, 32}, Vec3::Constant(10.0), 5);
  const Volume d = synthesize_phantom(noisy, {32, 32, 32}, Vec3::Constant(10.0), 6);
  EXPECT_NE(c.data(), d.data());
}

TEST(Phantom, OrgansOutsideBodyRejected) {
  auto spec = default_thorax_phantom();
  spec.organs.push_back({"stray", Vec3(500, 0, 0), 10.0, 50.0});
  try {
    spec.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidSpec);
  }
}

TEST(SkinMesh, DeskSkinIsClosedAndEnclosesOrgans) {
  const auto& d = testing_support::desk();
  const TriMesh& mesh = d.skin->mesh();
  EXPECT_TRUE(mesh.is_watertight());
  for (const auto& organ : d.scene.phantom.organs) EXPECT_TRUE(d.skin->contains(organ.center)) << organ.name;
  EXPECT_FALSE(d.skin->contains(Vec3(0, 140, 0)));
  // The body is a binary mask, so the isosurface is stepped: its area overshoots the
  // ellipsoid while the enclosed volume stays close.
  double enclosed = 0.0;
  for (const auto& t : mesh.triangles()) {
    enclosed += mesh.vertices()[t[0]].dot(mesh.vertices()[t[1]].cross(mesh.vertices()[t[2]])) / 6.0;
  }
  EXPECT_NEAR(enclosed / (4.0 / 3.0 * kPi * 140 * 100 * 150), 1.0, 0.02);
}

TEST(SkinMesh, EmptyVolumeThrows) {
  const Volume v({8, 8, 8}, Vec3::Ones(), Vec3::Zero(), static_cast<std::int16_t>(kAirHu));
  try {
    (void)extract_skin_mesh(v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySurface);
  }
}

TEST(VolumeIo, RoundTrip) {
  const Volume v = random_volume(9);
  const auto prefix = std::filesystem::temp_directory_path() / "needleplan_volume_roundtrip";
  write_volume(v, prefix);
  const Volume r = read_volume(prefix);
  EXPECT_EQ(r.dims(), v.dims());
  EXPECT_EQ(r.spacing(), v.spacing());
  EXPECT_EQ(r.origin(), v.origin());
  EXPECT_EQ(r.data(), v.data());
}

TEST(GroundTruthIo, RoundTrip) {
  GroundTruth t;
  t.organs = {{"liver", Vec3(1.25, -2, 3), 40, 60}};
  t.balls = {{Vec3(0.1, 0.2, 0.3), 2.0}};
  const auto back = parse_ground_truth(format_ground_truth(t));
  ASSERT_EQ(back.organs.size(), 1u);
  EXPECT_EQ(back.organs[0].name, "liver");
  EXPECT_EQ(back.organs[0].center, t.organs[0].center);
  ASSERT_EQ(back.balls.size(), 1u);
  EXPECT_EQ(back.balls[0].center, t.balls[0].center);
}
