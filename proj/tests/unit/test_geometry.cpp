#include <gtest/gtest.h>

#include "needleplan/geometry.hpp"
#include "needleplan/kdtree.hpp"
#include "support.hpp"

using namespace needleplan;
using testing_support::angle_deg;
using testing_support::random_transform;

TEST(RigidTransform, ComposeRequiresMatchingInnerFrames) {
  const auto ab = RigidTransform::identity(Frame::B, Frame::C);
  const auto ct = RigidTransform::identity(Frame::CT, Frame::SB);
  try {
    (void)compose(ab, ct);
    FAIL() << "expected FrameError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FrameError);
  }
}

TEST(RigidTransform, ComposeMapsThroughBothTransforms) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_transform(rng, Frame::B, Frame::C);
    const auto b = random_transform(rng, Frame::C, Frame::M);
    const Vec3 p = rng.gaussian_vec(100.0);
    const auto ab = compose(a, b);
    EXPECT_EQ(ab.from(), FrameId(Frame::B));
    EXPECT_EQ(ab.to(), FrameId(Frame::M));
    EXPECT_LT((ab.apply(p) - a.apply(b.apply(p))).norm(), 1e-9);
    // Matrix product oracle.
    EXPECT_LT((ab.matrix() - a.matrix() * b.matrix()).norm(), 1e-9);
  }
}

TEST(RigidTransform, InverseComposesToIdentity) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto t = random_transform(rng, Frame::CT, Frame::SB);
    const auto id = compose(invert(t), t);
    EXPECT_EQ(id.from(), FrameId(Frame::SB));
    EXPECT_EQ(id.to(), FrameId(Frame::SB));
    EXPECT_LT((id.matrix() - Mat4::Identity()).norm(), 1e-9);
  }
}

TEST(RigidTransform, CompositionIsAssociative) {
  Rng rng(5);
  const auto a = random_transform(rng, Frame::B, Frame::C);
  const auto b = random_transform(rng, Frame::C, Frame::RM);
  const auto c = random_transform(rng, Frame::RM, Frame::SB);
  EXPECT_LT((compose(compose(a, b), c).matrix() - compose(a, compose(b, c)).matrix()).norm(), 1e-9);
}

TEST(NearestRotation, ProjectsNoisyRotationsOntoSo3) {
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const Mat3 r = rng.rotation();
    Mat3 noisy = r;
    for (int k = 0; k < 9; ++k) noisy.data()[k] += rng.gaussian(1e-3);
    const Mat3 p = nearest_rotation(noisy);
    EXPECT_LT((p.transpose() * p - Mat3::Identity()).norm(), 1e-12);
    EXPECT_NEAR(p.determinant(), 1.0, 1e-12);
    // The projection is no farther from the input than the true rotation.
    EXPECT_LE((p - noisy).norm(), (r - noisy).norm() + 1e-12);
  }
}

TEST(NearestRotation, ReflectionBecomesProperRotation) {
  const Mat3 reflect = Eigen::Vector3d(1, 1, -1).asDiagonal();
  EXPECT_NEAR(nearest_rotation(reflect).determinant(), 1.0, 1e-12);
}

TEST(NearestRotation, SingularInputRejected) {
  try {
    (void)nearest_rotation(Mat3::Zero());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateInput);
  }
}

TEST(AxisAngle, LogRoundTrip) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const Vec3 axis = rng.unit_vector();
    const double angle = rng.uniform(0.0, 3.0);
    const Mat3 r = axis_angle(axis, angle);
    EXPECT_NEAR(rotation_angle(r), angle, 1e-9);
    EXPECT_LT((rotation_log(r) - axis * angle).norm(), 1e-9);
  }
}

TEST(PointLineDistance, MatchesCrossProductFormula) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p = rng.gaussian_vec(50), a = rng.gaussian_vec(50), d = rng.unit_vector();
    EXPECT_NEAR(point_line_distance(p, a, d), (p - a).cross(d).norm(), 1e-9);
  }
  EXPECT_DOUBLE_EQ(point_line_distance(Vec3(0, 2, 0), Vec3::Zero(), Vec3::UnitX()), 2.0);
}

TEST(TriMesh, CubeIsWatertightWithOutwardNormals) {
  const TriMesh cube = testing_support::unit_cube();
  EXPECT_TRUE(cube.is_watertight());
  EXPECT_NEAR(cube.surface_area(), 6.0, 1e-12);
  const auto normals = cube.vertex_normals();
  for (std::size_t i = 0; i < cube.vertex_count(); ++i) {
    EXPECT_GT(normals[i].dot(cube.vertices()[i] - Vec3::Constant(0.5)), 0.0);
  }
}

TEST(TriMesh, RejectsBadIndices) {
  EXPECT_THROW(TriMesh({Vec3::Zero(), Vec3::UnitX()}, {{0, 1, 2}}), Error);
}

TEST(RayMesh, HitsCubeFace) {
  const TriMesh cube = testing_support::unit_cube();
  const auto hit = ray_mesh_intersect(Ray::make(Vec3(0.5, 0.5, -2.0), Vec3::UnitZ()), cube);
  ASSERT_TRUE(hit);
  EXPECT_NEAR(hit->distance, 2.0, 1e-12);
  EXPECT_LT((hit->point - Vec3(0.5, 0.5, 0.0)).norm(), 1e-12);
  EXPECT_FALSE(ray_mesh_intersect(Ray::make(Vec3(0.5, 0.5, -2.0), -Vec3::UnitZ()), cube));
}

TEST(RayMesh, IndexMatchesExhaustiveTriangleLoop) {
  const auto& skin = testing_support::desk().skin;
  const TriMesh& mesh = skin->mesh();
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const Ray ray = Ray::make(rng.gaussian_vec(60.0) + Vec3(0, 0, 0), rng.unit_vector());
    // Oracle: plain loop over every triangle.
    std::optional<double> best;
    for (const auto& t : mesh.triangles()) {
      const auto s = ray_triangle(ray, mesh.vertices()[t[0]], mesh.vertices()[t[1]], mesh.vertices()[t[2]]);
      if (s && (!best || *s < *best)) best = s;
    }
    const auto fast = skin->intersect(ray);
    ASSERT_EQ(best.has_value(), fast.has_value());
    if (best) EXPECT_NEAR(fast->distance, *best, 1e-9);
  }
}

TEST(MeshIndex, SegmentDistanceMatchesBruteForce) {
  const TriMesh cube = testing_support::unit_cube();
  const MeshIndex index(cube);
  Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    const Vec3 a = rng.gaussian_vec(2.0), b = rng.gaussian_vec(2.0);
    double oracle = std::numeric_limits<double>::infinity();
    for (const auto& t : cube.triangles()) {
      oracle = std::min(oracle, segment_triangle_distance(a, b, cube.vertices()[t[0]], cube.vertices()[t[1]],
                                                          cube.vertices()[t[2]]));
    }
    EXPECT_NEAR(index.segment_distance(a, b), oracle, 1e-9);
  }
}

TEST(MeshIndex, ContainsAndInsideLengthOnCube) {
  const MeshIndex index(testing_support::unit_cube());
  EXPECT_TRUE(index.contains(Vec3(0.5, 0.5, 0.5)));
  EXPECT_FALSE(index.contains(Vec3(1.5, 0.5, 0.5)));
  EXPECT_NEAR(index.inside_length(Vec3(-1, 0.5, 0.5), Vec3(2, 0.5, 0.5)), 1.0, 1e-9);
  EXPECT_NEAR(index.inside_length(Vec3(0.25, 0.5, 0.5), Vec3(3, 0.5, 0.5)), 0.75, 1e-9);
  EXPECT_NEAR(index.inside_length(Vec3(2, 2, 2), Vec3(3, 3, 3)), 0.0, 1e-12);
}

TEST(SegmentDistances, AgreeWithDenseSampling) {
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    const Vec3 p0 = rng.gaussian_vec(1), p1 = rng.gaussian_vec(1), q0 = rng.gaussian_vec(1), q1 = rng.gaussian_vec(1);
    double sampled = std::numeric_limits<double>::infinity();
    for (int s = 0; s <= 400; ++s) {
      for (int t = 0; t <= 400; t += 4) {
        sampled = std::min(sampled, ((p0 + (p1 - p0) * s / 400.0) - (q0 + (q1 - q0) * t / 400.0)).norm());
      }
    }
    const double exact = segment_segment_distance(p0, p1, q0, q1);
    EXPECT_LE(exact, sampled + 1e-12);
    EXPECT_NEAR(exact, sampled, 0.05);
  }
}

TEST(Aabb, SignedDistance) {
  const Aabb box{Vec3::Zero(), Vec3::Ones()};
  EXPECT_NEAR(box.signed_distance(Vec3(0.5, 0.5, 0.5)), -0.5, 1e-12);
  EXPECT_NEAR(box.signed_distance(Vec3(2, 0.5, 0.5)), 1.0, 1e-12);
  EXPECT_NEAR(box.signed_distance(Vec3(2, 2, 0.5)), std::sqrt(2.0), 1e-12);
}

TEST(SlicePlane, ValidationRejectsDegenerateAxes) {
  SlicePlane p;
  p.axis_v = p.axis_u;
  EXPECT_THROW(p.validate(), Error);
  SlicePlane q;
  q.resolution = 0.0;
  EXPECT_THROW(q.validate(), Error);
}

TEST(KdTree, NearestMatchesLinearScan) {
  Rng rng(12);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) pts.push_back(rng.gaussian_vec(30));
  const KdTree tree(pts);
  for (int i = 0; i < 300; ++i) {
    const Vec3 q = rng.gaussian_vec(40);
    std::size_t best = 0;
    for (std::size_t k = 1; k < pts.size(); ++k) {
      if ((pts[k] - q).squaredNorm() < (pts[best] - q).squaredNorm()) best = k;
    }
    EXPECT_EQ(tree.nearest(q).first, best);
  }
}
