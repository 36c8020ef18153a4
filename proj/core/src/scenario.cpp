#include "needleplan/scenario.hpp"

#include <cmath>

#include "needleplan/random.hpp"

namespace needleplan {

PhantomSpec default_thorax_phantom() {
  PhantomSpec spec;
  spec.body_center = Vec3::Zero();
  spec.body_semi_axes = Vec3(140.0, 100.0, 150.0);
  spec.body_hu = 40.0;
  spec.organs = {
      {"liver", Vec3(-50.0, 0.0, -30.0), 40.0, 60.0},
      {"kidney", Vec3(60.0, -40.0, -50.0), 25.0, 35.0},
      {"lesion", Vec3(30.0, 30.0, 40.0), 12.0, 55.0},
  };
  // Rib rings: 12 chords of an ellipse inside each transverse section.
  for (double z : {-100.0, -60.0, 60.0, 100.0}) {
    const double section = std::sqrt(1.0 - (z / 150.0) * (z / 150.0));
    const double ax = 0.85 * 140.0 * section, ay = 0.85 * 100.0 * section;
    constexpr int kChords = 12;
    for (int k = 0; k < kChords; ++k) {
      const double t0 = 2.0 * kPi * k / kChords, t1 = 2.0 * kPi * (k + 1) / kChords;
      spec.ribs.push_back({Vec3(ax * std::cos(t0), ay * std::sin(t0), z), Vec3(ax * std::cos(t1), ay * std::sin(t1), z),
                           6.0, 1200.0});
    }
  }
  spec.noise_sigma = 0.0;
  return spec;
}

RigidTransform default_robot_placement() {
  Mat3 axes;  // columns: B axes expressed in CT
  axes << 1, 0, 0, 0, 0, 1, 0, -1, 0;
  return RigidTransform(axes, Vec3(-700.0, -200.0, 0.0), Frame::CT, Frame::B).inverse();
}

JointVector default_idle_configuration() {
  JointVector q;
  q << 0.0, 10.0, 0.0, -70.0, 0.0, 90.0, 0.0;
  return q;
}

DeskScene default_desk_scene() {
  DeskScene s;
  s.phantom = default_thorax_phantom();
  s.b_to_ct = default_robot_placement();
  s.gantry = {"gantry", Aabb{Vec3(-400.0, -400.0, 250.0), Vec3(400.0, 450.0, 600.0)}};
  s.boxes = {{"table", Aabb{Vec3(-250.0, -400.0, -1000.0), Vec3(250.0, -102.0, 1000.0)}}};
  s.idle = default_idle_configuration();
  int n = 1;
  for (const auto& organ : s.phantom.organs) s.targets.push_back({"T" + std::to_string(n++), organ.center, organ.name});
  return s;
}

DeskCase build_desk_case(const DeskScene& scene, const std::optional<RigidTransform>& b_to_ct_estimate) {
  DeskCase desk;
  desk.scene = scene;
  desk.volume = std::make_shared<const Volume>(
      synthesize_phantom(scene.phantom, scene.dims, scene.spacing, scene.seed, &desk.truth));
  desk.skin = std::make_shared<const MeshIndex>(extract_skin_mesh(*desk.volume));
  desk.context = make_context(desk, b_to_ct_estimate.value_or(scene.b_to_ct));
  return desk;
}

RobotContext make_context(const DeskCase& desk, const RigidTransform& b_to_ct) {
  RobotContext ctx;
  ctx.scene = std::make_shared<const CollisionScene>(desk.skin, desk.scene.gantry, desk.scene.boxes, b_to_ct);
  ctx.idle = desk.scene.idle;
  return ctx;
}

RigidTransform CalibrationTruth::b_to_ct() const {
  return compose(compose(compose(b_to_c, c_to_rm), rm_to_sb), sb_to_ct);
}

CalibrationTruth CalibrationTruth::for_placement(const RigidTransform& b_to_ct) {
  CalibrationTruth t;
  t.b_to_c = RigidTransform(axis_angle(Vec3(0.3, -0.5, 0.8).normalized(), 2.1), Vec3(1400.0, -300.0, 1100.0), Frame::B,
                            Frame::C);
  t.eef_to_m = RigidTransform(axis_angle(Vec3(1.0, 1.0, 0.0).normalized(), 0.4), Vec3(30.0, -20.0, 60.0), Frame::EEF,
                              Frame::M);
  t.c_to_tb = RigidTransform(axis_angle(Vec3(0.0, 1.0, 0.2).normalized(), 0.7), Vec3(-200.0, 900.0, 1500.0), Frame::C,
                             Frame::TB);
  t.rm_to_sb = RigidTransform(axis_angle(Vec3::UnitZ(), 0.15), Vec3(-40.0, 10.0, -25.0), Frame::RM, Frame::SB);
  Mat3 grid_axes;  // SB axes in CT: x -> x, y -> z, z -> -y
  grid_axes << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  t.sb_to_ct = RigidTransform(grid_axes, Vec3(0.0, 115.0, 0.0), Frame::CT, Frame::SB).inverse();
  t.c_to_rm = compose(compose(compose(t.b_to_c.inverse(), b_to_ct), t.sb_to_ct.inverse()), t.rm_to_sb.inverse());
  return t;
}

RigidTransform perturb(const RigidTransform& t, double rot_deg, double trans_mm, Rng& rng) {
  const Vec3 axis = rng.unit_vector();
  const double angle = deg2rad(rng.gaussian(rot_deg));
  const Vec3 shift = rng.gaussian_vec(trans_mm);
  return RigidTransform(axis_angle(axis, angle) * t.rotation(), t.translation() + shift, t.from(), t.to());
}

Volume synthesize_grid_scan(const GridModel& grid, const RigidTransform& ct_to_sb) {
  const auto balls = grid.placed(ct_to_sb);
  Aabb box;
  for (const auto& b : balls) {
    box.extend(b.center - Vec3::Constant(b.radius + 3.0));
    box.extend(b.center + Vec3::Constant(b.radius + 3.0));
  }
  const Vec3 origin = box.lo.array().floor();
  std::array<int, 3> dims{};
  for (int k = 0; k < 3; ++k) dims[k] = static_cast<int>(std::ceil(box.hi[k] - origin[k])) + 1;
  Volume v(dims, Vec3::Ones(), origin, static_cast<std::int16_t>(kAirHu));
  auto& data = v.mutable_data();
  for (const auto& b : balls) {
    const Vec3 lo = v.to_grid(b.center - Vec3::Constant(b.radius));
    const Vec3 hi = v.to_grid(b.center + Vec3::Constant(b.radius));
    for (int k = std::max(0, static_cast<int>(std::floor(lo.z()))); k <= std::min(dims[2] - 1, static_cast<int>(std::ceil(hi.z()))); ++k) {
      for (int j = std::max(0, static_cast<int>(std::floor(lo.y()))); j <= std::min(dims[1] - 1, static_cast<int>(std::ceil(hi.y()))); ++j) {
        for (int i = std::max(0, static_cast<int>(std::floor(lo.x()))); i <= std::min(dims[0] - 1, static_cast<int>(std::ceil(hi.x()))); ++i) {
          if ((v.voxel_position(i, j, k) - b.center).norm() <= b.radius) data[v.index(i, j, k)] = 3000;
        }
      }
    }
  }
  return v;
}

CalibrationSession simulate_calibration(const CalibrationTruth& truth, const KinematicChain& chain,
                                        const CalibrationNoise& noise, std::uint64_t seed, int poses) {
  Rng rng(seed);
  CalibrationSession s;
  JointVector nominal;
  nominal << 0.0, 30.0, 0.0, -60.0, 0.0, 60.0, 0.0;
  const RigidTransform c_to_b = truth.b_to_c.inverse();
  for (int i = 0; i < poses; ++i) {
    JointVector q = nominal;
    for (int j = 0; j < kJointCount; ++j) q[j] += rng.uniform(-25.0, 25.0);
    const RigidTransform a = forward_kinematics(chain, chain.clamp(q));
    const RigidTransform b = compose(compose(c_to_b, a), truth.eef_to_m);
    s.samples.push_back({a, perturb(b, noise.tracker_rotation, noise.tracker_translation, rng)});
  }
  s.hand_eye = qr24_hand_eye(s.samples);

  const RigidTransform c_to_tb = perturb(truth.c_to_tb, noise.tracker_rotation, noise.tracker_translation, rng);
  const RigidTransform c_to_rm = perturb(truth.c_to_rm, noise.tracker_rotation, noise.tracker_translation, rng);

  const GridModel grid = GridModel::standard();
  const Volume scan = synthesize_grid_scan(grid, truth.sb_to_ct.inverse());
  auto blobs = segment_high_density_blobs(scan, kDefaultBallThreshold, 4);
  for (auto& b : blobs) b.centroid += rng.gaussian_vec(noise.centroid);
  s.grid = register_grid(blobs, grid);

  s.chain.b_to_tb = compose(s.hand_eye.z, c_to_tb);
  s.chain.tb_to_c = c_to_tb.inverse();
  s.chain.c_to_rm = c_to_rm;
  s.chain.rm_to_sb = truth.rm_to_sb;
  s.chain.sb_to_ct = s.grid.sb_to_ct;
  s.chain.residuals = {{"hand_eye", s.hand_eye.residual}, {"grid", s.grid.rms}};
  s.b_to_ct = chain_base_to_ct(s.chain);
  return s;
}

}  // namespace needleplan
