#include <gtest/gtest.h>

#include "needleplan/robot.hpp"
#include "needleplan/text.hpp"
#include "support.hpp"

using namespace needleplan;
using testing_support::angle_deg;
using testing_support::random_q;

namespace {

// Craig convention written out with plain Eigen transforms, independent of link_frames.
Eigen::Isometry3d dh_oracle(const KinematicChain& chain, const JointVector& q) {
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  for (int i = 0; i < kJointCount; ++i) {
    const auto& r = chain.rows()[i];
    t = t * Eigen::AngleAxisd(deg2rad(r.alpha_deg), Vec3::UnitX()) * Eigen::Translation3d(r.a, 0, 0) *
        Eigen::AngleAxisd(deg2rad(q[i] + r.theta_offset_deg), Vec3::UnitZ()) * Eigen::Translation3d(0, 0, r.d);
  }
  return t;
}

}  // namespace

TEST(ForwardKinematics, ZeroConfigurationIsStraightUp) {
  const auto chain = KinematicChain::lbr_like();
  const auto pose = forward_kinematics(chain, JointVector::Zero());
  EXPECT_LT((pose.translation() - Vec3(0, 0, 1306)).norm(), 1e-9);
  EXPECT_LT((pose.rotation() - Mat3::Identity()).norm(), 1e-12);
  EXPECT_EQ(pose.from(), FrameId(Frame::B));
  EXPECT_EQ(pose.to(), FrameId(Frame::EEF));
}

TEST(ForwardKinematics, MatchesDhProductOracle) {
  const auto chain = KinematicChain::lbr_like();
  Rng rng(20);
  for (int i = 0; i < 200; ++i) {
    const JointVector q = random_q(rng, chain, 0.0);
    EXPECT_LT((forward_kinematics(chain, q).matrix() - dh_oracle(chain, q).matrix()).norm(), 1e-9);
  }
}

TEST(ForwardKinematics, FirstJointRotatesAboutBaseAxis) {
  const auto chain = KinematicChain::lbr_like();
  Rng rng(21);
  for (int i = 0; i < 50; ++i) {
    JointVector q = random_q(rng, chain, 40.0);
    const Vec3 p0 = forward_kinematics(chain, q).translation();
    const double turn = rng.uniform(-30.0, 30.0);
    q[0] += turn;
    const Vec3 p1 = forward_kinematics(chain, q).translation();
    EXPECT_LT((p1 - axis_angle(Vec3::UnitZ(), deg2rad(turn)) * p0).norm(), 1e-9);
  }
}

TEST(ForwardKinematics, NeverExceedsReachBound) {
  const auto chain = KinematicChain::lbr_like();
  Rng rng(22);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_LE(forward_kinematics(chain, random_q(rng, chain, 0.0)).translation().norm(), chain.reach_bound() + 1e-9);
  }
}

TEST(ForwardKinematics, RejectsNaN) {
  JointVector q = JointVector::Zero();
  q[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW((void)forward_kinematics(KinematicChain::lbr_like(), q), Error);
}

TEST(Jacobian, MatchesFiniteDifferences) {
  const auto chain = KinematicChain::lbr_like();
  Rng rng(23);
  const double h = 1e-6;  // rad
  for (int n = 0; n < 20; ++n) {
    const JointVector q = random_q(rng, chain, 10.0);
    const auto j = chain.jacobian(q);
    const auto base = forward_kinematics(chain, q);
    for (int k = 0; k < kJointCount; ++k) {
      JointVector qh = q;
      qh[k] += rad2deg(h);
      const auto moved = forward_kinematics(chain, qh);
      const Vec3 v = (moved.translation() - base.translation()) / h;
      const Vec3 w = rotation_log(moved.rotation() * base.rotation().transpose()) / h;
      EXPECT_LT((j.col(k).head<3>() - v).norm(), 1e-3 * std::max(1.0, v.norm()));
      EXPECT_LT((j.col(k).tail<3>() - w).norm(), 1e-5);
    }
  }
}

TEST(InverseKinematics, SolvesReachablePosesFromIdle) {
  const auto chain = KinematicChain::lbr_like();
  const JointVector idle = default_idle_configuration();
  Rng rng(24);
  int solved = 0;
  const int total = 200;
  for (int i = 0; i < total; ++i) {
    const auto target = forward_kinematics(chain, random_q(rng, chain, 10.0));
    const auto q = inverse_kinematics(chain, target, idle);
    if (!q) continue;
    ++solved;
    const auto got = forward_kinematics(chain, *q);
    EXPECT_LT((got.translation() - target.translation()).norm(), 0.1 + 1e-9);
    EXPECT_LT(angle_deg(got.rotation(), target.rotation()), 0.05 + 1e-9);
    EXPECT_TRUE(chain.within_limits(*q));
  }
  EXPECT_GE(solved, total * 95 / 100);
}

TEST(InverseKinematics, UnreachablePoseFails) {
  const auto chain = KinematicChain::lbr_like();
  const RigidTransform far(Mat3::Identity(), Vec3(0, 0, chain.reach_bound() + 200.0), Frame::B, Frame::EEF);
  EXPECT_FALSE(inverse_kinematics(chain, far, JointVector::Zero()));
}

TEST(InverseKinematics, FreeRollMatchesAxisOnly) {
  const auto chain = KinematicChain::lbr_like();
  const auto mount = NeedleMount::standard();
  Rng rng(25);
  IkOptions opt;
  opt.free_roll = true;
  opt.roll_axis = mount.eef_to_tip().rotation().col(2);
  opt.roll_point = mount.tip_in_eef();
  for (int i = 0; i < 20; ++i) {
    const JointVector q0 = random_q(rng, chain, 20.0);
    auto target = forward_kinematics(chain, q0);
    // Spin the goal about the tool axis; any roll must be accepted.
    const Vec3 axis_b = target.rotation() * opt.roll_axis;
    const Vec3 tip_b = target.apply(opt.roll_point);
    const Mat3 spin = axis_angle(axis_b, rng.uniform(-kPi, kPi));
    target = RigidTransform(spin * target.rotation(), tip_b - spin * target.rotation() * opt.roll_point, Frame::B,
                            Frame::EEF);
    const auto q = inverse_kinematics(chain, target, q0, opt);
    ASSERT_TRUE(q);
    const auto got = forward_kinematics(chain, *q);
    EXPECT_LT((got.apply(opt.roll_point) - tip_b).norm(), 0.1 + 1e-9);
    EXPECT_LT(rad2deg(std::acos(std::clamp((got.rotation() * opt.roll_axis).dot(axis_b), -1.0, 1.0))), 0.05 + 1e-9);
  }
}

TEST(CapsuleBox, ClearanceMatchesSampledOracle) {
  const Aabb box{Vec3(-10, -20, -5), Vec3(30, 10, 15)};
  Rng rng(26);
  for (int i = 0; i < 200; ++i) {
    const Vec3 a = rng.gaussian_vec(40), b = rng.gaussian_vec(40);
    const double r = rng.uniform(0.5, 8.0);
    double sampled = std::numeric_limits<double>::infinity();
    for (int s = 0; s <= 2000; ++s) sampled = std::min(sampled, box.signed_distance(a + (b - a) * (s / 2000.0)));
    const double c = capsule_box_clearance(a, b, r, box);
    EXPECT_LE(c, sampled - r + 1e-9);
    EXPECT_NEAR(c, sampled - r, 0.05);
  }
}

TEST(Collision, IdleConfigurationIsClearInDeskScene) {
  const auto& desk = testing_support::desk();
  const auto& ctx = desk.context;
  EXPECT_FALSE(check_collision(ctx.chain, ctx.idle, ctx.mount, *ctx.scene, 0.0).collides());
}

TEST(Collision, BoxAroundBaseIsReported) {
  const auto& desk = testing_support::desk();
  const auto& ctx = desk.context;
  const Vec3 base_ct = ctx.scene->ct_to_b().apply(Vec3(0, 0, 100));
  const SceneBox crate{"crate", Aabb{base_ct - Vec3::Constant(50), base_ct + Vec3::Constant(50)}};
  const CollisionScene scene(desk.skin, ctx.scene->gantry(), {crate}, ctx.scene->b_to_ct());
  const auto report = check_collision(ctx.chain, ctx.idle, ctx.mount, scene, 0.0);
  ASSERT_TRUE(report.collides());
  bool base_hit = false;
  for (const auto& p : report.pairs) base_hit |= (p.first == "base" && p.second == "crate" && p.penetration > 0.0);
  EXPECT_TRUE(base_hit);
}

TEST(Collision, NeedleInsideSkinRespectsAllowance) {
  const auto& desk = testing_support::desk();
  const auto& ctx = desk.context;
  const auto& target = desk.scene.targets.front();
  const Vec3 entry(-100, 80, -30);
  const NeedleTrajectory traj = NeedleTrajectory::make(target, entry);
  const auto check = check_trajectory(traj, ctx);
  ASSERT_TRUE(check.feasible) << to_string(check.reason);
  const JointVector inserted = check.stroke.back();
  const auto strict = check_collision(ctx.chain, inserted, ctx.mount, *ctx.scene, 0.0);
  ASSERT_TRUE(strict.collides());
  EXPECT_EQ(strict.pairs.front().first, "needle");
  const auto puncture = desk.skin->intersect(Ray::make(entry, traj.direction()));
  ASSERT_TRUE(puncture);
  EXPECT_NEAR(strict.pairs.front().penetration, (traj.final_tip() - puncture->point).norm(), 1.5);
  EXPECT_FALSE(check_collision(ctx.chain, inserted, ctx.mount, *ctx.scene, traj.insertion_depth + 1.0).collides());
}

TEST(NeedlePose, PutsTipAtDepthAlongAxis) {
  const auto mount = NeedleMount::standard();
  const auto b_to_ct = default_robot_placement();
  Rng rng(27);
  for (int i = 0; i < 50; ++i) {
    const Vec3 p = rng.gaussian_vec(100), d = rng.unit_vector();
    const double depth = rng.uniform(0.0, 80.0);
    const auto pose = needle_pose_to_eef(p, d, depth, b_to_ct, mount);
    const auto ct_from_b = invert(b_to_ct);
    const Vec3 tip = ct_from_b.apply(pose.apply(mount.tip_in_eef()));
    const Vec3 hub = ct_from_b.apply(pose.apply(mount.eef_to_needle.translation()));
    EXPECT_LT((tip - (p + depth * d)).norm(), 1e-9);
    EXPECT_LT(((tip - hub).normalized() - d).norm(), 1e-9);
  }
  EXPECT_THROW((void)needle_pose_to_eef(Vec3::Zero(), Vec3(0, 0, 2), 0.0, b_to_ct, mount), Error);
}

TEST(CartesianPath, FlangeFollowsStraightLine) {
  const auto chain = KinematicChain::lbr_like();
  const JointVector start = default_idle_configuration();
  const auto from = forward_kinematics(chain, start);
  const Vec3 shift(-60, 40, -120);
  const RigidTransform goal(from.rotation(), from.translation() + shift, Frame::B, Frame::EEF);
  const auto path = linear_cartesian_path(chain, start, goal, 21);
  ASSERT_TRUE(path.ok()) << to_string(path.reason);
  ASSERT_GE(path.waypoints.size(), 21u);
  for (std::size_t i = 0; i < path.waypoints.size(); ++i) {
    const auto pose = forward_kinematics(chain, path.waypoints[i]);
    EXPECT_LT(point_line_distance(pose.translation(), from.translation(), shift.normalized()), 0.1 + 1e-9);
    EXPECT_LT(angle_deg(pose.rotation(), from.rotation()), 0.05 + 1e-9);
    if (i > 0) EXPECT_LE((path.waypoints[i] - path.waypoints[i - 1]).cwiseAbs().maxCoeff(), 10.0 + 1e-9);
  }
  EXPECT_LT((forward_kinematics(chain, path.waypoints.back()).translation() - goal.translation()).norm(), 0.1 + 1e-9);
}

TEST(CartesianPath, UnreachableGoalReportsFailure) {
  const auto chain = KinematicChain::lbr_like();
  const RigidTransform goal(Mat3::Identity(), Vec3(0, 0, 3000), Frame::B, Frame::EEF);
  const auto path = linear_cartesian_path(chain, JointVector::Zero(), goal, 10);
  EXPECT_FALSE(path.ok());
}

TEST(ChainFile, ShippedDefinitionMatchesBuiltIn) {
  const auto parsed = parse_chain(text::read_file(NEEDLEPLAN_CHAIN_FILE));
  EXPECT_EQ(format_chain(parsed), format_chain(KinematicChain::lbr_like()));
  EXPECT_THROW((void)parse_chain("joint 0 0 360 0 -170 170\n"), Error);
}

TEST(FailReason, NamesRoundTrip) {
  for (auto r : {FailReason::none, FailReason::ik_failure, FailReason::collision, FailReason::joint_jump,
                 FailReason::out_of_reach}) {
    EXPECT_EQ(parse_fail_reason(to_string(r)), r);
  }
}
