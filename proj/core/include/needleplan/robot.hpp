#pragma once

// Digital twin of a 7-DOF serial arm: kinematics, link capsules, needle mount,
// collision scene and straight-line Cartesian paths.

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "needleplan/geometry.hpp"

namespace needleplan {

constexpr int kJointCount = 7;
using JointVector = Eigen::Matrix<double, kJointCount, 1>;  // degrees

/// Craig (modified) DH row; link i frame = Rx(alpha) Tx(a) Rz(theta + offset) Tz(d) of frame i-1.
struct DhRow {
  double a = 0.0;
  double alpha_deg = 0.0;
  double d = 0.0;
  double theta_offset_deg = 0.0;
};

struct JointLimit {
  double min_deg = -170.0;
  double max_deg = 170.0;
};

/// Capsule rigidly attached to link frame `link` (0 = base, 7 = flange/EEF).
struct LinkCapsule {
  std::string name;
  int link = 0;
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 1.0;
};

using LinkFrames = std::array<Eigen::Isometry3d, kJointCount + 1>;

class KinematicChain {
 public:
  KinematicChain(std::array<DhRow, kJointCount> rows, std::array<JointLimit, kJointCount> limits,
                 std::vector<LinkCapsule> capsules);

  /// LBR Med 14 style geometry (d1=360, d3=420, d5=400, d7=126 mm).
  static KinematicChain lbr_like();

  const std::array<DhRow, kJointCount>& rows() const noexcept { return rows_; }
  const std::array<JointLimit, kJointCount>& limits() const noexcept { return limits_; }
  const std::vector<LinkCapsule>& capsules() const noexcept { return capsules_; }

  bool within_limits(const JointVector& q, double tol_deg = 1e-9) const;
  JointVector clamp(const JointVector& q) const;
  /// Sum of |a| + |d| over rows; no pose can reach farther from the base origin.
  double reach_bound() const;

  /// Frame 0 is the base; frame 7 is the flange (EEF).
  LinkFrames link_frames(const JointVector& q) const;
  /// 6x7, rows: linear velocity (mm/rad) then angular velocity, base frame.
  Eigen::Matrix<double, 6, kJointCount> jacobian(const JointVector& q) const;

 private:
  std::array<DhRow, kJointCount> rows_;
  std::array<JointLimit, kJointCount> limits_;
  std::vector<LinkCapsule> capsules_;
};

/// B -> EEF. Throws InvalidInput for NaN angles.
RigidTransform forward_kinematics(const KinematicChain& chain, const JointVector& q);

struct IkOptions {
  double damping = 0.05;          // lambda, with positions in meters
  double max_step_deg = 5.0;      // per-iteration clamp on the largest joint step
  int max_iterations = 500;
  double position_tol = 0.1;      // mm
  double orientation_tol = 0.05;  // deg
  double nullspace_gain = 0.1;    // pull toward the seed configuration
  bool use_auxiliary_seeds = true;
  /// Axisymmetric tools: match only the axis direction and a point on the axis
  /// (both in the EEF frame); roll stays wherever seeding and the nullspace pull leave it.
  bool free_roll = false;
  Vec3 roll_axis = Vec3::UnitZ();
  Vec3 roll_point = Vec3::Zero();
};

/// Damped least squares from `seed`, then from 8 fixed auxiliary seeds.
/// Returns none when no attempt meets the tolerances within limits.
std::optional<JointVector> inverse_kinematics(const KinematicChain& chain, const RigidTransform& target,
                                              const JointVector& seed, const IkOptions& options = {});

const std::array<JointVector, 8>& auxiliary_ik_seeds();

struct NeedleMount {
  RigidTransform eef_to_needle = RigidTransform::identity(Frame::EEF, Frame::N);  // hub pose in EEF
  double needle_length = 250.0;  // hub to tip along +z of N
  double needle_radius = 1.0;

  /// 80 mm hub offset along the flange axis, 250 mm needle.
  static NeedleMount standard();
  void validate() const;
  Vec3 tip_in_eef() const { return eef_to_needle.apply(Vec3(0.0, 0.0, needle_length)); }
  /// EEF -> needle tip frame (N translated to the tip).
  RigidTransform eef_to_tip() const;
};

struct SceneBox {
  std::string name;
  Aabb box;  // CT frame
};

/// Collision objects in the CT frame plus the B->CT registration.
class CollisionScene {
 public:
  CollisionScene(TriMesh skin, SceneBox gantry, std::vector<SceneBox> boxes, RigidTransform b_to_ct);
  CollisionScene(std::shared_ptr<const MeshIndex> skin, SceneBox gantry, std::vector<SceneBox> boxes,
                 RigidTransform b_to_ct);

  const MeshIndex& skin() const { return *skin_; }
  const std::shared_ptr<const MeshIndex>& skin_ptr() const { return skin_; }
  const SceneBox& gantry() const { return gantry_; }
  const std::vector<SceneBox>& boxes() const { return boxes_; }
  /// Maps CT coordinates into B.
  const RigidTransform& b_to_ct() const { return b_to_ct_; }
  /// Maps B coordinates into CT.
  const RigidTransform& ct_to_b() const { return ct_to_b_; }

 private:
  std::shared_ptr<const MeshIndex> skin_;
  SceneBox gantry_;
  std::vector<SceneBox> boxes_;
  RigidTransform b_to_ct_;
  RigidTransform ct_to_b_;
};

struct CollisionPair {
  std::string first;
  std::string second;
  double penetration = 0.0;  // mm, > 0
};

struct CollisionReport {
  std::vector<CollisionPair> pairs;
  bool collides() const { return !pairs.empty(); }
};

/// Link capsules whose link indices differ by less than this are never tested
/// against each other (joint spheres legitimately overlap both neighbours).
constexpr int kSelfCollisionLinkGap = 3;

/// Capsule-vs-mesh and capsule-vs-box tests for every link capsule, the EEF
/// tool and the needle, plus link self-collision. The needle may lie inside the
/// skin for up to `allowed_needle_penetration` mm of its length.
CollisionReport check_collision(const KinematicChain& chain, const JointVector& q, const NeedleMount& mount,
                                const CollisionScene& scene, double allowed_needle_penetration,
                                bool stop_at_first = false);

/// Signed clearance of a capsule against an axis-aligned box (negative = penetration depth).
double capsule_box_clearance(const Vec3& a, const Vec3& b, double radius, const Aabb& box);

/// Pose (B->EEF) that puts the needle tip at point + depth * dir (CT) with the
/// needle axis along dir. Roll about the axis follows `roll_hint_ct` (a CT
/// direction for the needle x-axis), else a fixed perpendicular.
RigidTransform needle_pose_to_eef(const Vec3& point_ct, const Vec3& dir_ct, double depth, const RigidTransform& b_to_ct,
                                  const NeedleMount& mount, const std::optional<Vec3>& roll_hint_ct = std::nullopt);

enum class FailReason { none, ik_failure, collision, joint_jump, out_of_reach };
std::string to_string(FailReason r);
FailReason parse_fail_reason(std::string_view s);

struct PathCheck {
  const NeedleMount* mount = nullptr;
  const CollisionScene* scene = nullptr;
  double allowed_needle_penetration = 0.0;
};

struct CartesianPathOptions {
  /// Interpolated frame, given relative to the EEF; identity interpolates the flange itself.
  RigidTransform tool = RigidTransform::identity(Frame::EEF, Frame::EEF);
  double max_joint_step_deg = 10.0;
  int max_densify = 4;
  IkOptions ik{};
};

struct CartesianPath {
  std::vector<JointVector> waypoints;
  FailReason reason = FailReason::none;
  std::size_t failed_at = 0;  // interpolation index of the failure
  bool ok() const { return reason == FailReason::none; }
};

/// Interpolates the tool pose linearly in position and by slerp in rotation
/// over `waypoints` samples (>= 2), solving IK per sample seeded by the previous
/// one. A joint jump above the limit triggers 2x, then 4x subdivision of that
/// segment. When `check` carries a scene every sample is collision-checked.
CartesianPath linear_cartesian_path(const KinematicChain& chain, const JointVector& start_q,
                                    const RigidTransform& goal_eef, int waypoints, const PathCheck& check = {},
                                    const CartesianPathOptions& options = {});

// ---------------------------------------------------------------------------
// Chain definition files:
//   joint <a> <alpha_deg> <d> <theta_offset_deg> <min_deg> <max_deg>     (7 lines, in order)
//   capsule <name> <link> <ax> <ay> <az> <bx> <by> <bz> <radius>

KinematicChain parse_chain(const std::string& content);
std::string format_chain(const KinematicChain& chain);

}  // namespace needleplan
