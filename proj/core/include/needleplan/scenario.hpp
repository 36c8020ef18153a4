#pragma once

// The default desk-scale setup: thorax phantom, robot placement, table and
// gantry, idle pose and biopsy targets, plus a synthetic calibration session
// that recovers the robot placement through the full transform chain.

#include <memory>
#include <optional>

#include "needleplan/calibration.hpp"
#include "needleplan/planner.hpp"
#include "needleplan/random.hpp"
#include "needleplan/robot.hpp"
#include "needleplan/volume.hpp"

namespace needleplan {

struct DeskScene {
  PhantomSpec phantom;
  std::array<int, 3> dims{128, 128, 128};
  Vec3 spacing = Vec3::Constant(2.5);
  std::uint64_t seed = 1;
  RigidTransform b_to_ct;  // true robot placement
  SceneBox gantry;
  std::vector<SceneBox> boxes;
  JointVector idle = JointVector::Zero();
  std::vector<Target> targets;
};

/// Ellipsoidal thorax (semi-axes 140 x 100 x 150 mm) with organs and rib rings.
PhantomSpec default_thorax_phantom();
/// Robot base beside the table at x = -700 mm, base z-axis along CT +y.
RigidTransform default_robot_placement();
/// Needle pointing down above the robot-side flank of the body.
JointVector default_idle_configuration();
DeskScene default_desk_scene();

struct DeskCase {
  DeskScene scene;
  std::shared_ptr<const Volume> volume;
  std::shared_ptr<const MeshIndex> skin;  // CT frame
  GroundTruth truth;
  RobotContext context;
};

/// Synthesizes the volume and skin, and builds a robot context registered with
/// `b_to_ct_estimate` (the true placement when absent).
DeskCase build_desk_case(const DeskScene& scene, const std::optional<RigidTransform>& b_to_ct_estimate = std::nullopt);

/// Same case data, robot registered with a different B->CT.
RobotContext make_context(const DeskCase& desk, const RigidTransform& b_to_ct);

/// Ground-truth transforms of one calibration session.
struct CalibrationTruth {
  RigidTransform b_to_c;    // Z of the hand-eye problem
  RigidTransform eef_to_m;  // X of the hand-eye problem
  RigidTransform c_to_tb;
  RigidTransform c_to_rm;
  RigidTransform rm_to_sb;  // fixed by phantom construction
  RigidTransform sb_to_ct;

  RigidTransform b_to_ct() const;
  /// Grid lying flat on the anterior surface, axes on the CT lattice so that
  /// ball centers fall on voxel centers of the 1 mm grid scan.
  static CalibrationTruth for_placement(const RigidTransform& b_to_ct);
};

struct CalibrationNoise {
  double tracker_translation = 0.0;  // mm, per axis
  double tracker_rotation = 0.0;     // deg, per axis
  double centroid = 0.0;             // mm, per axis, on detected ball centroids
};

struct CalibrationSession {
  CalibrationChain chain;
  RigidTransform b_to_ct;
  HandEyeResult hand_eye;
  GridDetection grid;
  std::vector<PoseSample> samples;
};

/// 1 mm isotropic scan of the grid alone, placed by `ct_to_sb`.
Volume synthesize_grid_scan(const GridModel& grid, const RigidTransform& ct_to_sb);

/// Records `poses` robot/tracker pairs, solves hand-eye, measures the platform and
/// phantom markers, detects the grid, and assembles B->CT.
CalibrationSession simulate_calibration(const CalibrationTruth& truth, const KinematicChain& chain,
                                        const CalibrationNoise& noise, std::uint64_t seed, int poses = 50);

/// Random rigid perturbation: rotation about a random axis by N(0, rot_deg),
/// translation N(0, trans_mm) per axis.
RigidTransform perturb(const RigidTransform& t, double rot_deg, double trans_mm, Rng& rng);

}  // namespace needleplan
