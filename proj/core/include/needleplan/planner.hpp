#pragma once

// Candidate insertion points, max-HU/feasibility colormaps, trajectory verdicts
// and time-parameterized insertion plans.

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "needleplan/robot.hpp"
#include "needleplan/volume.hpp"

namespace needleplan {

constexpr double kPunchOffset = 15.0;         // mm the biopsy punch reaches beyond the tip
constexpr double kPreInsertionStandoff = 5.0;  // mm above the skin
constexpr double kDefaultCandidateSpacing = 10.0;

struct Target {
  std::string id;
  Vec3 position = Vec3::Zero();  // CT
  std::string label;
};

struct InsertionCandidate {
  Vec3 surface_point = Vec3::Zero();
  double max_hu = 0.0;
  bool feasible = false;
  FailReason fail_reason = FailReason::none;
};

struct Colormap {
  std::string target_id;
  Vec3 target = Vec3::Zero();
  std::vector<InsertionCandidate> candidates;
  double spacing = kDefaultCandidateSpacing;
  double generation_time = 0.0;  // s
};

struct NeedleTrajectory {
  Target target;
  Vec3 insertion_point = Vec3::Zero();
  double insertion_depth = 0.0;  // |target - insertion_point| - punch offset
  double max_hu = 0.0;

  /// Derives the depth; does not validate.
  static NeedleTrajectory make(const Target& target, const Vec3& insertion_point, double max_hu = 0.0);
  Vec3 direction() const { return (target.position - insertion_point).normalized(); }
  /// Where the tip stops: insertion point advanced by the insertion depth.
  Vec3 final_tip() const { return insertion_point + insertion_depth * direction(); }
  /// Throws InvalidTrajectory when the depth is not positive or inconsistent.
  void validate() const;
};

struct PlannerOptions {
  double approach_step = 10.0;  // mm of tip travel per approach waypoint
  double stroke_step = 5.0;     // mm of tip travel per insertion waypoint
  double hover_distance = 100.0;  // approach via a point this far back along the needle axis
  double approach_slack = 1.0;    // needle-in-skin allowance before the stroke, mm
  double joint_speed = 10.0;      // deg/s, plan timing
};

struct RobotContext {
  KinematicChain chain = KinematicChain::lbr_like();
  NeedleMount mount = NeedleMount::standard();
  std::shared_ptr<const CollisionScene> scene;
  JointVector idle = JointVector::Zero();
  PlannerOptions options{};

  /// Throws ContextMissing without a scene.
  void validate() const;
};

/// Mesh vertices on the target-facing side (outward normal . (vertex - target) > 0),
/// thinned greedily in mesh order so that all pairwise Euclidean distances are
/// >= spacing. Throws NoCandidates when nothing survives.
std::vector<Vec3> candidate_insertion_points(const TriMesh& skin, const Target& target,
                                             double spacing = kDefaultCandidateSpacing);

struct Feasibility {
  bool feasible = false;
  FailReason reason = FailReason::none;
  std::vector<JointVector> approach;  // idle .. skin contact
  std::vector<JointVector> stroke;    // skin contact .. final depth
};

/// Full pipeline check: approach from idle via hover and standoff to skin
/// contact, then the insertion stroke, collision-checked throughout.
Feasibility check_trajectory(const NeedleTrajectory& traj, const RobotContext& ctx);

InsertionCandidate evaluate_candidate(const Vec3& point, const Target& target, const Volume& volume,
                                      const RobotContext* ctx);

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Evaluates every candidate with up to `workers` threads; output order and
/// content do not depend on the worker count.
Colormap build_colormap(const Target& target, const Volume& volume, const TriMesh& skin, const RobotContext* ctx,
                        int workers, double spacing = kDefaultCandidateSpacing, const ProgressFn& progress = {},
                        const std::atomic<bool>* cancel = nullptr);

struct ExecutablePlan {
  std::vector<JointVector> waypoints;
  std::vector<double> times;  // s, from 0
  std::size_t approach_end = 0;  // index of skin contact
  std::size_t stroke_end = 0;    // index of final depth
  double duration() const { return times.empty() ? 0.0 : times.back(); }
};

/// Approach, stroke and retreat to idle, timed at <= joint_speed on every joint.
/// Throws PlanningFailed with the failing stage in the message.
ExecutablePlan plan_insertion(const NeedleTrajectory& traj, const RobotContext& ctx);

/// Joint configuration at time t (linear interpolation between timed waypoints).
JointVector sample_plan(const ExecutablePlan& plan, double t);

// One candidate per line: x y z max_hu feasible reason
std::string format_colormap(const Colormap& map);
Colormap parse_colormap(const std::string& content);

}  // namespace needleplan
