#pragma once

// Solvers for every edge of the base-to-CT transform chain:
//   B->CT = (B->TB)(TB->C)(C->RM)(RM->SB)(SB->CT)

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "needleplan/geometry.hpp"
#include "needleplan/volume.hpp"

namespace needleplan {

/// One static capture: robot flange pose and the tracked pose of the flange marker.
struct PoseSample {
  RigidTransform robot_pose;    // B -> EEF
  RigidTransform tracker_pose;  // C -> M
};

struct HandEyeResult {
  RigidTransform x;  // EEF -> M, flange-side unknown
  RigidTransform z;  // B -> C, base-side unknown
  double residual = 0.0;  // RMS translation residual of A X - Z B, mm
};

/// QR24 hand-eye calibration for A_i X = Z B_i.
///
/// All samples are stacked into one linear least-squares problem over the 24
/// entries of X and Z (rotation blocks unconstrained), solved with a single
/// column-pivoted QR factorization; both rotation blocks are then projected
/// onto SO(3). Unknown ordering in the stacked vector:
///   [ vec(R_X) (column-major, 9) | t_X (3) | vec(R_Z) (9) | t_Z (3) ].
/// Per sample the 12 rows are
///   (I (x) R_A) vec(R_X) - (R_B^T (x) I) vec(R_Z)              = 0
///   R_A t_X - (t_B^T (x) I) vec(R_Z) - t_Z                     = -t_A
/// Translations are scaled to unit magnitude before solving.
///
/// Throws DegenerateMotion for fewer than 3 samples, motions about a single
/// rotation axis, or a rank-deficient system.
HandEyeResult qr24_hand_eye(std::span<const PoseSample> samples);

struct PivotResult {
  Vec3 tip_offset = Vec3::Zero();   // EEF frame
  Vec3 pivot_point = Vec3::Zero();  // B frame
  double residual = 0.0;            // RMS of |R_i t + p_i - c|, mm
};

/// Least-squares pivot calibration R_i t + p_i = c over B->EEF poses (>= 4).
PivotResult pivot_calibrate(std::span<const RigidTransform> poses);

struct IcpResult {
  RigidTransform transform;  // maps source points onto target points
  double rms = 0.0;
  int iterations = 0;
  std::vector<double> rms_history;  // per iteration, after the fit
};

struct IcpOptions {
  int max_iterations = 200;
  double min_improvement = 1e-6;  // mm
};

/// Point-to-point ICP with a closed-form (SVD) rigid fit per iteration.
/// `init` maps source coordinates into the target frame; its frame labels are
/// carried through to the result. Throws DegenerateInput for collinear sources.
IcpResult icp_rigid(std::span<const Vec3> source, std::span<const Vec3> target, const RigidTransform& init,
                    const IcpOptions& options = {});

/// Least-squares rigid fit (Kabsch) of paired points: returns R, t minimizing
/// sum |R s_i + t - q_i|^2.
Eigen::Isometry3d kabsch(std::span<const Vec3> source, std::span<const Vec3> target);

/// CNC-machined steel-ball grid, SB frame: 5 columns along x at 25 mm, 4 rows
/// along y at 30 mm, centered on the origin in the z = 0 plane.
struct GridModel {
  std::vector<Vec3> ball_centers;
  std::vector<double> ball_radii;

  static constexpr int kColumns = 5;
  static constexpr int kRows = 4;
  static constexpr double kColumnSpacing = 25.0;
  static constexpr double kRowSpacing = 30.0;
  static constexpr double kSmallRadius = 2.0;
  static constexpr double kLargeRadius = 5.0;

  /// Three 5 mm balls in one corner so that no planar symmetry maps the grid onto itself.
  static GridModel standard();
  void validate() const;
  bool is_large(std::size_t ball) const { return ball_radii[ball] > 0.5 * (kSmallRadius + kLargeRadius); }
  /// Ball specs after placing the grid with the CT->SB pose (pose of SB in CT).
  std::vector<BallSpec> placed(const RigidTransform& ct_to_sb) const;
};

struct GridDetectionOptions {
  double threshold = kDefaultBallThreshold;
  std::size_t min_blob_voxels = 4;
  double match_tolerance = 6.0;  // mm, blob-to-ball distance counted as a match
};

struct GridDetection {
  RigidTransform sb_to_ct;                // maps CT coordinates into SB
  double rms = 0.0;                       // mm over matched blobs
  std::vector<int> ball_to_blob;          // -1 when a ball was not found
  std::vector<std::size_t> missing_balls;
  std::size_t detected_blobs = 0;
  int radius_mismatches = 0;              // large/small class disagreements of the chosen seed
};

/// Thresholds steel balls, then registers the grid to the blob centroids with
/// ICP seeded from the principal-axis symmetries; 5 mm balls break the tie.
/// Throws InsufficientMarkers with fewer than 4 blobs.
GridDetection detect_grid_pose(const Volume& volume, const GridModel& grid, const GridDetectionOptions& options = {});
/// Same registration from already segmented blobs (CT frame).
GridDetection register_grid(std::span<const SegmentedBlob> blobs, const GridModel& grid,
                            const GridDetectionOptions& options = {});

struct CalibrationChain {
  RigidTransform b_to_tb;
  RigidTransform tb_to_c;
  RigidTransform c_to_rm;
  RigidTransform rm_to_sb;
  RigidTransform sb_to_ct;
  std::vector<std::pair<std::string, double>> residuals;  // per-edge RMS, mm
};

/// Left-to-right product of the five edges. Throws FrameError on any label mismatch.
RigidTransform chain_base_to_ct(const CalibrationChain& chain);

// ---------------------------------------------------------------------------
// Pose-sample capture files: one sample per line, 24 numbers = robot pose as a
// row-major 3x4 [R | t] followed by the tracker pose in the same layout.

std::string format_pose_samples(std::span<const PoseSample> samples);
std::vector<PoseSample> parse_pose_samples(const std::string& content);

}  // namespace needleplan
