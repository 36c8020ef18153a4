#pragma once

// Needle placement error metrics, synthetic end-to-end trials and reporting.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "needleplan/planner.hpp"
#include "needleplan/scenario.hpp"

namespace needleplan {

/// Annotated needle in a post-insertion scan (CT frame).
struct ObservedNeedle {
  Vec3 tip = Vec3::Zero();
  Vec3 base = Vec3::UnitZ();

  /// Unit vector from base to tip. Throws InvalidInput when tip == base.
  Vec3 axis() const;
};

/// Distance between the tip advanced by the punch offset along the axis and the planned target.
double target_error(const ObservedNeedle& obs, const NeedleTrajectory& planned);
/// Distance from the planned target to the observed needle axis (infinite line).
double off_axis_error(const ObservedNeedle& obs, const NeedleTrajectory& planned);
/// Distance between where the observed axis pierces the skin (ray from the base
/// toward the tip) and the planned insertion point. Throws NoPuncture.
double surface_point_error(const ObservedNeedle& obs, const NeedleTrajectory& planned, const MeshIndex& skin);
double surface_point_error(const ObservedNeedle& obs, const NeedleTrajectory& planned, const TriMesh& skin);

/// Stand-in for what happens between planning and the control scan. Defaults are zero.
struct NoiseModel {
  double detachment_tilt_sigma = 0.0;   // deg, needle pivots about its skin puncture
  double detachment_shift_sigma = 0.0;  // mm per axis
  double annotation_sigma = 0.0;        // mm per axis, on tip and base
  double registration_rotation = 0.0;   // deg, perturbation of the recovered B->CT
  double registration_translation = 0.0;  // mm per axis

  /// Tilt 1.5 deg, shift 1 mm, annotation 0.5 mm, registration 0.2 deg / 0.3 mm.
  static NoiseModel illustrative();
  void validate() const;
};

struct ErrorReport {
  std::string target_id;
  std::string label;
  std::uint64_t seed = 0;
  int trial = 0;
  bool skipped = false;
  double target_error = 0.0;
  double off_axis_error = 0.0;
  double surface_point_error = 0.0;
  NoiseModel noise;
};

struct TrialOptions {
  int repeats = 1;
  /// Candidates are tried in order of angle between (candidate - target) and this direction.
  Vec3 reference_direction = Vec3(-0.5, 1.0, 0.0);
  CalibrationNoise calibration{};
};

/// Builds the phantom once, then per repeat: calibrates (plus the injected
/// registration residual), picks the first feasible candidate closest to the
/// reference direction, plans, executes on the true robot placement, perturbs
/// and annotates the needle, and scores it. Targets without a feasible
/// candidate are reported as skipped. Deterministic for a fixed seed.
std::vector<ErrorReport> run_synthetic_trial(const DeskScene& scene, std::span<const Target> targets,
                                             const NoiseModel& noise, std::uint64_t seed,
                                             const TrialOptions& options = {});

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};

struct AggregateRow {
  std::string label;  // organ label, or "all"
  std::size_t count = 0;
  std::size_t skipped = 0;
  MetricSummary target_error;
  MetricSummary off_axis_error;
  MetricSummary surface_point_error;
};

/// One row per organ label (sorted), then "all". Skipped reports only count
/// toward `skipped`. Throws InvalidInput for empty input.
std::vector<AggregateRow> aggregate_report(std::span<const ErrorReport> reports);
MetricSummary summarize(std::span<const double> values);
/// Fixed-width UTF-8 table.
std::string format_aggregate(std::span<const AggregateRow> rows);
/// One line per report.
std::string format_reports(std::span<const ErrorReport> reports);

// ---------------------------------------------------------------------------
// Text formats used by the command-line tools.

/// Lines: <id> <x> <y> <z> [label]
std::vector<Target> parse_targets(const std::string& content);
std::string format_targets(std::span<const Target> targets);

/// key=value: tilt_deg, shift_mm, annotation_mm, registration_deg, registration_mm
NoiseModel parse_noise(const std::string& content);
std::string format_noise(const NoiseModel& noise);

/// Lines: <id> <tip xyz> <base xyz>
std::vector<std::pair<std::string, ObservedNeedle>> parse_observed(const std::string& content);
/// Lines: <id> <target xyz> <insertion xyz>
std::vector<NeedleTrajectory> parse_planned(const std::string& content);
std::string format_planned(std::span<const NeedleTrajectory> planned);

/// Desk scene description: [body] semi_axes_mm, center_mm, hu; [organ <name>] center_mm,
/// radius_mm, hu; [rib] a_mm, b_mm, radius_mm, hu; [volume] dims, spacing_mm, seed, noise_sigma.
/// Robot placement, table, gantry and idle pose keep their defaults.
DeskScene parse_scene(const std::string& content);
std::string format_scene(const DeskScene& scene);

/// Wavefront OBJ, vertices and triangular faces only.
std::string format_obj(const TriMesh& mesh);
TriMesh parse_obj(const std::string& content);

}  // namespace needleplan
