#include "needleplan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "needleplan/random.hpp"

namespace needleplan {

Vec3 ObservedNeedle::axis() const {
  const Vec3 d = tip - base;
  if (!(d.norm() > 1e-9)) throw Error(ErrorCode::InvalidInput, "observed needle has coincident tip and base");
  return d.normalized();
}

double target_error(const ObservedNeedle& obs, const NeedleTrajectory& planned) {
  const Vec3 reach = obs.tip + kPunchOffset * obs.axis();
  return (reach - planned.target.position).norm();
}

double off_axis_error(const ObservedNeedle& obs, const NeedleTrajectory& planned) {
  return point_line_distance(planned.target.position, obs.tip, obs.axis());
}

double surface_point_error(const ObservedNeedle& obs, const NeedleTrajectory& planned, const MeshIndex& skin) {
  const auto hit = skin.intersect(Ray::make(obs.base, obs.axis()));
  if (!hit) throw Error(ErrorCode::NoPuncture, "observed needle axis does not reach the skin");
  return (hit->point - planned.insertion_point).norm();
}

double surface_point_error(const ObservedNeedle& obs, const NeedleTrajectory& planned, const TriMesh& skin) {
  const auto hit = ray_mesh_intersect(Ray::make(obs.base, obs.axis()), skin);
  if (!hit) throw Error(ErrorCode::NoPuncture, "observed needle axis does not reach the skin");
  return (hit->point - planned.insertion_point).norm();
}

NoiseModel NoiseModel::illustrative() {
  NoiseModel n;
  n.detachment_tilt_sigma = 1.5;
  n.detachment_shift_sigma = 1.0;
  n.annotation_sigma = 0.5;
  n.registration_rotation = 0.2;
  n.registration_translation = 0.3;
  return n;
}

void NoiseModel::validate() const {
  for (double v : {detachment_tilt_sigma, detachment_shift_sigma, annotation_sigma, registration_rotation,
                   registration_translation}) {
    if (!std::isfinite(v) || v < 0.0) throw Error(ErrorCode::InvalidInput, "noise magnitudes must be finite and >= 0");
  }
}

namespace {

struct TargetPlan {
  NeedleTrajectory trajectory;
  JointVector final_q;
};

// Candidates nearest the reference direction first; first one that plans wins.
std::optional<TargetPlan> select_and_plan(const std::vector<Vec3>& ordered, const Target& target, const Volume& volume,
                                          const RobotContext& ctx) {
  for (const Vec3& p : ordered) {
    const auto c = evaluate_candidate(p, target, volume, &ctx);
    if (!c.feasible) continue;
    const auto traj = NeedleTrajectory::make(target, p, c.max_hu);
    try {
      const auto plan = plan_insertion(traj, ctx);
      return TargetPlan{traj, plan.waypoints[plan.stroke_end]};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::PlanningFailed) throw;
    }
  }
  return std::nullopt;
}

// Needle hub and tip (CT) for a joint configuration on the true placement.
ObservedNeedle executed_needle(const RobotContext& ctx, const JointVector& q, const RigidTransform& true_b_to_ct) {
  const RigidTransform eef = forward_kinematics(ctx.chain, q);
  const RigidTransform ct_from_b = true_b_to_ct.inverse();
  ObservedNeedle n;
  n.base = ct_from_b.apply(eef.apply(ctx.mount.eef_to_needle.translation()));
  n.tip = ct_from_b.apply(eef.apply(ctx.mount.tip_in_eef()));
  return n;
}

ObservedNeedle disturb(ObservedNeedle n, const NeedleTrajectory& planned, const NoiseModel& noise, Rng& rng) {
  const Vec3 axis = n.axis();
  if (noise.detachment_tilt_sigma > 0.0) {
    // Pivot where the needle crosses the skin.
    const Vec3 pivot = n.tip + (planned.insertion_point - n.tip).dot(axis) * axis;
    Vec3 perp = rng.unit_vector();
    perp = (perp - perp.dot(axis) * axis);
    if (perp.norm() < 1e-9) perp = axis.unitOrthogonal();
    const Mat3 r = axis_angle(perp.normalized(), deg2rad(rng.gaussian(noise.detachment_tilt_sigma)));
    n.tip = pivot + r * (n.tip - pivot);
    n.base = pivot + r * (n.base - pivot);
  }
  if (noise.detachment_shift_sigma > 0.0) {
    const Vec3 shift = rng.gaussian_vec(noise.detachment_shift_sigma);
    n.tip += shift;
    n.base += shift;
  }
  if (noise.annotation_sigma > 0.0) {
    n.tip += rng.gaussian_vec(noise.annotation_sigma);
    n.base += rng.gaussian_vec(noise.annotation_sigma);
  }
  return n;
}

std::string placement_key(const RigidTransform& t) {
  std::string key;
  const Mat4 m = t.matrix();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) key += std::to_string(std::llround(m(r, c) * 1e6)) + ",";
  }
  return key;
}

}  // namespace

std::vector<ErrorReport> run_synthetic_trial(const DeskScene& scene, std::span<const Target> targets,
                                             const NoiseModel& noise, std::uint64_t seed, const TrialOptions& options) {
  noise.validate();
  if (options.repeats < 1) throw Error(ErrorCode::InvalidInput, "repeats must be >= 1");
  if (!(options.reference_direction.norm() > 0.0)) throw Error(ErrorCode::InvalidInput, "reference direction is zero");
  const Vec3 ref = options.reference_direction.normalized();

  const DeskCase desk = build_desk_case(scene);
  const auto truth = CalibrationTruth::for_placement(scene.b_to_ct);

  std::vector<std::vector<Vec3>> ordered(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    ordered[t] = candidate_insertion_points(desk.skin->mesh(), targets[t]);
    const Vec3 goal = targets[t].position;
    auto angle = [&](const Vec3& p) { return std::acos(std::clamp((p - goal).normalized().dot(ref), -1.0, 1.0)); };
    std::stable_sort(ordered[t].begin(), ordered[t].end(),
                     [&](const Vec3& a, const Vec3& b) { return angle(a) < angle(b); });
  }

  // Identical registrations (no injected residual) reuse the plan.
  std::map<std::string, std::vector<std::optional<TargetPlan>>> cache;

  Rng master(seed);
  std::vector<ErrorReport> reports;
  for (int rep = 0; rep < options.repeats; ++rep) {
    const std::uint64_t trial_seed = master.next();
    Rng rng(trial_seed);
    const auto session = simulate_calibration(truth, desk.context.chain, options.calibration, rng.next());
    const RigidTransform estimate =
        perturb(session.b_to_ct, noise.registration_rotation, noise.registration_translation, rng);
    const RobotContext ctx = make_context(desk, estimate);

    auto& plans = cache[placement_key(estimate)];
    if (plans.empty()) {
      for (std::size_t t = 0; t < targets.size(); ++t) {
        plans.push_back(select_and_plan(ordered[t], targets[t], *desk.volume, ctx));
      }
    }
    for (std::size_t t = 0; t < targets.size(); ++t) {
      ErrorReport r;
      r.target_id = targets[t].id;
      r.label = targets[t].label;
      r.seed = trial_seed;
      r.trial = rep;
      r.noise = noise;
      if (!plans[t]) {
        r.skipped = true;
        reports.push_back(r);
        continue;
      }
      const auto& plan = *plans[t];
      const auto obs = disturb(executed_needle(ctx, plan.final_q, scene.b_to_ct), plan.trajectory, noise, rng);
      r.target_error = target_error(obs, plan.trajectory);
      r.off_axis_error = off_axis_error(obs, plan.trajectory);
      try {
        r.surface_point_error = surface_point_error(obs, plan.trajectory, *desk.skin);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoPuncture) throw;
        r.surface_point_error = std::numeric_limits<double>::infinity();
      }
      reports.push_back(r);
    }
  }
  return reports;
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::vector<AggregateRow> aggregate_report(std::span<const ErrorReport> reports) {
  if (reports.empty()) throw Error(ErrorCode::InvalidInput, "no reports to aggregate");
  std::map<std::string, std::vector<const ErrorReport*>> groups;
  for (const auto& r : reports) groups[r.label].push_back(&r);

  auto row_of = [](const std::string& label, const std::vector<const ErrorReport*>& group) {
    AggregateRow row;
    row.label = label;
    std::vector<double> te, oa, sp;
    for (const auto* r : group) {
      if (r->skipped) {
        ++row.skipped;
        continue;
      }
      te.push_back(r->target_error);
      oa.push_back(r->off_axis_error);
      sp.push_back(r->surface_point_error);
    }
    row.count = te.size();
    row.target_error = summarize(te);
    row.off_axis_error = summarize(oa);
    row.surface_point_error = summarize(sp);
    return row;
  };

  std::vector<AggregateRow> rows;
  std::vector<const ErrorReport*> all;
  for (const auto& [label, group] : groups) {
    rows.push_back(row_of(label, group));
    all.insert(all.end(), group.begin(), group.end());
  }
  rows.push_back(row_of("all", all));
  return rows;
}

std::string format_aggregate(std::span<const AggregateRow> rows) {
  std::string out = fmt::format("{:<12} {:>5} {:>7}  {:>17}  {:>17}  {:>17}\n", "organ", "n", "skipped",
                                "target mm", "off-axis mm", "surface mm");
  for (const auto& r : rows) {
    auto cell = [](const MetricSummary& m) { return fmt::format("{:7.3f} ± {:7.3f}", m.mean, m.std); };
    out += fmt::format("{:<12} {:>5} {:>7}  {:>17}  {:>17}  {:>17}\n", r.label, r.count, r.skipped,
                       cell(r.target_error), cell(r.off_axis_error), cell(r.surface_point_error));
  }
  return out;
}

std::string format_reports(std::span<const ErrorReport> reports) {
  std::string out = "# target label seed trial skipped target_mm off_axis_mm surface_mm\n";
  for (const auto& r : reports) {
    out += fmt::format("{} {} {} {} {} {:.6f} {:.6f} {:.6f}\n", r.target_id, r.label.empty() ? "-" : r.label, r.seed,
                       r.trial, r.skipped ? 1 : 0, r.target_error, r.off_axis_error, r.surface_point_error);
  }
  return out;
}

}  // namespace needleplan
