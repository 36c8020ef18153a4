#include "needleplan/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>
#include <unordered_map>

#include <fmt/format.h>

#include "needleplan/text.hpp"

namespace needleplan {

NeedleTrajectory NeedleTrajectory::make(const Target& target, const Vec3& insertion_point, double max_hu) {
  NeedleTrajectory t;
  t.target = target;
  t.insertion_point = insertion_point;
  t.insertion_depth = (target.position - insertion_point).norm() - kPunchOffset;
  t.max_hu = max_hu;
  return t;
}

void NeedleTrajectory::validate() const {
  if (!insertion_point.allFinite() || !target.position.allFinite() || !std::isfinite(insertion_depth)) {
    throw Error(ErrorCode::InvalidTrajectory, "trajectory contains non-finite values");
  }
  if (!(insertion_depth > 0.0)) throw Error(ErrorCode::InvalidTrajectory, "insertion depth must be positive");
  const double expected = (target.position - insertion_point).norm() - kPunchOffset;
  if (std::abs(expected - insertion_depth) > 1e-6) {
    throw Error(ErrorCode::InvalidTrajectory, "insertion depth does not match target distance minus punch offset");
  }
}

void RobotContext::validate() const {
  if (!scene) throw Error(ErrorCode::ContextMissing, "robot context has no collision scene");
  mount.validate();
}

std::vector<Vec3> candidate_insertion_points(const TriMesh& skin, const Target& target, double spacing) {
  if (skin.empty()) throw Error(ErrorCode::InvalidInput, "skin mesh is empty");
  if (!(spacing > 0.0)) throw Error(ErrorCode::InvalidInput, "candidate spacing must be positive");
  const auto normals = skin.vertex_normals();
  const auto& verts = skin.vertices();

  struct KeyHash {
    std::size_t operator()(const std::array<long long, 3>& k) const {
      return static_cast<std::size_t>(k[0] * 73856093LL ^ k[1] * 19349663LL ^ k[2] * 83492791LL);
    }
  };
  std::unordered_map<std::array<long long, 3>, std::vector<std::size_t>, KeyHash> cells;
  auto cell_of = [&](const Vec3& p) {
    return std::array<long long, 3>{static_cast<long long>(std::floor(p.x() / spacing)),
                                    static_cast<long long>(std::floor(p.y() / spacing)),
                                    static_cast<long long>(std::floor(p.z() / spacing))};
  };

  std::vector<Vec3> out;
  for (std::size_t i = 0; i < verts.size(); ++i) {
    const Vec3& v = verts[i];
    if (!(normals[i].dot(v - target.position) > 0.0)) continue;
    const auto c = cell_of(v);
    bool clear = true;
    for (long long dz = -1; dz <= 1 && clear; ++dz) {
      for (long long dy = -1; dy <= 1 && clear; ++dy) {
        for (long long dx = -1; dx <= 1 && clear; ++dx) {
          const auto it = cells.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (it == cells.end()) continue;
          for (std::size_t k : it->second) {
            if ((out[k] - v).norm() < spacing) {
              clear = false;
              break;
            }
          }
        }
      }
    }
    if (!clear) continue;
    cells[c].push_back(out.size());
    out.push_back(v);
  }
  if (out.empty()) throw Error(ErrorCode::NoCandidates, "no skin vertex faces the target " + target.id);
  return out;
}

namespace {

int samples_for(double length, double step) {
  return std::max(2, static_cast<int>(std::ceil(length / step - 1e-9)) + 1);
}

void append_path(std::vector<JointVector>& dst, const std::vector<JointVector>& src) {
  for (std::size_t i = dst.empty() ? 0 : 1; i < src.size(); ++i) dst.push_back(src[i]);
}

struct Attempt {
  Feasibility result;
  std::string stage;
};

Attempt attempt_trajectory(const NeedleTrajectory& traj, const RobotContext& ctx) {
  Attempt a;
  auto fail = [&](FailReason r, std::string stage) {
    a.result = Feasibility{false, r, {}, {}};
    a.stage = std::move(stage);
    return a;
  };
  const CollisionScene& scene = *ctx.scene;
  const KinematicChain& chain = ctx.chain;
  const PlannerOptions& o = ctx.options;
  const Vec3 dir = traj.direction();

  // Keep the needle roll of the idle configuration.
  const RigidTransform idle_eef = forward_kinematics(chain, ctx.idle);
  const Vec3 roll_b = idle_eef.rotation() * ctx.mount.eef_to_needle.rotation() * Vec3::UnitX();
  const Vec3 roll_ct = scene.ct_to_b().apply_direction(roll_b);
  auto pose_at = [&](double depth) {
    return needle_pose_to_eef(traj.insertion_point, dir, depth, scene.b_to_ct(), ctx.mount, roll_ct);
  };
  const RigidTransform hover = pose_at(-(kPreInsertionStandoff + o.hover_distance));
  const RigidTransform standoff = pose_at(-kPreInsertionStandoff);
  const RigidTransform contact = pose_at(0.0);
  const RigidTransform final_pose = pose_at(traj.insertion_depth);
  for (const auto* p : {&hover, &standoff, &contact, &final_pose}) {
    if (p->translation().norm() > chain.reach_bound()) return fail(FailReason::out_of_reach, "approach");
  }

  CartesianPathOptions popt;
  popt.tool = ctx.mount.eef_to_tip();
  popt.ik.free_roll = true;
  popt.ik.roll_axis = ctx.mount.eef_to_needle.rotation().col(2);
  popt.ik.roll_point = ctx.mount.tip_in_eef();
  const Vec3 tip_local = Vec3::Zero();
  auto tip_of = [&](const RigidTransform& eef) { return compose(eef, popt.tool).apply(tip_local); };

  const PathCheck approach_check{&ctx.mount, ctx.scene.get(), o.approach_slack};
  std::vector<JointVector> approach;
  JointVector q = ctx.idle;
  RigidTransform from = idle_eef;
  for (const auto* goal : {&hover, &standoff, &contact}) {
    const int n = samples_for((tip_of(*goal) - tip_of(from)).norm(), o.approach_step);
    const auto path = linear_cartesian_path(chain, q, *goal, n, approach_check, popt);
    if (!path.ok()) return fail(path.reason, "approach");
    append_path(approach, path.waypoints);
    q = path.waypoints.back();
    from = *goal;
  }

  const PathCheck stroke_check{&ctx.mount, ctx.scene.get(), traj.insertion_depth + o.approach_slack};
  const int n = samples_for(traj.insertion_depth, o.stroke_step);
  const auto stroke = linear_cartesian_path(chain, q, final_pose, n, stroke_check, popt);
  if (!stroke.ok()) return fail(stroke.reason, "stroke");

  a.result.feasible = true;
  a.result.reason = FailReason::none;
  a.result.approach = std::move(approach);
  a.result.stroke = stroke.waypoints;
  return a;
}

}  // namespace

Feasibility check_trajectory(const NeedleTrajectory& traj, const RobotContext& ctx) {
  traj.validate();
  ctx.validate();
  return attempt_trajectory(traj, ctx).result;
}

InsertionCandidate evaluate_candidate(const Vec3& point, const Target& target, const Volume& volume,
                                      const RobotContext* ctx) {
  if (!ctx) throw Error(ErrorCode::ContextMissing, "candidate evaluation needs a robot context");
  InsertionCandidate c;
  c.surface_point = point;
  c.max_hu = max_hu_along_segment(volume, point, target.position);
  const auto traj = NeedleTrajectory::make(target, point, c.max_hu);
  if (!(traj.insertion_depth > 0.0)) {
    c.fail_reason = FailReason::out_of_reach;
    return c;
  }
  ctx->validate();
  const auto verdict = attempt_trajectory(traj, *ctx).result;
  c.feasible = verdict.feasible;
  c.fail_reason = verdict.reason;
  return c;
}

Colormap build_colormap(const Target& target, const Volume& volume, const TriMesh& skin, const RobotContext* ctx,
                        int workers, double spacing, const ProgressFn& progress, const std::atomic<bool>* cancel) {
  if (workers < 1) throw Error(ErrorCode::InvalidInput, "worker count must be >= 1");
  if (!ctx) throw Error(ErrorCode::ContextMissing, "colormap needs a robot context");
  ctx->validate();
  const auto start = std::chrono::steady_clock::now();
  const auto points = candidate_insertion_points(skin, target, spacing);

  Colormap map;
  map.target_id = target.id;
  map.target = target.position;
  map.spacing = spacing;
  map.candidates.resize(points.size());

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      if (cancel && cancel->load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= points.size()) return;
      try {
        map.candidates[i] = evaluate_candidate(points[i], target, volume, ctx);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(points.size());
        return;
      }
      const std::size_t d = done.fetch_add(1) + 1;
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(d, points.size());
      }
    }
  };
  const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), points.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  if (cancel && cancel->load()) throw Error(ErrorCode::PlanningFailed, "colormap job cancelled");

  map.generation_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return map;
}

ExecutablePlan plan_insertion(const NeedleTrajectory& traj, const RobotContext& ctx) {
  try {
    traj.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::PlanningFailed, std::string("stage=validate: ") + e.what());
  }
  ctx.validate();
  const auto attempt = attempt_trajectory(traj, ctx);
  if (!attempt.result.feasible) {
    throw Error(ErrorCode::PlanningFailed,
                fmt::format("stage={}: {}", attempt.stage, to_string(attempt.result.reason)));
  }
  ExecutablePlan plan;
  append_path(plan.waypoints, attempt.result.approach);
  plan.approach_end = plan.waypoints.size() - 1;
  append_path(plan.waypoints, attempt.result.stroke);
  plan.stroke_end = plan.waypoints.size() - 1;
  const std::vector<JointVector> stroke_back(attempt.result.stroke.rbegin(), attempt.result.stroke.rend());
  const std::vector<JointVector> approach_back(attempt.result.approach.rbegin(), attempt.result.approach.rend());
  append_path(plan.waypoints, stroke_back);
  append_path(plan.waypoints, approach_back);

  plan.times.push_back(0.0);
  for (std::size_t i = 1; i < plan.waypoints.size(); ++i) {
    const double step = (plan.waypoints[i] - plan.waypoints[i - 1]).cwiseAbs().maxCoeff();
    plan.times.push_back(plan.times.back() + step / ctx.options.joint_speed);
  }
  return plan;
}

JointVector sample_plan(const ExecutablePlan& plan, double t) {
  if (plan.waypoints.empty()) throw Error(ErrorCode::InvalidInput, "empty plan");
  if (t <= 0.0) return plan.waypoints.front();
  if (t >= plan.times.back()) return plan.waypoints.back();
  const auto it = std::upper_bound(plan.times.begin(), plan.times.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - plan.times.begin());
  const double t0 = plan.times[i - 1], t1 = plan.times[i];
  const double s = t1 > t0 ? (t - t0) / (t1 - t0) : 1.0;
  return plan.waypoints[i - 1] + s * (plan.waypoints[i] - plan.waypoints[i - 1]);
}

std::string format_colormap(const Colormap& map) {
  std::string out = "# x y z max_hu feasible reason\n";
  out += "target_id=" + map.target_id + "\n";
  out += "target=" + text::vec3(map.target) + "\n";
  out += "spacing=" + text::num(map.spacing) + "\n";
  for (const auto& c : map.candidates) {
    out += fmt::format("{} {} {} {}\n", text::vec3(c.surface_point), text::num(c.max_hu), c.feasible ? 1 : 0,
                       to_string(c.fail_reason));
  }
  return out;
}

Colormap parse_colormap(const std::string& content) {
  Colormap map;
  for (const auto& line : text::content_lines(content)) {
    if (const auto eq = line.find('='); eq != std::string::npos) {
      const std::string key(text::trim(std::string_view(line).substr(0, eq)));
      const std::string value(text::trim(std::string_view(line).substr(eq + 1)));
      if (key == "target_id") map.target_id = value;
      else if (key == "target") map.target = text::parse_vec3(value);
      else if (key == "spacing") map.spacing = text::parse_double(value);
      else throw Error(ErrorCode::ParseError, "unknown colormap key: " + key);
      continue;
    }
    const auto tok = text::split_ws(line);
    if (tok.size() != 6) throw Error(ErrorCode::ParseError, "colormap line needs 6 fields: " + line);
    InsertionCandidate c;
    c.surface_point = Vec3(text::parse_double(tok[0]), text::parse_double(tok[1]), text::parse_double(tok[2]));
    c.max_hu = text::parse_double(tok[3]);
    const auto flag = text::parse_int(tok[4]);
    if (flag != 0 && flag != 1) throw Error(ErrorCode::ParseError, "feasible flag must be 0 or 1");
    c.feasible = flag == 1;
    c.fail_reason = parse_fail_reason(tok[5]);
    if (c.feasible != (c.fail_reason == FailReason::none)) {
      throw Error(ErrorCode::ParseError, "feasible flag disagrees with reason: " + line);
    }
    map.candidates.push_back(c);
  }
  return map;
}

}  // namespace needleplan
