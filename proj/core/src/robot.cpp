#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "needleplan/robot.hpp"
#include "needleplan/text.hpp"

namespace needleplan {

NeedleMount NeedleMount::standard() {
  NeedleMount m;
  m.eef_to_needle = RigidTransform::translation_only(Vec3(0.0, 0.0, 80.0), Frame::EEF, Frame::N);
  m.needle_length = 250.0;
  m.needle_radius = 1.0;
  return m;
}

void NeedleMount::validate() const {
  if (!(needle_length > 0.0)) throw Error(ErrorCode::InvalidSpec, "needle length must be positive");
  if (!(needle_radius > 0.0)) throw Error(ErrorCode::InvalidSpec, "needle radius must be positive");
  if (eef_to_needle.from() != FrameId(Frame::EEF) || eef_to_needle.to() != FrameId(Frame::N)) {
    throw Error(ErrorCode::FrameError, "needle mount must be EEF->N");
  }
}

RigidTransform NeedleMount::eef_to_tip() const {
  return RigidTransform(eef_to_needle.rotation(), tip_in_eef(), Frame::EEF, Frame::N);
}

CollisionScene::CollisionScene(TriMesh skin, SceneBox gantry, std::vector<SceneBox> boxes, RigidTransform b_to_ct)
    : CollisionScene(std::make_shared<const MeshIndex>(std::move(skin)), std::move(gantry), std::move(boxes),
                     std::move(b_to_ct)) {}

CollisionScene::CollisionScene(std::shared_ptr<const MeshIndex> skin, SceneBox gantry, std::vector<SceneBox> boxes,
                               RigidTransform b_to_ct)
    : skin_(std::move(skin)), gantry_(std::move(gantry)), boxes_(std::move(boxes)), b_to_ct_(std::move(b_to_ct)) {
  if (!skin_ || skin_->mesh().empty()) throw Error(ErrorCode::InvalidInput, "collision scene needs a skin mesh");
  if (b_to_ct_.from() != FrameId(Frame::B) || b_to_ct_.to() != FrameId(Frame::CT)) {
    throw Error(ErrorCode::FrameError, "scene registration must be B->CT");
  }
  ct_to_b_ = b_to_ct_.inverse();
}

double capsule_box_clearance(const Vec3& a, const Vec3& b, double radius, const Aabb& box) {
  // The signed distance of a convex set is convex, so golden-section search finds its minimum on the segment.
  const Vec3 d = b - a;
  auto f = [&](double s) { return box.signed_distance(a + s * d); };
  constexpr double g = 0.6180339887498949;
  double lo = 0.0, hi = 1.0;
  double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 80 && hi - lo > 1e-12; ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - g * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + g * (hi - lo);
      f2 = f(x2);
    }
  }
  const double best = std::min({f(0.0), f(1.0), f1, f2});
  return best - radius;
}

CollisionReport check_collision(const KinematicChain& chain, const JointVector& q, const NeedleMount& mount,
                                const CollisionScene& scene, double allowed_needle_penetration, bool stop_at_first) {
  CollisionReport report;
  const LinkFrames frames = chain.link_frames(q);
  const RigidTransform& to_ct = scene.ct_to_b();
  const MeshIndex& skin = scene.skin();
  auto add = [&](const std::string& first, const std::string& second, double pen) {
    report.pairs.push_back({first, second, pen});
    return stop_at_first;
  };
  auto against_boxes = [&](const std::string& name, const Vec3& a, const Vec3& b, double r) {
    const double g = capsule_box_clearance(a, b, r, scene.gantry().box);
    if (g < 0.0 && add(name, scene.gantry().name, -g)) return true;
    for (const auto& box : scene.boxes()) {
      const double c = capsule_box_clearance(a, b, r, box.box);
      if (c < 0.0 && add(name, box.name, -c)) return true;
    }
    return false;
  };

  const auto& caps = chain.capsules();
  std::vector<std::pair<Vec3, Vec3>> ends(caps.size());
  for (std::size_t i = 0; i < caps.size(); ++i) {
    const auto& c = caps[i];
    ends[i] = {frames[c.link] * c.a, frames[c.link] * c.b};
  }

  for (std::size_t i = 0; i < caps.size(); ++i) {
    const auto& c = caps[i];
    const Vec3 a = to_ct.apply(ends[i].first);
    const Vec3 b = to_ct.apply(ends[i].second);
    const double d = skin.segment_distance(a, b, c.radius);
    if (d < c.radius) {
      if (add(c.name, "skin", c.radius - d)) return report;
    } else if (skin.contains(a)) {
      if (add(c.name, "skin", c.radius + d)) return report;
    }
    if (against_boxes(c.name, a, b, c.radius)) return report;
  }

  const Eigen::Isometry3d& flange = frames[kJointCount];
  const Vec3 hub = to_ct.apply(flange * mount.eef_to_needle.translation());
  const Vec3 tip = to_ct.apply(flange * mount.tip_in_eef());
  const double inside = skin.inside_length(hub, tip);
  if (inside > allowed_needle_penetration && add("needle", "skin", inside - allowed_needle_penetration)) return report;
  if (against_boxes("needle", hub, tip, mount.needle_radius)) return report;

  for (std::size_t i = 0; i < caps.size(); ++i) {
    for (std::size_t j = i + 1; j < caps.size(); ++j) {
      if (std::abs(caps[i].link - caps[j].link) < kSelfCollisionLinkGap) continue;
      const double d = segment_segment_distance(ends[i].first, ends[i].second, ends[j].first, ends[j].second);
      const double reach = caps[i].radius + caps[j].radius;
      if (d < reach && add(caps[i].name, caps[j].name, reach - d)) return report;
    }
  }
  return report;
}

RigidTransform needle_pose_to_eef(const Vec3& point_ct, const Vec3& dir_ct, double depth, const RigidTransform& b_to_ct,
                                  const NeedleMount& mount, const std::optional<Vec3>& roll_hint_ct) {
  if (!dir_ct.allFinite() || std::abs(dir_ct.norm() - 1.0) > 1e-6) {
    throw Error(ErrorCode::InvalidInput, "insertion direction must be unit length");
  }
  const Vec3 z = dir_ct;
  Vec3 x = Vec3::Zero();
  if (roll_hint_ct) x = *roll_hint_ct - roll_hint_ct->dot(z) * z;
  if (x.norm() < 1e-6) {
    int axis = 0;
    z.cwiseAbs().minCoeff(&axis);
    const Vec3 e = Vec3::Unit(axis);
    x = e - e.dot(z) * z;
  }
  x.normalize();
  Mat3 r;
  r << x, z.cross(x), z;
  const Vec3 tip = point_ct + depth * z;
  const RigidTransform ct_to_n(r, tip - mount.needle_length * z, Frame::CT, Frame::N);
  return compose(compose(b_to_ct, ct_to_n), mount.eef_to_needle.inverse());
}

std::string to_string(FailReason r) {
  switch (r) {
    case FailReason::none: return "none";
    case FailReason::ik_failure: return "ik_failure";
    case FailReason::collision: return "collision";
    case FailReason::joint_jump: return "joint_jump";
    case FailReason::out_of_reach: return "out_of_reach";
  }
  return "none";
}

FailReason parse_fail_reason(std::string_view s) {
  for (auto r : {FailReason::none, FailReason::ik_failure, FailReason::collision, FailReason::joint_jump,
                 FailReason::out_of_reach}) {
    if (to_string(r) == s) return r;
  }
  throw Error(ErrorCode::ParseError, "unknown fail reason: " + std::string(s));
}

CartesianPath linear_cartesian_path(const KinematicChain& chain, const JointVector& start_q,
                                    const RigidTransform& goal_eef, int waypoints, const PathCheck& check,
                                    const CartesianPathOptions& options) {
  if (waypoints < 2) throw Error(ErrorCode::InvalidInput, "a Cartesian path needs at least 2 waypoints");
  CartesianPath out;
  auto fail = [&](FailReason r, std::size_t at) {
    out.waypoints.clear();
    out.reason = r;
    out.failed_at = at;
    return out;
  };
  if (goal_eef.translation().norm() > chain.reach_bound()) return fail(FailReason::ik_failure, waypoints - 1);

  const RigidTransform& tool = options.tool;
  const RigidTransform tool_inv = tool.inverse();
  const RigidTransform start_eef = forward_kinematics(chain, start_q);
  const Mat3 start_r = start_eef.rotation() * tool.rotation();
  const Mat3 goal_r = goal_eef.rotation() * tool.rotation();
  const Vec3 p0 = start_eef.apply(tool.translation());
  const Vec3 p1 = goal_eef.apply(tool.translation());
  const Eigen::Quaterniond q0(start_r), q1(goal_r);
  auto eef_at = [&](double s) {
    const Mat3 r = q0.slerp(s, q1).toRotationMatrix();
    const Vec3 p = p0 + s * (p1 - p0);
    // eef = tool_pose * tool^-1
    return RigidTransform(r * tool_inv.rotation(), r * tool_inv.translation() + p, Frame::B, Frame::EEF);
  };
  auto collides = [&](const JointVector& q) {
    if (!check.scene || !check.mount) return false;
    return check_collision(chain, q, *check.mount, *check.scene, check.allowed_needle_penetration, true).collides();
  };

  IkOptions ik = options.ik;
  ik.use_auxiliary_seeds = false;
  if (collides(start_q)) return fail(FailReason::collision, 0);
  out.waypoints.push_back(start_q);
  JointVector prev = start_q;
  for (int k = 1; k < waypoints; ++k) {
    const double s0 = static_cast<double>(k - 1) / (waypoints - 1);
    const double s1 = static_cast<double>(k) / (waypoints - 1);
    std::vector<JointVector> local;
    bool jumped = false;
    for (int sub = 1; sub <= std::max(1, options.max_densify); sub *= 2) {
      local.clear();
      jumped = false;
      JointVector q = prev;
      for (int m = 1; m <= sub; ++m) {
        const auto sol = inverse_kinematics(chain, eef_at(s0 + (s1 - s0) * m / sub), q, ik);
        if (!sol) return fail(FailReason::ik_failure, static_cast<std::size_t>(k));
        if ((*sol - q).cwiseAbs().maxCoeff() > options.max_joint_step_deg) {
          jumped = true;
          break;
        }
        q = *sol;
        local.push_back(q);
      }
      if (!jumped) break;
    }
    if (jumped) return fail(FailReason::joint_jump, static_cast<std::size_t>(k));
    for (const auto& q : local) {
      if (collides(q)) return fail(FailReason::collision, static_cast<std::size_t>(k));
      out.waypoints.push_back(q);
    }
    prev = local.back();
  }
  return out;
}

KinematicChain parse_chain(const std::string& content) {
  std::array<DhRow, kJointCount> rows{};
  std::array<JointLimit, kJointCount> limits{};
  std::vector<LinkCapsule> capsules;
  int joints = 0;
  for (const auto& line : text::content_lines(content)) {
    const auto tok = text::split_ws(line);
    if (tok[0] == "joint") {
      if (tok.size() != 7) throw Error(ErrorCode::ParseError, "joint line needs 6 numbers: " + line);
      if (joints >= kJointCount) throw Error(ErrorCode::ParseError, "more than 7 joint lines");
      double v[6];
      for (int i = 0; i < 6; ++i) v[i] = text::parse_double(tok[i + 1]);
      rows[joints] = {v[0], v[1], v[2], v[3]};
      limits[joints] = {v[4], v[5]};
      ++joints;
    } else if (tok[0] == "capsule") {
      if (tok.size() != 10) throw Error(ErrorCode::ParseError, "capsule line needs name, link and 7 numbers: " + line);
      LinkCapsule c;
      c.name = tok[1];
      c.link = static_cast<int>(text::parse_int(tok[2]));
      c.a = Vec3(text::parse_double(tok[3]), text::parse_double(tok[4]), text::parse_double(tok[5]));
      c.b = Vec3(text::parse_double(tok[6]), text::parse_double(tok[7]), text::parse_double(tok[8]));
      c.radius = text::parse_double(tok[9]);
      capsules.push_back(std::move(c));
    } else {
      throw Error(ErrorCode::ParseError, "unknown chain record: " + tok[0]);
    }
  }
  if (joints != kJointCount) throw Error(ErrorCode::ParseError, fmt::format("chain has {} joints, expected 7", joints));
  return KinematicChain(rows, limits, std::move(capsules));
}

std::string format_chain(const KinematicChain& chain) {
  std::string out = "# joint a alpha_deg d theta_offset_deg min_deg max_deg\n";
  for (int j = 0; j < kJointCount; ++j) {
    const auto& r = chain.rows()[j];
    const auto& l = chain.limits()[j];
    out += fmt::format("joint {} {} {} {} {} {}\n", r.a, r.alpha_deg, r.d, r.theta_offset_deg, l.min_deg, l.max_deg);
  }
  out += "# capsule name link ax ay az bx by bz radius\n";
  for (const auto& c : chain.capsules()) {
    out += fmt::format("capsule {} {} {} {} {}\n", c.name, c.link, text::vec3(c.a), text::vec3(c.b), c.radius);
  }
  return out;
}

}  // namespace needleplan
