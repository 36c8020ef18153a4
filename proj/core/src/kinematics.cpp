#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "needleplan/robot.hpp"

namespace needleplan {

namespace {

Eigen::Isometry3d dh_transform(const DhRow& row, double q_deg) {
  const double th = deg2rad(q_deg + row.theta_offset_deg);
  const double al = deg2rad(row.alpha_deg);
  const double ct = std::cos(th), st = std::sin(th), ca = std::cos(al), sa = std::sin(al);
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  t.linear() << ct, -st, 0.0, st * ca, ct * ca, -sa, st * sa, ct * sa, ca;
  t.translation() << row.a, -sa * row.d, ca * row.d;
  return t;
}

}  // namespace

KinematicChain::KinematicChain(std::array<DhRow, kJointCount> rows, std::array<JointLimit, kJointCount> limits,
                               std::vector<LinkCapsule> capsules)
    : rows_(rows), limits_(limits), capsules_(std::move(capsules)) {
  for (const auto& l : limits_) {
    if (!(l.min_deg < l.max_deg)) throw Error(ErrorCode::InvalidSpec, "joint limit min must be below max");
  }
  for (const auto& c : capsules_) {
    if (!(c.radius > 0.0)) throw Error(ErrorCode::InvalidSpec, "capsule radius must be positive: " + c.name);
    if (c.link < 0 || c.link > kJointCount) throw Error(ErrorCode::InvalidSpec, "capsule link out of range: " + c.name);
  }
}

KinematicChain KinematicChain::lbr_like() {
  const std::array<DhRow, kJointCount> rows{{
      {0.0, 0.0, 360.0, 0.0},
      {0.0, -90.0, 0.0, 0.0},
      {0.0, 90.0, 420.0, 0.0},
      {0.0, 90.0, 0.0, 0.0},
      {0.0, -90.0, 400.0, 0.0},
      {0.0, -90.0, 0.0, 0.0},
      {0.0, 90.0, 126.0, 0.0},
  }};
  std::array<JointLimit, kJointCount> limits{};
  for (int j = 0; j < kJointCount; ++j) limits[j] = j % 2 == 0 ? JointLimit{-170.0, 170.0} : JointLimit{-120.0, 120.0};
  std::vector<LinkCapsule> capsules{
      {"base", 0, Vec3(0, 0, 0), Vec3(0, 0, 200), 60.0},
      {"link1", 1, Vec3(0, 0, -160), Vec3(0, 0, -40), 60.0},
      {"shoulder", 2, Vec3(0, 0, 0), Vec3(0, 0, 0), 65.0},
      {"upper_arm", 3, Vec3(0, 0, -340), Vec3(0, 0, -80), 50.0},
      {"elbow", 4, Vec3(0, 0, 0), Vec3(0, 0, 0), 60.0},
      {"forearm", 5, Vec3(0, 0, -320), Vec3(0, 0, -80), 45.0},
      {"wrist", 6, Vec3(0, 0, 0), Vec3(0, 0, 0), 55.0},
      {"flange", 7, Vec3(0, 0, -70), Vec3(0, 0, 0), 45.0},
      {"eef_tool", 7, Vec3(0, 0, 0), Vec3(0, 0, 70), 30.0},
  };
  return KinematicChain(rows, limits, std::move(capsules));
}

bool KinematicChain::within_limits(const JointVector& q, double tol_deg) const {
  for (int j = 0; j < kJointCount; ++j) {
    if (!std::isfinite(q[j]) || q[j] < limits_[j].min_deg - tol_deg || q[j] > limits_[j].max_deg + tol_deg) return false;
  }
  return true;
}

JointVector KinematicChain::clamp(const JointVector& q) const {
  JointVector out;
  for (int j = 0; j < kJointCount; ++j) out[j] = std::clamp(q[j], limits_[j].min_deg, limits_[j].max_deg);
  return out;
}

double KinematicChain::reach_bound() const {
  double sum = 0.0;
  for (const auto& r : rows_) sum += std::abs(r.a) + std::abs(r.d);
  return sum;
}

LinkFrames KinematicChain::link_frames(const JointVector& q) const {
  LinkFrames frames;
  frames[0] = Eigen::Isometry3d::Identity();
  for (int j = 0; j < kJointCount; ++j) frames[j + 1] = frames[j] * dh_transform(rows_[j], q[j]);
  return frames;
}

Eigen::Matrix<double, 6, kJointCount> KinematicChain::jacobian(const JointVector& q) const {
  const LinkFrames f = link_frames(q);
  const Vec3 p = f[kJointCount].translation();
  Eigen::Matrix<double, 6, kJointCount> j;
  for (int i = 0; i < kJointCount; ++i) {
    const Vec3 z = f[i + 1].linear().col(2);
    const Vec3 o = f[i + 1].translation();
    j.block<3, 1>(0, i) = z.cross(p - o);
    j.block<3, 1>(3, i) = z;
  }
  return j;
}

RigidTransform forward_kinematics(const KinematicChain& chain, const JointVector& q) {
  if (!q.allFinite()) throw Error(ErrorCode::InvalidInput, "joint vector contains NaN");
  const auto f = chain.link_frames(q);
  return RigidTransform(f[kJointCount].linear(), f[kJointCount].translation(), Frame::B, Frame::EEF);
}

const std::array<JointVector, 8>& auxiliary_ik_seeds() {
  static const std::array<JointVector, 8> seeds = [] {
    std::array<JointVector, 8> s;
    s[0] << 0, 45, 0, -90, 0, 45, 0;
    s[1] << 90, 45, 0, -90, 0, 45, 0;
    s[2] << -90, 45, 0, -90, 0, 45, 0;
    s[3] << 160, 45, 0, -90, 0, 45, 0;
    s[4] << 0, -45, 0, 90, 0, -45, 0;
    s[5] << 90, -45, 0, 90, 0, -45, 0;
    s[6] << -90, -45, 0, 90, 0, -45, 0;
    s[7] << 0, 90, 0, -30, 0, -60, 0;
    return s;
  }();
  return seeds;
}

namespace {

std::optional<JointVector> solve_from(const KinematicChain& chain, const RigidTransform& target, const JointVector& seed,
                                      const IkOptions& o) {
  const JointVector rest = chain.clamp(seed);
  JointVector q = rest;
  const double lambda2 = o.damping * o.damping;
  const double max_step = deg2rad(o.max_step_deg);
  const double rot_tol = deg2rad(o.orientation_tol);
  const Vec3 point = o.free_roll ? o.roll_point : Vec3::Zero();
  const Vec3 axis = o.roll_axis.normalized();
  const Vec3 goal_p = target.apply(point);
  const Mat3& goal_r = target.rotation();
  const Vec3 goal_axis = goal_r * axis;
  for (int it = 0; it <= o.max_iterations; ++it) {
    const LinkFrames f = chain.link_frames(q);
    const Vec3 p = f[kJointCount] * point;
    const Mat3 r = f[kJointCount].linear();
    const Vec3 ep = goal_p - p;
    Vec3 er;
    Mat3 project = Mat3::Identity();
    if (o.free_roll) {
      const Vec3 a = r * axis;
      const Vec3 w = a.cross(goal_axis);
      const double angle = std::atan2(w.norm(), a.dot(goal_axis));
      if (w.norm() > 1e-15) {
        er = w.normalized() * angle;
      } else if (angle > 1.0) {
        er = a.unitOrthogonal() * angle;
      } else {
        er = Vec3::Zero();
      }
      project -= a * a.transpose();
    } else {
      er = rotation_log(goal_r * r.transpose());
    }
    if (ep.norm() < o.position_tol && er.norm() < rot_tol) {
      if (chain.within_limits(q)) return q;
      return std::nullopt;
    }
    if (it == o.max_iterations) break;

    Eigen::Matrix<double, 6, kJointCount> j;
    for (int i = 0; i < kJointCount; ++i) {
      const Vec3 z = f[i + 1].linear().col(2);
      j.block<3, 1>(0, i) = z.cross(p - f[i + 1].translation()) * 1e-3;  // meters
      j.block<3, 1>(3, i) = project * z;
    }
    Eigen::Matrix<double, 6, 1> e;
    e << ep * 1e-3, er;
    const Eigen::Matrix<double, 6, 6> jjt = j * j.transpose() + lambda2 * Eigen::Matrix<double, 6, 6>::Identity();
    const Eigen::Matrix<double, kJointCount, 6> jpinv =
        j.transpose() * jjt.ldlt().solve(Eigen::Matrix<double, 6, 6>::Identity());
    // Self-motion directions: right singular vectors outside the row space of J.
    Eigen::JacobiSVD<Eigen::Matrix<double, 6, kJointCount>> svd(j, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const JointVector pull = (rest - q) * (kPi / 180.0);
    JointVector dq = jpinv * e;
    for (int c = 0; c < kJointCount; ++c) {
      if (c >= 6 || sv[c] < 1e-9 * sv[0]) {
        const JointVector n = svd.matrixV().col(c);
        dq += o.nullspace_gain * n * n.dot(pull);
      }
    }
    const double largest = dq.cwiseAbs().maxCoeff();
    if (largest > max_step) dq *= max_step / largest;
    q = chain.clamp(q + dq * (180.0 / kPi));
  }
  return std::nullopt;
}

}  // namespace

std::optional<JointVector> inverse_kinematics(const KinematicChain& chain, const RigidTransform& target,
                                              const JointVector& seed, const IkOptions& options) {
  if (!seed.allFinite()) throw Error(ErrorCode::InvalidInput, "IK seed contains NaN");
  // Poses outside the reach sphere cannot converge; skip the iterations.
  if (target.translation().norm() > chain.reach_bound()) return std::nullopt;
  if (auto q = solve_from(chain, target, seed, options)) return q;
  if (!options.use_auxiliary_seeds) return std::nullopt;
  for (const auto& aux : auxiliary_ik_seeds()) {
    if (auto q = solve_from(chain, target, aux, options)) return q;
  }
  return std::nullopt;
}

}  // namespace needleplan
