#include "needleplan/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "needleplan/kdtree.hpp"
#include "needleplan/text.hpp"

namespace needleplan {

namespace {



// Rotation-axis spread of a set of relative rotations; 0 when they share one axis.
double axis_spread(const std::vector<Vec3>& axes) {
  Mat3 m = Mat3::Zero();
  for (const auto& a : axes) m += a * a.transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(m);
  const auto ev = es.eigenvalues();  // ascending
  return ev[2] > 0.0 ? ev[1] / ev[2] : 0.0;
}

}  // namespace

HandEyeResult qr24_hand_eye(std::span<const PoseSample> samples) {
  if (samples.size() < 3) throw Error(ErrorCode::DegenerateMotion, "hand-eye calibration needs at least 3 samples");
  for (const auto& s : samples) {
    if (s.robot_pose.from() != FrameId(Frame::B) || s.robot_pose.to() != FrameId(Frame::EEF) ||
        s.tracker_pose.from() != FrameId(Frame::C) || s.tracker_pose.to() != FrameId(Frame::M)) {
      throw Error(ErrorCode::FrameError, "pose samples must be B->EEF and C->M");
    }
  }

  std::vector<Vec3> axes;
  const Mat3& r0 = samples[0].robot_pose.rotation();
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const Vec3 w = rotation_log(samples[i].robot_pose.rotation() * r0.transpose());
    if (w.norm() > 1e-9) axes.push_back(w.normalized());
  }
  if (axes.empty() || axis_spread(axes) < 1e-8) {
    throw Error(ErrorCode::DegenerateMotion, "pose deltas share a single rotation axis");
  }

  double scale = 1.0;
  for (const auto& s : samples) {
    scale = std::max({scale, s.robot_pose.translation().norm(), s.tracker_pose.translation().norm()});
  }

  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(12 * n, 24);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(12 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const Mat3& ra = s.robot_pose.rotation();
    const Mat3& rb = s.tracker_pose.rotation();
    const Vec3 ta = s.robot_pose.translation() / scale;
    const Vec3 tb = s.tracker_pose.translation() / scale;
    const Eigen::Index row = 12 * i;
    // Rotation rows: column c of R_A R_X is R_A * X[:,c]; column c of R_Z R_B is sum_k R_B(k,c) Z[:,k].
    for (int c = 0; c < 3; ++c) {
      a.block<3, 3>(row + 3 * c, 3 * c) = ra;
      for (int k = 0; k < 3; ++k) a.block<3, 3>(row + 3 * c, 12 + 3 * k) = -rb(k, c) * Mat3::Identity();
    }
    // Translation rows.
    a.block<3, 3>(row + 9, 9) = ra;
    for (int k = 0; k < 3; ++k) a.block<3, 3>(row + 9, 12 + 3 * k) = -tb[k] * Mat3::Identity();
    a.block<3, 3>(row + 9, 21) = -Mat3::Identity();
    b.segment<3>(row + 9) = -ta;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < 24) {
    throw Error(ErrorCode::DegenerateMotion, fmt::format("hand-eye system has rank {} < 24", qr.rank()));
  }
  const Eigen::VectorXd w = qr.solve(b);

  const Mat3 rx_raw = Eigen::Map<const Mat3>(w.data());
  const Mat3 rz_raw = Eigen::Map<const Mat3>(w.data() + 12);
  HandEyeResult out;
  out.x = RigidTransform(nearest_rotation(rx_raw), w.segment<3>(9) * scale, Frame::EEF, Frame::M);
  out.z = RigidTransform(nearest_rotation(rz_raw), w.segment<3>(21) * scale, Frame::B, Frame::C);

  double sum = 0.0;
  for (const auto& s : samples) {
    const Vec3 lhs = compose(s.robot_pose, out.x).translation();
    const Vec3 rhs = compose(out.z, s.tracker_pose).translation();
    sum += (lhs - rhs).squaredNorm();
  }
  out.residual = std::sqrt(sum / static_cast<double>(samples.size()));
  return out;
}

PivotResult pivot_calibrate(std::span<const RigidTransform> poses) {
  if (poses.size() < 4) throw Error(ErrorCode::DegenerateMotion, "pivot calibration needs at least 4 poses");
  const auto n = static_cast<Eigen::Index>(poses.size());
  Eigen::MatrixXd a(3 * n, 6);
  Eigen::VectorXd b(3 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = poses[static_cast<std::size_t>(i)];
    a.block<3, 3>(3 * i, 0) = p.rotation();
    a.block<3, 3>(3 * i, 3) = -Mat3::Identity();
    b.segment<3>(3 * i) = -p.translation();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-9);
  if (qr.rank() < 6) {
    throw Error(ErrorCode::DegenerateMotion, fmt::format("pivot system has rank {} < 6", qr.rank()));
  }
  const Eigen::VectorXd x = qr.solve(b);
  PivotResult out;
  out.tip_offset = x.head<3>();
  out.pivot_point = x.tail<3>();
  double sum = 0.0;
  for (const auto& p : poses) sum += (p.apply(out.tip_offset) - out.pivot_point).squaredNorm();
  out.residual = std::sqrt(sum / static_cast<double>(poses.size()));
  return out;
}

Eigen::Isometry3d kabsch(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size() || source.size() < 3) {
    throw Error(ErrorCode::InvalidInput, "kabsch needs >= 3 paired points");
  }
  Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    cs += source[i];
    ct += target[i];
  }
  cs /= static_cast<double>(source.size());
  ct /= static_cast<double>(source.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) h += (source[i] - cs) * (target[i] - ct).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  if (s[1] <= 1e-9 * std::max(1.0, s[0])) throw Error(ErrorCode::DegenerateInput, "collinear point set");
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
  Eigen::Isometry3d out = Eigen::Isometry3d::Identity();
  out.linear() = r;
  out.translation() = ct - r * cs;
  return out;
}

IcpResult icp_rigid(std::span<const Vec3> source, std::span<const Vec3> target, const RigidTransform& init,
                    const IcpOptions& options) {
  if (source.size() < 3 || target.size() < 3) throw Error(ErrorCode::InvalidInput, "ICP needs >= 3 points per set");
  const bool use_tree = target.size() >= 50;
  const KdTree tree = use_tree ? KdTree(target) : KdTree();
  auto nearest = [&](const Vec3& q) -> std::size_t {
    if (use_tree) return tree.nearest(q).first;
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < target.size(); ++j) {
      const double d2 = (target[j] - q).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = j;
      }
    }
    return best;
  };

  Mat3 r = init.rotation();
  Vec3 t = init.translation();
  std::vector<Vec3> paired(source.size());
  IcpResult out;
  double previous = std::numeric_limits<double>::infinity();
  for (int it = 0; it < options.max_iterations; ++it) {
    for (std::size_t i = 0; i < source.size(); ++i) paired[i] = target[nearest(r * source[i] + t)];
    const Eigen::Isometry3d fit = kabsch(source, paired);
    r = nearest_rotation(fit.linear());
    t = fit.translation();
    double sum = 0.0;
    for (std::size_t i = 0; i < source.size(); ++i) sum += (r * source[i] + t - paired[i]).squaredNorm();
    const double rms = std::sqrt(sum / static_cast<double>(source.size()));
    out.rms_history.push_back(rms);
    out.iterations = it + 1;
    if (previous - rms < options.min_improvement) break;
    previous = rms;
  }
  // Final residual against the converged correspondences.
  double sum = 0.0;
  for (const auto& p : source) sum += (target[nearest(r * p + t)] - (r * p + t)).squaredNorm();
  out.rms = std::sqrt(sum / static_cast<double>(source.size()));
  out.transform = RigidTransform(r, t, init.from(), init.to());
  return out;
}

GridModel GridModel::standard() {
  GridModel g;
  for (int r = 0; r < kRows; ++r) {
    for (int c = 0; c < kColumns; ++c) {
      g.ball_centers.emplace_back((c - 0.5 * (kColumns - 1)) * kColumnSpacing, (r - 0.5 * (kRows - 1)) * kRowSpacing,
                                  0.0);
      const bool large = (r == 0 && c <= 1) || (r == 1 && c == 0);
      g.ball_radii.push_back(large ? kLargeRadius : kSmallRadius);
    }
  }
  return g;
}

void GridModel::validate() const {
  if (ball_centers.size() != kColumns * kRows || ball_radii.size() != ball_centers.size()) {
    throw Error(ErrorCode::InvalidSpec, "grid needs exactly 20 balls");
  }
  bool any_large = false;
  for (std::size_t n = 0; n < ball_radii.size(); ++n) {
    if (ball_radii[n] != kSmallRadius && ball_radii[n] != kLargeRadius) {
      throw Error(ErrorCode::InvalidSpec, "ball radius must be 2 or 5 mm");
    }
    any_large = any_large || is_large(n);
  }
  if (!any_large) throw Error(ErrorCode::InvalidSpec, "grid needs at least one 5 mm ball");
}

std::vector<BallSpec> GridModel::placed(const RigidTransform& ct_to_sb) const {
  std::vector<BallSpec> out;
  for (std::size_t n = 0; n < ball_centers.size(); ++n) out.push_back({ct_to_sb.apply(ball_centers[n]), ball_radii[n]});
  return out;
}

namespace {

struct Pca {
  Vec3 centroid;
  Mat3 axes;  // columns: largest, middle, normal (right-handed)
};

Pca principal_axes(std::span<const Vec3> pts) {
  Pca out;
  out.centroid = Vec3::Zero();
  for (const auto& p : pts) out.centroid += p;
  out.centroid /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) cov += (p - out.centroid) * (p - out.centroid).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const Vec3 e_large = es.eigenvectors().col(2);
  const Vec3 e_mid = es.eigenvectors().col(1);
  out.axes.col(0) = e_large;
  out.axes.col(1) = e_mid;
  out.axes.col(2) = e_large.cross(e_mid);
  return out;
}

}  // namespace

GridDetection register_grid(std::span<const SegmentedBlob> blobs, const GridModel& grid,
                            const GridDetectionOptions& options) {
  grid.validate();
  if (blobs.size() < 4) {
    throw Error(ErrorCode::InsufficientMarkers, fmt::format("only {} steel balls detected, need 4", blobs.size()));
  }
  const double split = 0.5 * (GridModel::kSmallRadius + GridModel::kLargeRadius);
  std::vector<Vec3> data;
  std::vector<bool> data_large;
  for (const auto& b : blobs) {
    data.push_back(b.centroid);
    data_large.push_back(b.equivalent_radius > split);
  }
  const std::span<const Vec3> model(grid.ball_centers);

  const Pca pd = principal_axes(data);
  const Pca pm = principal_axes(model);

  auto nearest_ball = [&](const Vec3& q) {
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < model.size(); ++j) {
      const double d2 = (model[j] - q).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = j;
      }
    }
    return std::pair{best, std::sqrt(best_d2)};
  };

  struct Candidate {
    IcpResult icp;
    int mismatches = 0;
  };
  std::optional<Candidate> best;
  for (int swap = 0; swap < 2; ++swap) {
    for (int s1 = -1; s1 <= 1; s1 += 2) {
      for (int s2 = -1; s2 <= 1; s2 += 2) {
        const Vec3 f0 = s1 * pd.axes.col(swap ? 1 : 0);
        const Vec3 f1 = s2 * pd.axes.col(swap ? 0 : 1);
        Mat3 f;
        f << f0, f1, f0.cross(f1);
        const Mat3 r = pm.axes * f.transpose();  // data -> model
        const Vec3 t = pm.centroid - r * pd.centroid;
        Candidate c;
        c.icp = icp_rigid(data, model, RigidTransform(r, t, Frame::SB, Frame::CT));
        for (std::size_t i = 0; i < data.size(); ++i) {
          const auto [j, d] = nearest_ball(c.icp.transform.apply(data[i]));
          if (d > options.match_tolerance || grid.is_large(j) != data_large[i]) ++c.mismatches;
        }
        if (!best || std::tie(c.mismatches, c.icp.rms) < std::tie(best->mismatches, best->icp.rms)) best = c;
      }
    }
  }

  GridDetection out;
  out.sb_to_ct = best->icp.transform;
  out.detected_blobs = blobs.size();
  out.radius_mismatches = best->mismatches;
  out.ball_to_blob.assign(model.size(), -1);
  std::vector<double> ball_dist(model.size(), std::numeric_limits<double>::infinity());
  double sum = 0.0;
  std::size_t matched = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto [j, d] = nearest_ball(out.sb_to_ct.apply(data[i]));
    if (d > options.match_tolerance) continue;
    sum += d * d;
    ++matched;
    if (d < ball_dist[j]) {
      ball_dist[j] = d;
      out.ball_to_blob[j] = static_cast<int>(i);
    }
  }
  out.rms = matched ? std::sqrt(sum / static_cast<double>(matched)) : std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < model.size(); ++j) {
    if (out.ball_to_blob[j] < 0) out.missing_balls.push_back(j);
  }
  return out;
}

GridDetection detect_grid_pose(const Volume& volume, const GridModel& grid, const GridDetectionOptions& options) {
  const auto blobs = segment_high_density_blobs(volume, options.threshold, options.min_blob_voxels);
  return register_grid(blobs, grid, options);
}

RigidTransform chain_base_to_ct(const CalibrationChain& chain) {
  const std::pair<const RigidTransform*, std::pair<Frame, Frame>> edges[] = {
      {&chain.b_to_tb, {Frame::B, Frame::TB}},   {&chain.tb_to_c, {Frame::TB, Frame::C}},
      {&chain.c_to_rm, {Frame::C, Frame::RM}},   {&chain.rm_to_sb, {Frame::RM, Frame::SB}},
      {&chain.sb_to_ct, {Frame::SB, Frame::CT}},
  };
  for (const auto& [t, frames] : edges) {
    if (t->from() != FrameId(frames.first) || t->to() != FrameId(frames.second)) {
      throw Error(ErrorCode::FrameError, "chain edge " + to_string(t->from()) + "->" + to_string(t->to()) +
                                             " where " + to_string(FrameId(frames.first)) + "->" +
                                             to_string(FrameId(frames.second)) + " was expected");
    }
  }
  return compose(compose(compose(compose(chain.b_to_tb, chain.tb_to_c), chain.c_to_rm), chain.rm_to_sb),
                 chain.sb_to_ct);
}

namespace {

void append_pose(std::string& out, const RigidTransform& t) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out += text::num(t.rotation()(r, c)) + ' ';
    out += text::num(t.translation()[r]);
    out += r == 2 ? "" : " ";
  }
}

RigidTransform pose_from(const std::vector<double>& v, std::size_t offset, Frame from, Frame to) {
  Mat3 r;
  Vec3 t;
  for (int row = 0; row < 3; ++row) {
    for (int c = 0; c < 3; ++c) r(row, c) = v[offset + 4 * row + c];
    t[row] = v[offset + 4 * row + 3];
  }
  return RigidTransform(r, t, from, to);
}

}  // namespace

std::string format_pose_samples(std::span<const PoseSample> samples) {
  std::string out = "# robot B->EEF [R|t] row-major, tracker C->M [R|t] row-major\n";
  for (const auto& s : samples) {
    append_pose(out, s.robot_pose);
    out += ' ';
    append_pose(out, s.tracker_pose);
    out += '\n';
  }
  return out;
}

std::vector<PoseSample> parse_pose_samples(const std::string& content) {
  std::vector<PoseSample> out;
  for (const auto& line : text::content_lines(content)) {
    const auto v = text::parse_doubles(line);
    if (v.size() != 24) throw Error(ErrorCode::ParseError, fmt::format("pose line has {} numbers, expected 24", v.size()));
    out.push_back({pose_from(v, 0, Frame::B, Frame::EEF), pose_from(v, 12, Frame::C, Frame::M)});
  }
  return out;
}

}  // namespace needleplan
