#include "needleplan/volume.hpp"

#include <algorithm>
#include <cmath>

namespace needleplan {

namespace {

// Snaps grid coordinates that are within rounding noise of a lattice plane so
// that voxel-center queries hit the stored value exactly.
double snap(double g) {
  const double r = std::round(g);
  return std::abs(g - r) < 1e-9 ? r : g;
}

struct Cell {
  int i0[3];
  double frac[3];
};

bool locate(const Volume& v, const Vec3& p, Cell& cell) {
  const Vec3 g = v.to_grid(p);
  for (int k = 0; k < 3; ++k) {
    const double gk = snap(g[k]);
    const int n = v.dims()[k];
    if (!(gk >= 0.0) || gk > n - 1) return false;
    int i = static_cast<int>(std::floor(gk));
    if (i > n - 2) i = n - 2;
    cell.i0[k] = i;
    cell.frac[k] = gk - i;
  }
  return true;
}

double interpolate(const Volume& v, const Cell& c) {
  const int i = c.i0[0], j = c.i0[1], k = c.i0[2];
  const double fx = c.frac[0], fy = c.frac[1], fz = c.frac[2];
  // Exact pass-through at lattice points: skip zero-weight corners entirely.
  if (fx == 0.0 && fy == 0.0 && fz == 0.0) return v.at(i, j, k);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? fz : 1.0 - fz;
    if (wz == 0.0) continue;
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? fy : 1.0 - fy;
      if (wy == 0.0) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? fx : 1.0 - fx;
        if (wx == 0.0) continue;
        acc += wx * wy * wz * v.at(i + dx, j + dy, k + dz);
      }
    }
  }
  return acc;
}

}  // namespace

Volume::Volume(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, std::vector<std::int16_t> data)
    : dims_(dims), spacing_(spacing), origin_(origin), data_(std::move(data)) {
  for (int k = 0; k < 3; ++k) {
    if (dims_[k] < 2) throw Error(ErrorCode::InvalidInput, "volume dims must be >= 2 per axis");
    if (!(spacing_[k] > 0.0) || !std::isfinite(spacing_[k])) {
      throw Error(ErrorCode::InvalidInput, "volume spacing must be positive");
    }
  }
  if (!origin_.allFinite()) throw Error(ErrorCode::InvalidInput, "volume origin must be finite");
  const std::size_t expected = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  if (data_.size() != expected) throw Error(ErrorCode::InvalidInput, "volume data length != product(dims)");
}

Volume::Volume(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, std::int16_t fill)
    : Volume(dims, spacing, origin,
             std::vector<std::int16_t>(static_cast<std::size_t>(std::max(dims[0], 0)) * std::max(dims[1], 0) *
                                           std::max(dims[2], 0),
                                       fill)) {}

Aabb Volume::bounds() const {
  Aabb box;
  box.extend(origin_);
  box.extend(voxel_position(dims_[0] - 1, dims_[1] - 1, dims_[2] - 1));
  return box;
}

bool Volume::contains(const Vec3& p) const {
  Cell c;
  return locate(*this, p, c);
}

void WindowLevel::validate() const {
  if (!(width > 0.0) || !std::isfinite(center)) throw Error(ErrorCode::InvalidInput, "window width must be positive");
}

double WindowLevel::map(double hu) const {
  return std::clamp((hu - (center - 0.5 * width)) / width, 0.0, 1.0);
}

double sample_trilinear(const Volume& v, const Vec3& p) {
  Cell c;
  if (!locate(v, p, c)) throw Error(ErrorCode::OutOfBounds, "sample point outside volume");
  return interpolate(v, c);
}

SliceImage extract_slice(const Volume& v, const SlicePlane& plane, const WindowLevel* window) {
  plane.validate();
  if (window) window->validate();
  SliceImage img;
  img.width = plane.width();
  img.height = plane.height();
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int j = 0; j < img.height; ++j) {
    for (int i = 0; i < img.width; ++i) {
      Cell c;
      double value = locate(v, plane.pixel_position(i, j), c) ? interpolate(v, c) : kSliceSentinel;
      if (window) value = window->map(value);
      img.pixels[static_cast<std::size_t>(j) * img.width + i] = value;
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Maximum along a segment

namespace {

using Cubic = std::array<double, 4>;  // c0 + c1 s + c2 s^2 + c3 s^3

double eval_cubic(const Cubic& c, double s) { return ((c[3] * s + c[2]) * s + c[1]) * s + c[0]; }

// Cubic restriction of the trilinear interpolant of one cell to the line
// g(s) = g0 + s * dg (grid coordinates).
Cubic cell_cubic(const Volume& v, const int cell[3], const Vec3& g0, const Vec3& dg) {
  // Local coordinate u_k(s) = (g0_k - cell_k) + dg_k s; weights are u or (1 - u).
  double w[3][2][2];  // [axis][corner bit][coefficient]
  for (int k = 0; k < 3; ++k) {
    const double a = g0[k] - cell[k];
    const double b = dg[k];
    w[k][1][0] = a;
    w[k][1][1] = b;
    w[k][0][0] = 1.0 - a;
    w[k][0][1] = -b;
  }
  Cubic out{0.0, 0.0, 0.0, 0.0};
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      // (y0 + y1 s)(z0 + z1 s)
      const double q0 = w[1][dy][0] * w[2][dz][0];
      const double q1 = w[1][dy][0] * w[2][dz][1] + w[1][dy][1] * w[2][dz][0];
      const double q2 = w[1][dy][1] * w[2][dz][1];
      for (int dx = 0; dx < 2; ++dx) {
        const double value = v.at(cell[0] + dx, cell[1] + dy, cell[2] + dz);
        if (value == 0.0) continue;
        const double x0 = w[0][dx][0], x1 = w[0][dx][1];
        out[0] += value * x0 * q0;
        out[1] += value * (x0 * q1 + x1 * q0);
        out[2] += value * (x0 * q2 + x1 * q1);
        out[3] += value * x1 * q2;
      }
    }
  }
  return out;
}

}  // namespace

double max_hu_along_segment(const Volume& v, const Vec3& a, const Vec3& b) {
  const double fa = sample_trilinear(v, a);
  const double fb = sample_trilinear(v, b);
  if (a == b) return fa;

  const Vec3 g0 = v.to_grid(a);
  const Vec3 dg = v.to_grid(b) - g0;

  std::vector<double> breaks{0.0, 1.0};
  for (int k = 0; k < 3; ++k) {
    if (dg[k] == 0.0) continue;
    const double lo = std::min(g0[k], g0[k] + dg[k]);
    const double hi = std::max(g0[k], g0[k] + dg[k]);
    for (double plane = std::ceil(lo); plane <= hi; plane += 1.0) {
      const double s = (plane - g0[k]) / dg[k];
      if (s > 0.0 && s < 1.0) breaks.push_back(s);
    }
  }
  std::sort(breaks.begin(), breaks.end());

  double best = std::max(fa, fb);
  for (std::size_t n = 0; n + 1 < breaks.size(); ++n) {
    const double s0 = breaks[n], s1 = breaks[n + 1];
    if (!(s1 > s0)) continue;
    const double sm = 0.5 * (s0 + s1);
    int cell[3];
    for (int k = 0; k < 3; ++k) {
      const int upper = v.dims()[k] - 2;
      cell[k] = std::clamp(static_cast<int>(std::floor(g0[k] + sm * dg[k])), 0, upper);
    }
    const Cubic c = cell_cubic(v, cell, g0, dg);
    best = std::max({best, eval_cubic(c, s0), eval_cubic(c, s1)});
    // Interior critical points: 3 c3 s^2 + 2 c2 s + c1 = 0.
    const double qa = 3.0 * c[3], qb = 2.0 * c[2], qc = c[1];
    auto consider = [&](double s) {
      if (s > s0 && s < s1) best = std::max(best, eval_cubic(c, s));
    };
    if (std::abs(qa) < 1e-12 * (std::abs(qb) + std::abs(qc) + 1e-300)) {
      if (qb != 0.0) consider(-qc / qb);
    } else {
      const double disc = qb * qb - 4.0 * qa * qc;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        const double q = -0.5 * (qb + (qb >= 0.0 ? sq : -sq));
        consider(q / qa);
        if (q != 0.0) consider(qc / q);
      }
    }
  }
  return best;
}

}  // namespace needleplan
