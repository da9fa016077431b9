#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "advdoodle/bezier.hpp"
#include "advdoodle/error.hpp"
#include "advdoodle/rng.hpp"

namespace advdoodle {

/// Ranges of the random misalignment distribution. All parameters are drawn
/// independently and uniformly.
struct EotConfig {
  double max_rot = 5.0;     // degrees
  double max_trans = 0.02;  // fraction of canvas extent
  double min_scale = 0.97;
  double max_scale = 1.03;
  std::uint64_t rng_seed = 0;

  static EotConfig identity() { return {0.0, 0.0, 1.0, 1.0, 0}; }

  bool is_identity() const {
    return max_rot == 0.0 && max_trans == 0.0 && min_scale == 1.0 && max_scale == 1.0;
  }

  /// Same centre, every range widened by `factor`.
  EotConfig widened(double factor) const {
    EotConfig out = *this;
    out.max_rot = max_rot * factor;
    out.max_trans = std::min(max_trans * factor, 0.49);
    out.min_scale = std::max(1.0 - (1.0 - min_scale) * factor, 1e-3);
    out.max_scale = 1.0 + (max_scale - 1.0) * factor;
    return out;
  }

  void validate() const {
    check(max_rot >= 0.0, ErrorKind::invalid_input, "max_rot must be >= 0");
    check(max_trans >= 0.0 && max_trans < 0.5, ErrorKind::invalid_input,
          "max_trans must be in [0, 0.5)");
    check(min_scale > 0.0 && min_scale <= 1.0 && max_scale >= 1.0, ErrorKind::invalid_input,
          "scale range must satisfy 0 < min_scale <= 1 <= max_scale");
  }

  friend bool operator==(const EotConfig&, const EotConfig&) = default;
};

struct AffineParams {
  double rotation_deg = 0.0;
  double dx = 0.0;  // fraction of W
  double dy = 0.0;  // fraction of H
  double scale = 1.0;
  Vec2 center;

  static AffineParams identity(Vec2 center = {}) { return {0.0, 0.0, 0.0, 1.0, center}; }

  /// Linear part scale * R(rotation), row-major.
  std::array<double, 4> linear() const {
    const double a = rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    return {scale * c, -scale * s, scale * s, scale * c};
  }

  friend bool operator==(const AffineParams&, const AffineParams&) = default;
};

inline Vec2 canvas_center(Canvas canvas) { return {canvas.width / 2.0, canvas.height / 2.0}; }

namespace detail {
inline double draw_symmetric(Rng& rng, double bound) {
  const double u = rng.uniform();
  return bound == 0.0 ? 0.0 : -bound + 2.0 * bound * u;
}
}  // namespace detail

/// One draw t ~ T. Always consumes four values from `rng`.
inline AffineParams sample_affine(const EotConfig& cfg, Canvas canvas, Rng& rng) {
  cfg.validate();
  AffineParams t;
  t.rotation_deg = detail::draw_symmetric(rng, cfg.max_rot);
  t.dx = detail::draw_symmetric(rng, cfg.max_trans);
  t.dy = detail::draw_symmetric(rng, cfg.max_trans);
  const double u = rng.uniform();
  t.scale = cfg.min_scale == cfg.max_scale ? cfg.min_scale
                                           : cfg.min_scale + (cfg.max_scale - cfg.min_scale) * u;
  t.center = canvas_center(canvas);
  return t;
}

inline Vec2 apply_affine(Vec2 p, const AffineParams& t, Canvas canvas) {
  const auto m = t.linear();
  const Vec2 r = p - t.center;
  return {m[0] * r.x + m[1] * r.y + t.center.x + t.dx * canvas.width,
          m[2] * r.x + m[3] * r.y + t.center.y + t.dy * canvas.height};
}

inline ControlPointSet apply_affine(const ControlPointSet& v, const AffineParams& t,
                                    Canvas canvas) {
  ControlPointSet out = v;
  const auto m = t.linear();
  const double ox = t.center.x + t.dx * canvas.width;
  const double oy = t.center.y + t.dy * canvas.height;
  for (auto& p : out.points()) {
    const Vec2 r = p - t.center;
    p = {m[0] * r.x + m[1] * r.y + ox, m[2] * r.x + m[3] * r.y + oy};
  }
  return out;
}

/// Inverse map: rotation by -theta, scale 1/s, and the translation undone.
inline ControlPointSet apply_inverse_affine(const ControlPointSet& v, const AffineParams& t,
                                            Canvas canvas) {
  const double a = -t.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a) / t.scale, s = std::sin(a) / t.scale;
  const double ox = t.center.x + t.dx * canvas.width;
  const double oy = t.center.y + t.dy * canvas.height;
  ControlPointSet out = v;
  for (auto& p : out.points()) {
    const double rx = p.x - ox, ry = p.y - oy;
    p = {c * rx - s * ry + t.center.x, s * rx + c * ry + t.center.y};
  }
  return out;
}

/// Pulls a gradient w.r.t. transformed points back to the original points.
inline RasterGradient pullback_affine(const RasterGradient& g, const AffineParams& t) {
  const auto m = t.linear();
  RasterGradient out = g;
  for (auto& v : out.values) v = {m[0] * v.x + m[2] * v.y, m[1] * v.x + m[3] * v.y};
  return out;
}

}  // namespace advdoodle
