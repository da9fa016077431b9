#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "advdoodle/bezier.hpp"
#include "advdoodle/error.hpp"

namespace advdoodle {

struct RasterConfig {
  double width_px = 1.5;
  double softness_px = 0.25;
  int segments = default_flatten_segments;

  /// Distance from a centerline beyond which coverage is clamped to zero.
  double cutoff() const { return width_px / 2.0 + 6.0 * softness_px; }

  void validate() const {
    check(width_px > 0.0 && std::isfinite(width_px), ErrorKind::invalid_input,
          "stroke width must be positive");
    check(softness_px > 0.0 && std::isfinite(softness_px), ErrorKind::invalid_input,
          "softness must be positive");
    check(segments >= 1, ErrorKind::invalid_input, "segment count must be >= 1");
  }

  friend bool operator==(const RasterConfig&, const RasterConfig&) = default;
};

/// Soft per-pixel stroke coverage in [0, 1], row-major H x W.
struct CoverageMap {
  Canvas canvas;
  double width_px = 0.0;
  double softness_px = 0.0;
  std::vector<double> values;

  CoverageMap() = default;
  CoverageMap(Canvas c, const RasterConfig& cfg)
      : canvas(c), width_px(cfg.width_px), softness_px(cfg.softness_px),
        values(static_cast<std::size_t>(c.height) * c.width, 0.0) {}

  double& at(int h, int w) { return values[static_cast<std::size_t>(h) * canvas.width + w]; }
  double at(int h, int w) const { return values[static_cast<std::size_t>(h) * canvas.width + w]; }
  std::size_t size() const { return values.size(); }
};

/// Binary H x W map; 1 means the pixel is attacked.
struct HardMask {
  Canvas canvas;
  std::vector<unsigned char> values;

  unsigned char at(int h, int w) const {
    return values[static_cast<std::size_t>(h) * canvas.width + w];
  }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1));
  }
};

inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace detail {

inline void check_canvas(Canvas canvas) {
  check(canvas.height >= 8 && canvas.width >= 8, ErrorKind::invalid_input,
        "canvas must be at least 8x8");
}

/// Nearest point on one polyline for a pixel inside the influence band.
struct NearestHit {
  double dist = std::numeric_limits<double>::infinity();
  int segment = -1;
  double u = 0.0;

  bool active() const { return segment >= 0; }
};

inline void segment_distance(Vec2 p, Vec2 a, Vec2 b, double& dist, double& u) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  u = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
  const Vec2 q = a + u * ab;
  const Vec2 pq = p - q;
  dist = std::sqrt(dot(pq, pq));
}

/// Fills `hits` (H x W) with the nearest segment of `line` for every pixel
/// within `cutoff` of it. Ties go to the lowest segment index.
inline void nearest_map(const Polyline& line, Canvas canvas, double cutoff,
                        std::vector<NearestHit>& hits) {
  hits.assign(static_cast<std::size_t>(canvas.height) * canvas.width, NearestHit{});
  const auto& v = line.vertices;
  const std::size_t segs = v.size() >= 2 ? v.size() - 1 : 0;
  for (std::size_t s = 0; s < std::max<std::size_t>(segs, 1); ++s) {
    const Vec2 a = v[s];
    const Vec2 b = segs == 0 ? v[s] : v[s + 1];
    const double xmin = std::min(a.x, b.x) - cutoff, xmax = std::max(a.x, b.x) + cutoff;
    const double ymin = std::min(a.y, b.y) - cutoff, ymax = std::max(a.y, b.y) + cutoff;
    if (xmax < 0.0 || ymax < 0.0 || xmin > canvas.width || ymin > canvas.height) continue;
    const int w0 = std::max(0, static_cast<int>(std::ceil(xmin - 0.5)));
    const int w1 = std::min(canvas.width - 1, static_cast<int>(std::floor(xmax - 0.5)));
    const int h0 = std::max(0, static_cast<int>(std::ceil(ymin - 0.5)));
    const int h1 = std::min(canvas.height - 1, static_cast<int>(std::floor(ymax - 0.5)));
    for (int h = h0; h <= h1; ++h) {
      for (int w = w0; w <= w1; ++w) {
        double d, u;
        segment_distance({w + 0.5, h + 0.5}, a, b, d, u);
        if (d > cutoff) continue;
        auto& hit = hits[static_cast<std::size_t>(h) * canvas.width + w];
        if (d < hit.dist) hit = {d, static_cast<int>(s), u};
      }
    }
  }
}

inline void check_polylines(std::span<const Polyline> lines) {
  for (const auto& line : lines) {
    check(!line.vertices.empty(), ErrorKind::invalid_input, "empty polyline");
    for (const auto& p : line.vertices)
      check(is_finite(p), ErrorKind::invalid_input, "non-finite polyline vertex");
  }
}

inline std::vector<Polyline> flatten_all(const ControlPointSet& v, int segments) {
  std::vector<Polyline> lines;
  lines.reserve(v.curves());
  for (int l = 0; l < v.curves(); ++l) lines.push_back(flatten(v.curve(l), segments));
  return lines;
}

}  // namespace detail

/// Coverage of arbitrary polylines: 1 - prod_l (1 - sigmoid((w/2 - d_l) / tau)).
inline CoverageMap rasterize_polylines(std::span<const Polyline> lines, Canvas canvas,
                                       const RasterConfig& cfg) {
  detail::check_canvas(canvas);
  cfg.validate();
  detail::check_polylines(lines);
  CoverageMap cov(canvas, cfg);
  if (lines.empty()) return cov;
  std::vector<double> keep(cov.size(), 1.0);
  std::vector<detail::NearestHit> hits;
  const double half = cfg.width_px / 2.0;
  for (const auto& line : lines) {
    detail::nearest_map(line, canvas, cfg.cutoff(), hits);
    for (std::size_t i = 0; i < hits.size(); ++i)
      if (hits[i].active()) keep[i] *= 1.0 - logistic((half - hits[i].dist) / cfg.softness_px);
  }
  for (std::size_t i = 0; i < keep.size(); ++i) cov.values[i] = 1.0 - keep[i];
  return cov;
}

inline CoverageMap rasterize(const ControlPointSet& v, Canvas canvas, const RasterConfig& cfg) {
  cfg.validate();
  for (const auto& p : v.points())
    check(is_finite(p), ErrorKind::invalid_input, "non-finite control point");
  const auto lines = detail::flatten_all(v, cfg.segments);
  return rasterize_polylines(lines, canvas, cfg);
}

/// Gradient of sum(upstream * coverage) with respect to every polyline vertex.
inline std::vector<std::vector<Vec2>> backprop_polylines(std::span<const Polyline> lines,
                                                         Canvas canvas, const RasterConfig& cfg,
                                                         std::span<const double> upstream) {
  detail::check_canvas(canvas);
  cfg.validate();
  check(upstream.size() == static_cast<std::size_t>(canvas.height) * canvas.width,
        ErrorKind::invalid_input, "upstream gradient shape mismatch");
  std::vector<std::vector<Vec2>> grads(lines.size());
  for (std::size_t l = 0; l < lines.size(); ++l) grads[l].assign(lines[l].vertices.size(), {});
  if (lines.empty()) return grads;

  const std::size_t pixels = upstream.size();
  const std::size_t count = lines.size();
  std::vector<std::vector<detail::NearestHit>> hits(count);
  for (std::size_t l = 0; l < count; ++l)
    detail::nearest_map(lines[l], canvas, cfg.cutoff(), hits[l]);

  const double half = cfg.width_px / 2.0;
  const double tau = cfg.softness_px;
  std::vector<double> c(count);
  for (std::size_t i = 0; i < pixels; ++i) {
    const double g = upstream[i];
    if (g == 0.0) continue;
    bool any = false;
    for (std::size_t l = 0; l < count; ++l) {
      c[l] = hits[l][i].active() ? logistic((half - hits[l][i].dist) / tau) : 0.0;
      any = any || hits[l][i].active();
    }
    if (!any) continue;
    const int h = static_cast<int>(i / canvas.width);
    const int w = static_cast<int>(i % canvas.width);
    const Vec2 p{w + 0.5, h + 0.5};
    for (std::size_t l = 0; l < count; ++l) {
      const auto& hit = hits[l][i];
      if (!hit.active() || hit.dist == 0.0) continue;
      double others = 1.0;
      for (std::size_t k = 0; k < count; ++k)
        if (k != l) others *= 1.0 - c[k];
      // d cov / d dist
      const double dcov_dd = -others * c[l] * (1.0 - c[l]) / tau;
      const auto& verts = lines[l].vertices;
      const std::size_t ia = static_cast<std::size_t>(hit.segment);
      const std::size_t ib = std::min(ia + 1, verts.size() - 1);
      const Vec2 q = verts[ia] + hit.u * (verts[ib] - verts[ia]);
      const Vec2 dir = (1.0 / hit.dist) * (q - p);
      const double scale = g * dcov_dd;
      grads[l][ia] += (scale * (1.0 - hit.u)) * dir;
      grads[l][ib] += (scale * hit.u) * dir;
    }
  }
  return grads;
}

/// Chains vertex gradients through the flattening Bernstein weights.
inline RasterGradient backprop_raster(const ControlPointSet& v, Canvas canvas,
                                      const RasterConfig& cfg, std::span<const double> upstream) {
  cfg.validate();
  const auto lines = detail::flatten_all(v, cfg.segments);
  const auto vertex_grads = backprop_polylines(lines, canvas, cfg, upstream);
  RasterGradient out(v);
  const int n_points = v.points_per_curve();
  for (int l = 0; l < v.curves(); ++l) {
    const auto& line = lines[l];
    for (std::size_t j = 0; j < line.vertices.size(); ++j) {
      const Vec2 gj = vertex_grads[l][j];
      if (gj.x == 0.0 && gj.y == 0.0) continue;
      const auto weights = bernstein_weights(n_points, line.source_params[j]);
      for (int n = 0; n < n_points; ++n) out.at(l, n) += weights[n] * gj;
    }
  }
  return out;
}

inline HardMask hard_mask(const CoverageMap& cov, double threshold = 0.5) {
  check(threshold > 0.0 && threshold < 1.0, ErrorKind::invalid_input,
        "hard mask threshold must be in (0, 1)");
  HardMask mask{cov.canvas, std::vector<unsigned char>(cov.size())};
  for (std::size_t i = 0; i < cov.size(); ++i) mask.values[i] = cov.values[i] >= threshold ? 1 : 0;
  return mask;
}

enum class SizeMode { soft, hard };

/// Doodled-area ratio ||phi(V)||_1 / HW.
inline double doodle_size(const CoverageMap& cov, SizeMode mode, double threshold = 0.5) {
  if (cov.values.empty()) return 0.0;
  const double area = static_cast<double>(cov.size());
  if (mode == SizeMode::hard) return static_cast<double>(hard_mask(cov, threshold).count()) / area;
  double sum = 0.0;
  for (double v : cov.values) sum += v;
  return sum / area;
}

}  // namespace advdoodle
