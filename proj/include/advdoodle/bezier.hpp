#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "advdoodle/error.hpp"

namespace advdoodle {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  constexpr Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  friend constexpr bool operator==(Vec2, Vec2) = default;
};

static_assert(sizeof(Vec2) == 2 * sizeof(double));

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

inline bool is_finite(Vec2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

struct Canvas {
  int height = 0;
  int width = 0;
  friend constexpr bool operator==(Canvas, Canvas) = default;
};

/// L curves of N control points each, stored curve-major.
/// Coordinates are pixels with pixel (h, w) centred at (w + 0.5, h + 0.5).
class ControlPointSet {
 public:
  ControlPointSet() = default;
  ControlPointSet(int curves, int points_per_curve)
      : curves_(curves), points_per_curve_(points_per_curve) {
    check(curves >= 1 && points_per_curve >= 2, ErrorKind::invalid_input,
          "control point set needs L >= 1 and N >= 2");
    points_.resize(static_cast<std::size_t>(curves) * points_per_curve);
  }

  int curves() const { return curves_; }
  int points_per_curve() const { return points_per_curve_; }
  std::size_t size() const { return points_.size(); }

  Vec2& at(int l, int n) { return points_[index(l, n)]; }
  const Vec2& at(int l, int n) const { return points_[index(l, n)]; }

  std::span<Vec2> curve(int l) {
    return {points_.data() + index(l, 0), static_cast<std::size_t>(points_per_curve_)};
  }
  std::span<const Vec2> curve(int l) const {
    return {points_.data() + index(l, 0), static_cast<std::size_t>(points_per_curve_)};
  }

  std::span<Vec2> points() { return points_; }
  std::span<const Vec2> points() const { return points_; }

  /// Flat view (x0, y0, x1, y1, ...) for optimizers.
  std::span<double> coords() {
    return {reinterpret_cast<double*>(points_.data()), points_.size() * 2};
  }
  std::span<const double> coords() const {
    return {reinterpret_cast<const double*>(points_.data()), points_.size() * 2};
  }

  bool same_shape(const ControlPointSet& o) const {
    return curves_ == o.curves_ && points_per_curve_ == o.points_per_curve_;
  }

  /// Checks finiteness and the divergence bound of 4x the canvas extent.
  void validate(Canvas canvas) const {
    const double bx = 4.0 * canvas.width;
    const double by = 4.0 * canvas.height;
    for (const auto& p : points_) {
      check(is_finite(p), ErrorKind::invalid_input, "non-finite control point");
      check(std::abs(p.x) <= bx && std::abs(p.y) <= by, ErrorKind::invalid_input,
            "control point outside 4x canvas bound");
    }
  }

  friend bool operator==(const ControlPointSet&, const ControlPointSet&) = default;

 private:
  std::size_t index(int l, int n) const {
    return static_cast<std::size_t>(l) * points_per_curve_ + n;
  }

  int curves_ = 0;
  int points_per_curve_ = 0;
  std::vector<Vec2> points_;
};

/// Per-control-point partials of a scalar, shaped like a ControlPointSet.
struct RasterGradient {
  int curves = 0;
  int points_per_curve = 0;
  std::vector<Vec2> values;

  RasterGradient() = default;
  explicit RasterGradient(const ControlPointSet& shape)
      : curves(shape.curves()), points_per_curve(shape.points_per_curve()),
        values(shape.size()) {}

  Vec2& at(int l, int n) { return values[static_cast<std::size_t>(l) * points_per_curve + n]; }
  const Vec2& at(int l, int n) const {
    return values[static_cast<std::size_t>(l) * points_per_curve + n];
  }
  std::span<double> coords() { return {reinterpret_cast<double*>(values.data()), values.size() * 2}; }
  std::span<const double> coords() const {
    return {reinterpret_cast<const double*>(values.data()), values.size() * 2};
  }

  RasterGradient& operator+=(const RasterGradient& o) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
  }
};

struct Polyline {
  std::vector<Vec2> vertices;
  /// Curve parameters that produced each vertex; empty for freehand input.
  std::vector<double> source_params;
};

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

namespace detail {

inline void check_curve(std::span<const Vec2> points) {
  check(points.size() >= 2, ErrorKind::invalid_input, "bezier curve needs at least 2 points");
  for (const auto& p : points)
    check(is_finite(p), ErrorKind::invalid_input, "non-finite control point");
}

inline void check_param(double x) {
  check(x >= 0.0 && x <= 1.0, ErrorKind::domain, "bezier parameter outside [0, 1]");
}

}  // namespace detail

/// Bernstein weights C(N-1, n) x^n (1-x)^(N-1-n), n = 0..N-1.
inline std::vector<double> bernstein_weights(int count, double x) {
  detail::check_param(x);
  check(count >= 2, ErrorKind::invalid_input, "bezier curve needs at least 2 points");
  const int degree = count - 1;
  std::vector<double> w(count);
  for (int n = 0; n <= degree; ++n)
    w[n] = binomial(degree, n) * std::pow(x, n) * std::pow(1.0 - x, degree - n);
  return w;
}

/// De Casteljau evaluation of one curve.
inline Vec2 evaluate_bezier(std::span<const Vec2> points, double x) {
  detail::check_curve(points);
  detail::check_param(x);
  std::vector<Vec2> work(points.begin(), points.end());
  for (std::size_t level = work.size() - 1; level > 0; --level)
    for (std::size_t i = 0; i < level; ++i)
      work[i] = (1.0 - x) * work[i] + x * work[i + 1];
  return work[0];
}

/// dB(x)/dP_n = w_n * I2, so the Jacobian is carried as the N scalar weights.
struct BezierJacobian {
  std::vector<double> weights;

  /// The 2x2 block for control point n, row-major.
  std::array<double, 4> block(int n) const { return {weights[n], 0.0, 0.0, weights[n]}; }
};

inline BezierJacobian bezier_jacobian(std::span<const Vec2> points, double x) {
  detail::check_curve(points);
  return {bernstein_weights(static_cast<int>(points.size()), x)};
}

inline constexpr int default_flatten_segments = 32;

inline Polyline flatten(std::span<const Vec2> points, int segments = default_flatten_segments) {
  detail::check_curve(points);
  check(segments >= 1, ErrorKind::invalid_input, "flatten needs at least one segment");
  Polyline out;
  out.vertices.reserve(segments + 1);
  out.source_params.reserve(segments + 1);
  for (int j = 0; j <= segments; ++j) {
    const double x = (j == segments) ? 1.0 : static_cast<double>(j) / segments;
    out.source_params.push_back(x);
    out.vertices.push_back(evaluate_bezier(points, x));
  }
  return out;
}

}  // namespace advdoodle
