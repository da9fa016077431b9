#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "advdoodle/compose.hpp"
#include "advdoodle/error.hpp"
#include "advdoodle/rng.hpp"

namespace advdoodle::synth {

/// Rendered geometric objects on textured backgrounds, one class per shape.
inline const std::array<std::string, 10>& shape_names() {
  static const std::array<std::string, 10> names = {
      "circle", "square", "triangle", "cross", "ring",
      "star",   "diamond", "hexagon", "bar",  "crescent"};
  return names;
}

struct SynthConfig {
  int classes = 5;
  int per_class = 120;
  int image_size = 96;
  std::uint64_t seed = 0;
  int supersample = 3;
};

namespace detail {

inline double polygon_radius(double angle, int sides) {
  const double sector = 2.0 * std::numbers::pi / sides;
  const double a = std::fmod(angle + 8.0 * std::numbers::pi, sector) - sector / 2.0;
  return std::cos(sector / 2.0) / std::cos(a);
}

/// Membership test in shape-local coordinates where the shape spans about [-1, 1].
inline bool inside(int shape, double u, double v) {
  const double r = std::hypot(u, v);
  const double ang = std::atan2(v, u);
  switch (shape) {
    case 0: return r <= 0.95;
    case 1: return std::max(std::abs(u), std::abs(v)) <= 0.78;
    case 2: return r <= polygon_radius(ang + std::numbers::pi / 2.0, 3);
    case 3:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 0.95) ||
             (std::abs(v) <= 0.3 && std::abs(u) <= 0.95);
    case 4: return r <= 0.95 && r >= 0.55;
    case 5: {
      const double sector = 2.0 * std::numbers::pi / 5.0;
      const double a = std::abs(std::fmod(ang + 9.0 * std::numbers::pi / 2.0, sector) - sector / 2.0);
      return r <= 0.95 - 0.53 * (a / (sector / 2.0));
    }
    case 6: return std::abs(u) + std::abs(v) <= 0.98;
    case 7: return r <= 0.92 * polygon_radius(ang, 6);
    case 8: return (u * u) / 0.95 + (v * v) / 0.12 <= 1.0;
    case 9: return r <= 0.95 && std::hypot(u - 0.45, v) >= 0.75;
    default: return false;
  }
}

struct Rgb {
  double r, g, b;
};

inline Rgb hsv(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const double m = v - c;
  return {r + m, g + m, b + m};
}

}  // namespace detail

/// One image of class `shape`, fully determined by `rng`'s state.
inline RgbImage render_shape(int shape, int size, Rng& rng, int supersample = 3) {
  check(size >= 8, ErrorKind::invalid_input, "synthetic image must be at least 8x8");
  RgbImage img(size, size);
  img.label = shape;

  // Background: soft two-colour gradient plus mild per-pixel noise.
  const auto bg0 = detail::hsv(rng.uniform(), rng.uniform(0.05, 0.3), rng.uniform(0.75, 0.95));
  const auto bg1 = detail::hsv(rng.uniform(), rng.uniform(0.05, 0.3), rng.uniform(0.75, 0.95));
  const double gdir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const auto fg = detail::hsv(rng.uniform(), rng.uniform(0.5, 0.9), rng.uniform(0.1, 0.45));

  const double radius = size * rng.uniform(0.26, 0.36);
  const double cx = size * (0.5 + rng.uniform(-0.06, 0.06));
  const double cy = size * (0.5 + rng.uniform(-0.06, 0.06));
  const double rot = rng.uniform(-0.35, 0.35);
  const double cr = std::cos(rot), sr = std::sin(rot);
  const double noise = 0.03;

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double gx = (x + 0.5) / size - 0.5, gy = (y + 0.5) / size - 0.5;
      const double gt = std::clamp(0.5 + gx * std::cos(gdir) + gy * std::sin(gdir), 0.0, 1.0);
      const detail::Rgb bg{bg0.r + gt * (bg1.r - bg0.r), bg0.g + gt * (bg1.g - bg0.g),
                           bg0.b + gt * (bg1.b - bg0.b)};
      int hits = 0;
      for (int sy = 0; sy < supersample; ++sy) {
        for (int sx = 0; sx < supersample; ++sx) {
          const double px = x + (sx + 0.5) / supersample - cx;
          const double py = y + (sy + 0.5) / supersample - cy;
          const double u = (cr * px + sr * py) / radius;
          const double v = (-sr * px + cr * py) / radius;
          hits += detail::inside(shape, u, v) ? 1 : 0;
        }
      }
      const double a = static_cast<double>(hits) / (supersample * supersample);
      const double n = noise * (rng.uniform() - 0.5);
      img.at(0, y, x) = static_cast<float>(std::clamp(bg.r + a * (fg.r - bg.r) + n, 0.0, 1.0));
      img.at(1, y, x) = static_cast<float>(std::clamp(bg.g + a * (fg.g - bg.g) + n, 0.0, 1.0));
      img.at(2, y, x) = static_cast<float>(std::clamp(bg.b + a * (fg.b - bg.b) + n, 0.0, 1.0));
    }
  }
  return img;
}

/// per_class images for each of the first `classes` shapes, class-major order.
/// Image (c, i) uses its own stream so any subset regenerates identically.
inline std::vector<RgbImage> generate(const SynthConfig& cfg) {
  check(cfg.classes >= 2 && cfg.classes <= static_cast<int>(shape_names().size()),
        ErrorKind::invalid_argument, "synthetic dataset supports 2-10 classes");
  check(cfg.per_class >= 1, ErrorKind::invalid_argument, "per_class must be >= 1");
  std::vector<RgbImage> out;
  out.reserve(static_cast<std::size_t>(cfg.classes) * cfg.per_class);
  for (int c = 0; c < cfg.classes; ++c) {
    for (int i = 0; i < cfg.per_class; ++i) {
      Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(c) * 1000003ULL + i));
      out.push_back(render_shape(c, cfg.image_size, rng, cfg.supersample));
    }
  }
  return out;
}

}  // namespace advdoodle::synth
