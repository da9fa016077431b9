#pragma once

// Helpers shared by the unit tests.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "advdoodle/attack.hpp"
#include "advdoodle/raster.hpp"
#include "advdoodle/tinynet/model.hpp"

namespace testing_support {

using namespace advdoodle;

template <typename T = float>
BasicImage<T> random_image(Rng& rng, int size, int label = 0) {
  BasicImage<T> x(size, size);
  for (auto& v : x.data) v = static_cast<T>(rng.uniform());
  x.label = label;
  return x;
}

template <typename T = float>
BasicImage<T> flat_image(int size, double value, int label = 0) {
  BasicImage<T> x(size, size);
  for (auto& v : x.data) v = static_cast<T>(value);
  x.label = label;
  return x;
}

/// GAP + linear head: logits depend only on the mean colour.
template <typename T = float>
tinynet::Model<T> mean_colour_model(int size, int classes) {
  using tinynet::LayerSpec;
  return tinynet::Model<T>("mean", size, classes,
                           {LayerSpec::gap(), LayerSpec::linear(3, classes), LayerSpec::softmax()});
}

/// Ignores its input and always prefers `winner`.
template <typename T = float>
tinynet::Model<T> constant_model(int size, int classes, int winner, double margin = 10.0) {
  auto m = mean_colour_model<T>(size, classes);
  auto& head = m.params()[1];
  head.bias.assign(classes, T(0));
  head.bias[winner] = static_cast<T>(margin);
  return m;
}

/// Two classes: 0 while the image is bright, 1 once the mean intensity of a
/// flat `level` image has dropped by more than `drop` (a fraction of level).
/// Doodling darkens, so the attack has to draw at least drop * HW of ink.
template <typename T = float>
tinynet::Model<T> darkness_model(int size, double level, double drop, double gain = 40.0) {
  auto m = mean_colour_model<T>(size, 2);
  auto& head = m.params()[1];
  // Inside the model x is standardized to z = (x - m) / s; the GAP of a flat
  // image with a fraction a of full ink is ((1 - a) level - m) / s.
  const double mean = tinynet::Model<T>::input_mean, scale = tinynet::Model<T>::input_scale;
  const double z_thr = ((1.0 - drop) * level - mean) / scale;
  for (int c = 0; c < 3; ++c) head.weights[c] = static_cast<T>(gain / 3.0);
  head.bias[0] = static_cast<T>(-gain * z_thr);
  return m;
}

/// Pixels whose distance field is not smooth across the given perturbed
/// copies of one control point set: a nearest-segment switch, a crossing of
/// the influence cutoff, or a pixel on the centreline. With `cutoff_only`
/// just pixels whose distance straddles the cutoff, the one place coverage
/// jumps.
inline std::vector<bool> unsmooth_pixels(const std::vector<ControlPointSet>& sets, Canvas c,
                                         const RasterConfig& cfg, double margin = 1e-2,
                                         bool cutoff_only = false) {
  const std::size_t n = static_cast<std::size_t>(c.height) * c.width;
  std::vector<bool> bad(n, false);
  for (int l = 0; l < sets.front().curves(); ++l) {
    std::vector<std::vector<detail::NearestHit>> hits(sets.size());
    for (std::size_t k = 0; k < sets.size(); ++k)
      detail::nearest_map(flatten(sets[k].curve(l), cfg.segments), c, cfg.cutoff() + 1.0, hits[k]);
    for (std::size_t i = 0; i < n; ++i) {
      if (cutoff_only) {
        bool inside = false, outside = false;
        for (const auto& hk : hits) (hk[i].dist < cfg.cutoff() ? inside : outside) = true;
        if (inside && outside) bad[i] = true;
        continue;
      }
      for (std::size_t k = 0; k < sets.size(); ++k) {
        const auto& h = hits[k][i];
        if (h.active() && std::abs(h.dist - cfg.cutoff()) < margin) bad[i] = true;
        if (h.segment != hits[0][i].segment) bad[i] = true;
        if (h.active() && h.dist < margin) bad[i] = true;
      }
    }
  }
  return bad;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  // The pid keeps parallel ctest runs of one suite out of each other's way.
  auto dir = std::filesystem::temp_directory_path() /
             ("advdoodle_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline bool same_record(const AttackRecord& a, const AttackRecord& b) {
  if (a.best_v != b.best_v || a.success != b.success || a.restarts_used != b.restarts_used ||
      a.phase2_entered_at != b.phase2_entered_at || a.first_pass_at != b.first_pass_at ||
      a.iteration_log.size() != b.iteration_log.size() || a.numeric_failures != b.numeric_failures)
    return false;
  if (!(a.s_min == b.s_min || (std::isinf(a.s_min) && std::isinf(b.s_min)))) return false;
  for (std::size_t i = 0; i < a.iteration_log.size(); ++i) {
    const auto &x = a.iteration_log[i], &y = b.iteration_log[i];
    if (x.trial != y.trial || x.iteration != y.iteration || x.loss != y.loss || x.f_s != y.f_s ||
        x.soft_size != y.soft_size || x.size_term != y.size_term ||
        x.validation_passed != y.validation_passed || x.s_min != y.s_min)
      return false;
  }
  return true;
}

}  // namespace testing_support
