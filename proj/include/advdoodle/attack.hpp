#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "advdoodle/affine.hpp"
#include "advdoodle/bezier.hpp"
#include "advdoodle/compose.hpp"
#include "advdoodle/error.hpp"
#include "advdoodle/raster.hpp"
#include "advdoodle/rng.hpp"
#include "advdoodle/tinynet/adam.hpp"
#include "advdoodle/tinynet/model.hpp"

namespace advdoodle {

struct AttackConfig {
  int curves = 1;            // L
  int points_per_curve = 4;  // N
  RasterConfig raster{};
  int transform_batch = 10;  // B
  int iterations = 10000;    // N_itr
  double alpha = 1.0;
  double lr = 1.0;
  EotConfig eot{};
  int max_restarts = 3;
  std::uint64_t seed = 0;
  double hard_threshold = 0.5;

  void validate() const {
    check(curves >= 1 && points_per_curve >= 2, ErrorKind::invalid_input, "need L >= 1, N >= 2");
    check(transform_batch >= 1, ErrorKind::invalid_input, "B must be >= 1");
    check(iterations >= 1, ErrorKind::invalid_input, "N_itr must be >= 1");
    check(alpha >= 0.0, ErrorKind::invalid_input, "alpha must be >= 0");
    check(lr > 0.0, ErrorKind::invalid_input, "lr must be positive");
    check(max_restarts >= 1, ErrorKind::invalid_input, "max_restarts must be >= 1");
    check(hard_threshold > 0.0 && hard_threshold < 1.0, ErrorKind::invalid_input,
          "hard threshold must be in (0, 1)");
    raster.validate();
    eot.validate();
  }

  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

struct IterationLogEntry {
  int trial = 0;      // zero-based initialization index
  int iteration = 0;  // one-based within the trial
  double loss = 0.0;  // total loss including the size term when active
  double f_s = 0.0;   // mean ground-truth confidence over the B draws
  double soft_size = 0.0;
  bool size_term = false;
  bool validation_passed = false;
  /// Running best size after this iteration; +inf until a validation pass.
  double s_min = std::numeric_limits<double>::infinity();
};

struct AttackRecord {
  std::optional<ControlPointSet> best_v;
  double s_min = std::numeric_limits<double>::infinity();
  bool success = false;
  /// Number of initializations that were run (1..max_restarts).
  int restarts_used = 0;
  std::vector<IterationLogEntry> iteration_log;
  /// First iteration (of the successful trial) whose loss carried the size term.
  std::optional<int> phase2_entered_at;
  std::optional<int> first_pass_at;
  std::vector<std::string> numeric_failures;
};

struct LossResult {
  double loss = 0.0;
  double mean_f_s = 0.0;
  RasterGradient grad;
};

/// Reusable buffers for one attack run.
template <typename T>
struct AttackWorkspace {
  tinynet::Trace<T> trace;
};

/// (1/B) sum_b log f_s(psi(X, V; t_b)) with fresh draws t_b, plus its gradient in V.
template <typename T>
LossResult attack_loss(const tinynet::Model<T>& model, const BasicImage<T>& x, int target,
                       const ControlPointSet& v, const EotConfig& eot, int batch,
                       const RasterConfig& raster, Rng& rng, AttackWorkspace<T>& ws) {
  check(batch >= 1, ErrorKind::invalid_input, "B must be >= 1");
  const Canvas canvas = x.canvas();
  LossResult out;
  out.grad = RasterGradient(v);
  // Under the identity distribution every draw is the same map, so the first
  // draw's terms are reused; the accumulation order is unchanged.
  const bool reuse = eot.is_identity();
  double log_f_s = 0.0, f_s = 0.0;
  RasterGradient g_draw(v);
  for (int b = 0; b < batch; ++b) {
    const AffineParams t = sample_affine(eot, canvas, rng);
    if (b == 0 || !reuse) {
      const ControlPointSet vt = apply_affine(v, t, canvas);
      const CoverageMap cov = rasterize(vt, canvas, raster);
      const BasicImage<T> xd = composite(x, cov);
      const auto ig = tinynet::backward_to_input(model, xd, target, ws.trace);
      log_f_s = static_cast<double>(ig.log_f_s);
      f_s = static_cast<double>(ig.f_s);
      const auto g_cov = backprop_doodle<T>(ig.grad, x);
      g_draw = pullback_affine(backprop_raster(vt, canvas, raster, g_cov), t);
    }
    out.loss += log_f_s;
    out.mean_f_s += f_s;
    out.grad += g_draw;
  }
  const double inv = 1.0 / batch;
  out.loss *= inv;
  out.mean_f_s *= inv;
  for (auto& g : out.grad.values) g = inv * g;
  check(std::isfinite(out.loss), ErrorKind::numeric, "non-finite attack loss");
  for (const auto& g : out.grad.values)
    check(is_finite(g), ErrorKind::numeric, "non-finite attack gradient");
  return out;
}

template <typename T>
LossResult attack_loss(const tinynet::Model<T>& model, const BasicImage<T>& x, int target,
                       const ControlPointSet& v, const EotConfig& eot, int batch,
                       const RasterConfig& raster, Rng& rng) {
  AttackWorkspace<T> ws;
  return attack_loss(model, x, target, v, eot, batch, raster, rng, ws);
}

/// base + alpha * soft size once the size term is active.
inline double regularized_loss(double base, double soft_size, double alpha, bool size_term) {
  return size_term ? base + alpha * soft_size : base;
}

inline double regularized_loss(double base, const ControlPointSet& v, Canvas canvas,
                               const RasterConfig& raster, double alpha, bool size_term) {
  if (!size_term) return base;
  return regularized_loss(base, doodle_size(rasterize(v, canvas, raster), SizeMode::soft), alpha,
                          true);
}

/// True iff none of the B fresh draws is classified as `target`.
/// Stops drawing at the first failure.
template <typename T>
bool validate_attack(const tinynet::Model<T>& model, const BasicImage<T>& x, int target,
                     const ControlPointSet& v, const EotConfig& eot, int batch,
                     const RasterConfig& raster, Rng& rng, tinynet::Trace<T>& trace) {
  const Canvas canvas = x.canvas();
  const bool reuse = eot.is_identity();
  for (int b = 0; b < batch; ++b) {
    const AffineParams t = sample_affine(eot, canvas, rng);
    if (b > 0 && reuse) continue;
    const auto xd = doodle(x, v, t, raster);
    if (tinynet::predict(model, xd, trace) == target) return false;
  }
  return true;
}

template <typename T>
bool validate_attack(const tinynet::Model<T>& model, const BasicImage<T>& x, int target,
                     const ControlPointSet& v, const EotConfig& eot, int batch,
                     const RasterConfig& raster, Rng& rng) {
  tinynet::Trace<T> trace;
  return validate_attack(model, x, target, v, eot, batch, raster, rng, trace);
}

/// Fraction of `draws` fresh transforms under which the doodle still fools the model.
template <typename T>
double robustness_rate(const tinynet::Model<T>& model, const BasicImage<T>& x, int target,
                       const ControlPointSet& v, const EotConfig& eot, int draws,
                       const RasterConfig& raster, Rng& rng) {
  tinynet::Trace<T> trace;
  int fooled = 0;
  for (int i = 0; i < draws; ++i) {
    const auto t = sample_affine(eot, x.canvas(), rng);
    if (tinynet::predict(model, doodle(x, v, t, raster), trace) != target) ++fooled;
  }
  return draws > 0 ? static_cast<double>(fooled) / draws : 0.0;
}

/// Random start: each curve's points fill a box of 40% of the canvas extent
/// placed uniformly inside the central 60% box.
inline ControlPointSet init_control_points(int curves, int points_per_curve, Canvas canvas,
                                           Rng& rng) {
  ControlPointSet v(curves, points_per_curve);
  const double span_x = 0.4 * canvas.width, span_y = 0.4 * canvas.height;
  const double lo_x = 0.2 * canvas.width, lo_y = 0.2 * canvas.height;
  const double slack_x = 0.6 * canvas.width - span_x, slack_y = 0.6 * canvas.height - span_y;
  for (int l = 0; l < curves; ++l) {
    const double bx = lo_x + slack_x * rng.uniform();
    const double by = lo_y + slack_y * rng.uniform();
    for (auto& p : v.curve(l)) p = {bx + span_x * rng.uniform(), by + span_y * rng.uniform()};
  }
  return v;
}

inline ControlPointSet init_control_points(const AttackConfig& cfg, Canvas canvas, Rng& rng) {
  return init_control_points(cfg.curves, cfg.points_per_curve, canvas, rng);
}

namespace detail {

inline Rng trial_rng(std::uint64_t seed, int trial, std::uint64_t purpose) {
  return Rng(derive_seed(seed, purpose * 1000003ULL + static_cast<std::uint64_t>(trial)));
}

inline constexpr std::uint64_t stream_init = 1;
inline constexpr std::uint64_t stream_train = 2;
inline constexpr std::uint64_t stream_validate = 3;

inline void clamp_to_bound(ControlPointSet& v, Canvas canvas) {
  const double bx = 4.0 * canvas.width, by = 4.0 * canvas.height;
  for (auto& p : v.points()) p = {std::clamp(p.x, -bx, bx), std::clamp(p.y, -by, by)};
}

}  // namespace detail

/// Two-phase optimization of one doodle with restarts. Each iteration
/// computes the loss (with the size term only once a doodle has validated),
/// takes an Adam step, then validates the updated doodle.
template <typename T>
AttackRecord run_attack(const tinynet::Model<T>& model, const BasicImage<T>& x, int target,
                        const AttackConfig& cfg, AttackWorkspace<T>& ws) {
  cfg.validate();
  model.check_input(x);
  const Canvas canvas = x.canvas();
  AttackRecord rec;
  const double area = static_cast<double>(canvas.height) * canvas.width;
  std::vector<double> size_upstream(static_cast<std::size_t>(canvas.height) * canvas.width,
                                    cfg.alpha / area);

  for (int trial = 0; trial < cfg.max_restarts && !rec.success; ++trial) {
    rec.restarts_used = trial + 1;
    Rng init_rng = detail::trial_rng(cfg.seed, trial, detail::stream_init);
    Rng train_rng = detail::trial_rng(cfg.seed, trial, detail::stream_train);
    Rng valid_rng = detail::trial_rng(cfg.seed, trial, detail::stream_validate);
    ControlPointSet v = init_control_points(cfg, canvas, init_rng);
    tinynet::AdamState<double> adam;
    const tinynet::AdamConfig adam_cfg{cfg.lr, 0.9, 0.999, 1e-8};
    try {
      for (int it = 1; it <= cfg.iterations; ++it) {
        const bool size_term = rec.s_min != std::numeric_limits<double>::infinity();
        if (size_term && !rec.phase2_entered_at) rec.phase2_entered_at = it;
        LossResult lr = attack_loss(model, x, target, v, cfg.eot, cfg.transform_batch, cfg.raster,
                                    train_rng, ws);
        IterationLogEntry entry;
        entry.trial = trial;
        entry.iteration = it;
        entry.f_s = lr.mean_f_s;
        entry.size_term = size_term;
        const CoverageMap plain = rasterize(v, canvas, cfg.raster);
        entry.soft_size = doodle_size(plain, SizeMode::soft);
        entry.loss = regularized_loss(lr.loss, entry.soft_size, cfg.alpha, size_term);
        if (size_term && cfg.alpha > 0.0) lr.grad += backprop_raster(v, canvas, cfg.raster, size_upstream);

        tinynet::adam_step<double>(v.coords(), lr.grad.coords(), adam, adam_cfg);
        detail::clamp_to_bound(v, canvas);

        entry.validation_passed = validate_attack(model, x, target, v, cfg.eot,
                                                  cfg.transform_batch, cfg.raster, valid_rng,
                                                  ws.trace);
        if (entry.validation_passed) {
          if (!rec.first_pass_at) rec.first_pass_at = it;
          const double size = doodle_size(rasterize(v, canvas, cfg.raster), SizeMode::hard,
                                          cfg.hard_threshold);
          if (size <= rec.s_min) {
            rec.best_v = v;
            rec.s_min = size;
            rec.success = true;
          }
        }
        entry.s_min = rec.s_min;
        rec.iteration_log.push_back(entry);
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      rec.numeric_failures.push_back("trial " + std::to_string(trial) + ": " + e.what());
      if (rec.success) break;
    }
  }
  return rec;
}

template <typename T>
AttackRecord run_attack(const tinynet::Model<T>& model, const BasicImage<T>& x, int target,
                        const AttackConfig& cfg) {
  AttackWorkspace<T> ws;
  return run_attack(model, x, target, cfg, ws);
}

/// Per-image seed for batch runs.
inline std::uint64_t image_seed(std::uint64_t seed, std::uint64_t image_id) {
  return derive_seed(seed, 0xa77acc00ULL + image_id);
}

/// Runs independent attacks over many images. Records come back in input
/// order; every image gets its own stream derived from (cfg.seed, image id).
template <typename T>
std::vector<AttackRecord> run_attack_batch(const tinynet::Model<T>& model,
                                           std::span<const BasicImage<T>> images,
                                           std::span<const std::uint64_t> image_ids,
                                           const AttackConfig& cfg, unsigned threads = 0) {
  check(images.size() == image_ids.size(), ErrorKind::invalid_input, "image/id count mismatch");
  for (const auto& img : images)
    check(img.label.has_value(), ErrorKind::invalid_input, "attack image needs a label");
  std::vector<AttackRecord> out(images.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(images.size(), 1)));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    AttackWorkspace<T> ws;
    for (std::size_t i = next++; i < images.size(); i = next++) {
      AttackConfig c = cfg;
      c.seed = image_seed(cfg.seed, image_ids[i]);
      out[i] = run_attack(model, images[i], *images[i].label, c, ws);
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return out;
}

}  // namespace advdoodle
