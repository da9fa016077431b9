#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advdoodle/affine.hpp"
#include "advdoodle/attack.hpp"
#include "advdoodle/compose.hpp"
#include "advdoodle/error.hpp"
#include "advdoodle/raster.hpp"
#include "advdoodle/rng.hpp"
#include "advdoodle/tinynet/model.hpp"

namespace advdoodle {

struct SaliencyMap {
  int height = 0;  // activation grid
  int width = 0;
  std::vector<double> values;
  std::size_t target_layer = 0;  // index into the model's layer list
  int up_height = 0;             // input grid
  int up_width = 0;
  std::vector<double> upsampled;

  double at(int h, int w) const { return values[static_cast<std::size_t>(h) * width + w]; }
  bool all_zero() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
  }
};

/// A conv activation: the conv layer itself, or the ReLU right after it.
inline bool is_conv_activation(const std::vector<tinynet::LayerSpec>& layers, std::size_t id) {
  if (id >= layers.size()) return false;
  if (layers[id].kind == tinynet::LayerKind::conv) return true;
  return layers[id].kind == tinynet::LayerKind::relu && id > 0 &&
         layers[id - 1].kind == tinynet::LayerKind::conv;
}

/// Rectified output of the last conv block.
inline std::size_t default_gradcam_layer(const std::vector<tinynet::LayerSpec>& layers) {
  std::optional<std::size_t> last;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == tinynet::LayerKind::conv) last = i;
  check(last.has_value(), ErrorKind::invalid_argument, "model has no conv layer");
  const std::size_t next = *last + 1;
  return next < layers.size() && layers[next].kind == tinynet::LayerKind::relu ? next : *last;
}

namespace detail {

/// Single-channel bilinear resampling with half-pixel centres and edge clamping.
inline std::vector<double> upsample(const std::vector<double>& src, int h, int w, int out_h, int out_w) {
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      auto px = [&](int yy, int xx) { return src[static_cast<std::size_t>(yy) * w + xx]; };
      const double top = px(y0, x0) + tx * (px(y0, x1) - px(y0, x0));
      const double bot = px(y1, x0) + tx * (px(y1, x1) - px(y1, x0));
      out[static_cast<std::size_t>(y) * out_w + x] = top + ty * (bot - top);
    }
  }
  return out;
}

}  // namespace detail

/// Gradient-weighted class activation map of class k's pre-softmax score.
template <typename T>
SaliencyMap gradcam(const tinynet::Model<T>& model, const BasicImage<T>& x, int k,
                    std::optional<std::size_t> layer = std::nullopt) {
  check(k >= 0 && k < model.class_count(), ErrorKind::invalid_argument, "class out of range");
  const std::size_t id = layer.value_or(default_gradcam_layer(model.layers()));
  check(is_conv_activation(model.layers(), id), ErrorKind::invalid_argument,
        "layer " + std::to_string(id) + " is not a conv activation");
  tinynet::Trace<T> trace;
  model.logits(x, trace);
  std::vector<T> onehot(static_cast<std::size_t>(model.class_count()), T(0));
  onehot[static_cast<std::size_t>(k)] = T(1);
  tinynet::Tensor<T> grad_act;
  model.backward(trace, onehot, &grad_act, nullptr, id + 1);

  const auto& act = trace.acts[id + 1];
  const int channels = act.dim(0), h = act.dim(1), w = act.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  SaliencyMap map;
  map.height = h;
  map.width = w;
  map.target_layer = id;
  map.values.assign(plane, 0.0);
  for (int c = 0; c < channels; ++c) {
    double weight = 0.0;
    for (std::size_t i = 0; i < plane; ++i) weight += static_cast<double>(grad_act.data[c * plane + i]);
    weight /= static_cast<double>(plane);
    if (weight == 0.0) continue;
    for (std::size_t i = 0; i < plane; ++i)
      map.values[i] += weight * static_cast<double>(act.data[c * plane + i]);
  }
  double peak = 0.0;
  for (auto& v : map.values) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  if (peak > 0.0)
    for (auto& v : map.values) v /= peak;
  map.up_height = x.height;
  map.up_width = x.width;
  map.upsampled = detail::upsample(map.values, h, w, x.height, x.width);
  return map;
}

/// 1 - cosine similarity of two non-negative maps: 0 for proportional maps,
/// 1 for disjoint support. Empty when both maps are all zero.
inline std::optional<double> saliency_shift(std::span<const double> a, std::span<const double> b) {
  check(a.size() == b.size(), ErrorKind::invalid_argument, "saliency maps differ in shape");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 && bb == 0.0) return std::nullopt;
  if (aa == 0.0 || bb == 0.0) return 1.0;
  return std::clamp(1.0 - ab / std::sqrt(aa * bb), 0.0, 1.0);
}

inline std::optional<double> saliency_shift(const SaliencyMap& a, const SaliencyMap& b) {
  check(a.height == b.height && a.width == b.width, ErrorKind::invalid_argument,
        "saliency maps differ in shape");
  return saliency_shift(a.values, b.values);
}

/// One source-side attack to be replayed on another classifier.
struct TransferCase {
  const RgbImage* image = nullptr;
  int label = 0;  // 0-based ground truth
  bool success = false;
  std::optional<ControlPointSet> best_v;
};

struct TransferReport {
  std::string source;
  std::string target;
  int curves = 0;
  bool eot_enabled = true;
  int n_total = 0;
  int n_success = 0;
  std::optional<double> score;  // empty when n_total == 0

  friend bool operator==(const TransferReport&, const TransferReport&) = default;
};

/// Keeps attacks that fooled the source, drops images the target misclassifies
/// without any doodle, then counts target misclassifications with the doodle
/// applied untransformed.
template <typename T>
TransferReport transfer_eval(std::span<const TransferCase> cases, const tinynet::Model<T>& source,
                             const tinynet::Model<T>& target, const RasterConfig& raster,
                             int curves, bool eot_enabled) {
  check(source.class_count() == target.class_count(), ErrorKind::invalid_argument,
        "source and target classify different label sets");
  TransferReport rep{source.arch_id(), target.arch_id(), curves, eot_enabled, 0, 0, std::nullopt};
  tinynet::Trace<T> trace;
  for (const auto& c : cases) {
    if (!c.success || !c.best_v) continue;
    const auto& x = *c.image;
    if (tinynet::predict(target, x, trace) != c.label) continue;
    ++rep.n_total;
    const auto xd = doodle(x, *c.best_v, AffineParams::identity(canvas_center(x.canvas())), raster);
    if (tinynet::predict(target, xd, trace) != c.label) ++rep.n_success;
  }
  if (rep.n_total > 0) rep.score = static_cast<double>(rep.n_success) / rep.n_total;
  return rep;
}

/// Stand-in for a human tracing the doodle: the whole drawing lands under a
/// draw from a wider misalignment distribution, and every control point
/// picks up its own Gaussian jitter.
struct ReplicationConfig {
  EotConfig perturb = EotConfig{}.widened(2.0);
  double jitter_px = 0.5;
  int replicas = 5;

  void validate() const {
    perturb.validate();
    check(jitter_px >= 0.0 && replicas >= 1, ErrorKind::invalid_argument,
          "replication needs jitter >= 0 and at least one replica");
  }
};

inline ControlPointSet simulate_trace(const ControlPointSet& v, Canvas canvas,
                                      const ReplicationConfig& rc, Rng& rng) {
  ControlPointSet out = apply_affine(v, sample_affine(rc.perturb, canvas, rng), canvas);
  for (auto& p : out.points()) p += Vec2{rc.jitter_px * rng.normal(), rc.jitter_px * rng.normal()};
  return out;
}

/// Stream shared by every arm for a given image, so arms see the same tracing errors.
inline std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t image_id) {
  return derive_seed(seed, 0x4e91ca00ULL + image_id);
}

/// Number of simulated replicas (out of rc.replicas) that still fool the model.
template <typename T>
int replicated_fools(const tinynet::Model<T>& model, const BasicImage<T>& x, int target,
                     const ControlPointSet& v, const RasterConfig& raster,
                     const ReplicationConfig& rc, Rng& rng) {
  tinynet::Trace<T> trace;
  const auto id = AffineParams::identity(canvas_center(x.canvas()));
  int fooled = 0;
  for (int r = 0; r < rc.replicas; ++r) {
    const auto traced = simulate_trace(v, x.canvas(), rc, rng);
    if (tinynet::predict(model, doodle(x, traced, id, raster), trace) != target) ++fooled;
  }
  return fooled;
}

struct AblationArm {
  bool eot_enabled = true;
  AttackConfig config;
  int computer_success = 0;
  int replicated_success = 0;  // fooled replicas summed over images
  int replicas_total = 0;
  std::vector<int> per_image_replicated;
  std::vector<AttackRecord> records;
};

struct AblationReport {
  AblationArm eot_on;
  AblationArm eot_off;
};

/// Scores one arm's finished attacks under simulated replication.
template <typename T>
void score_arm(AblationArm& arm, const tinynet::Model<T>& model,
               std::span<const BasicImage<T>> images, std::span<const std::uint64_t> image_ids,
               const ReplicationConfig& rc, std::uint64_t seed) {
  rc.validate();
  check(arm.records.size() == images.size() && image_ids.size() == images.size(),
        ErrorKind::invalid_input, "ablation arm sizes disagree");
  arm.computer_success = arm.replicated_success = 0;
  arm.replicas_total = static_cast<int>(images.size()) * rc.replicas;
  arm.per_image_replicated.assign(images.size(), 0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& rec = arm.records[i];
    if (!rec.success || !rec.best_v) continue;
    ++arm.computer_success;
    Rng rng(replication_seed(seed, image_ids[i]));
    const int k = replicated_fools(model, images[i], *images[i].label, *rec.best_v,
                                   arm.config.raster, rc, rng);
    arm.per_image_replicated[i] = k;
    arm.replicated_success += k;
  }
}

/// Paired run of the same images and seeds with and without the random affine
/// distribution during optimization.
template <typename T>
AblationReport ablation_run(const tinynet::Model<T>& model, std::span<const BasicImage<T>> images,
                            std::span<const std::uint64_t> image_ids, const AttackConfig& on_cfg,
                            const AttackConfig& off_cfg, const ReplicationConfig& rc,
                            std::uint64_t replication_seed_base, unsigned threads = 1) {
  AblationReport rep;
  rep.eot_on.eot_enabled = !on_cfg.eot.is_identity();
  rep.eot_on.config = on_cfg;
  rep.eot_off.eot_enabled = !off_cfg.eot.is_identity();
  rep.eot_off.config = off_cfg;
  for (AblationArm* arm : {&rep.eot_on, &rep.eot_off}) {
    arm->records = run_attack_batch(model, images, image_ids, arm->config, threads);
    score_arm(*arm, model, images, image_ids, rc, replication_seed_base);
  }
  return rep;
}

/// The EOT-off arm: identical in everything but the transform distribution.
inline AttackConfig without_eot(AttackConfig cfg) {
  cfg.eot = EotConfig::identity();
  return cfg;
}

}  // namespace advdoodle
