#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "advdoodle/compose.hpp"
#include "advdoodle/error.hpp"
#include "advdoodle/rng.hpp"
#include "advdoodle/tinynet/layers.hpp"
#include "advdoodle/tinynet/tensor.hpp"

namespace advdoodle::tinynet {

/// Per-layer activations of one forward pass, kept for the backward pass.
/// Buffers are reused across calls.
template <typename T>
struct Trace {
  std::vector<Tensor<T>> acts;  // acts[0] is the input, acts[i + 1] the output of layer i
  std::vector<Tensor<T>> grads;
  std::vector<T> scratch;
  std::vector<T> scratch_grad;
  std::vector<T> col;
};

template <typename T>
using Gradients = std::vector<LayerParams<T>>;

/// Small feed-forward CNN over square RGB inputs. The descriptor ends with
/// a linear head followed by softmax.
template <typename T>
class Model {
 public:
  Model() = default;
  Model(std::string arch_id, int input_size, int class_count, std::vector<LayerSpec> layers)
      : arch_id_(std::move(arch_id)), input_size_(input_size), class_count_(class_count),
        layers_(std::move(layers)) {
    check(class_count_ >= 2, ErrorKind::invalid_input, "model needs at least 2 classes");
    check(input_size_ >= 8, ErrorKind::invalid_input, "model input must be at least 8x8");
    check(!layers_.empty() && layers_.back().kind == LayerKind::softmax, ErrorKind::invalid_input,
          "architecture must end with softmax");
    std::vector<int> shape{3, input_size_, input_size_};
    for (const auto& l : layers_) shape = output_shape(l, shape);
    check(shape.size() == 1 && shape[0] == class_count_, ErrorKind::invalid_input,
          "architecture output does not match class count");
    params_.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      params_[i].weights.assign(layers_[i].weight_count(), T(0));
      params_[i].bias.assign(layers_[i].bias_count(), T(0));
    }
  }

  const std::string& arch_id() const { return arch_id_; }
  int input_size() const { return input_size_; }
  int class_count() const { return class_count_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<LayerParams<T>>& params() { return params_; }
  const std::vector<LayerParams<T>>& params() const { return params_; }

  /// He-normal weights, zero biases.
  void init_weights(Rng& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (!l.has_params()) continue;
      const double fan_in = l.kind == LayerKind::conv ? double(l.in) * l.kernel * l.kernel : l.in;
      const double sd = std::sqrt(2.0 / fan_in);
      for (auto& w : params_[i].weights) w = static_cast<T>(sd * rng.normal());
      std::fill(params_[i].bias.begin(), params_[i].bias.end(), T(0));
    }
  }

  template <typename U>
  Model<U> cast() const {
    Model<U> out(arch_id_, input_size_, class_count_, layers_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.params()[i].weights.assign(params_[i].weights.begin(), params_[i].weights.end());
      out.params()[i].bias.assign(params_[i].bias.begin(), params_[i].bias.end());
    }
    return out;
  }

  Gradients<T> zero_gradients() const {
    Gradients<T> g(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      g[i].weights.assign(layers_[i].weight_count(), T(0));
      g[i].bias.assign(layers_[i].bias_count(), T(0));
    }
    return g;
  }

  void check_input(const BasicImage<T>& x) const {
    check(x.height == input_size_ && x.width == input_size_, ErrorKind::invalid_input,
          "image does not match model input size");
  }

  /// Runs layers [0, first_softmax) and returns the pre-softmax scores.
  std::span<const T> logits(const BasicImage<T>& x, Trace<T>& trace) const {
    check_input(x);
    trace.acts.resize(layers_.size() + 1);
    auto& in = trace.acts[0];
    in.shape = {3, x.height, x.width};
    in.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i)
      in.data[i] = (x.data[i] - T(input_mean)) * T(1.0 / input_scale);
    return run_from(0, trace);
  }

  /// Runs from layer `first` given trace.acts[first]; returns the logits.
  std::span<const T> run_from(std::size_t first, Trace<T>& trace) const {
    trace.acts.resize(layers_.size() + 1);
    for (std::size_t i = first; i + 1 < layers_.size(); ++i) forward_layer(i, trace);
    // The final softmax is applied by callers; acts[last] mirrors the logits.
    trace.acts.back() = trace.acts[layers_.size() - 1];
    return trace.acts.back().data;
  }

  std::vector<T> forward(const BasicImage<T>& x, Trace<T>& trace) const {
    return kernels::softmax<T>(logits(x, trace));
  }

  std::vector<T> forward(const BasicImage<T>& x) const {
    Trace<T> trace;
    return forward(x, trace);
  }

  /// Backward pass from d loss / d logits. Either output may be null.
  /// `stop_at` skips layers below it, leaving grad_input unset.
  void backward(Trace<T>& trace, std::span<const T> grad_logits, Tensor<T>* grad_input,
                Gradients<T>* grads, std::size_t stop_at = 0) const {
    const std::size_t last = layers_.size() - 1;  // softmax
    trace.grads.resize(layers_.size() + 1);
    auto& g_top = trace.grads[last];
    g_top.shape = {class_count_};
    g_top.data.assign(grad_logits.begin(), grad_logits.end());
    for (std::size_t i = last; i-- > stop_at;) {
      const bool need_input = i > stop_at || grad_input != nullptr;
      backward_layer(i, trace, need_input, grads ? &(*grads)[i] : nullptr);
    }
    if (grad_input) {
      *grad_input = trace.grads[stop_at];
      if (stop_at == 0)
        for (auto& g : grad_input->data) g *= T(1.0 / input_scale);
    }
  }

  // Fixed input standardization applied inside the network, so images stay in [0, 1].
  static constexpr double input_mean = 0.5;
  static constexpr double input_scale = 0.25;

 private:
  void forward_layer(std::size_t i, Trace<T>& trace) const {
    const auto& spec = layers_[i];
    const auto& in = trace.acts[i];
    auto& out = trace.acts[i + 1];
    switch (spec.kind) {
      case LayerKind::conv: kernels::conv_forward(spec, params_[i], in, out, trace.scratch, trace.col); break;
      case LayerKind::relu: kernels::relu_forward(in, out); break;
      case LayerKind::maxpool: kernels::maxpool_forward(in, out); break;
      case LayerKind::global_avg_pool: kernels::gap_forward(in, out); break;
      case LayerKind::linear: kernels::linear_forward(spec, params_[i], in, out); break;
      case LayerKind::softmax: out = in; break;
    }
  }

  void backward_layer(std::size_t i, Trace<T>& trace, bool need_input,
                      LayerParams<T>* grad_p) const {
    const auto& spec = layers_[i];
    const auto& in = trace.acts[i];
    const auto& g_out = trace.grads[i + 1];
    auto& g_in = trace.grads[i];
    switch (spec.kind) {
      case LayerKind::conv:
        kernels::conv_backward(spec, params_[i], in, g_out, need_input ? &g_in : nullptr, grad_p,
                               trace.scratch, trace.scratch_grad, trace.col);
        break;
      case LayerKind::relu: kernels::relu_backward(in, g_out, g_in); break;
      case LayerKind::maxpool: kernels::maxpool_backward(in, g_out, g_in); break;
      case LayerKind::global_avg_pool: kernels::gap_backward(in, g_out, g_in); break;
      case LayerKind::linear:
        kernels::linear_backward(spec, params_[i], in, g_out, need_input ? &g_in : nullptr, grad_p);
        break;
      case LayerKind::softmax: g_in = g_out; break;
    }
  }

  std::string arch_id_;
  int input_size_ = 0;
  int class_count_ = 0;
  std::vector<LayerSpec> layers_;
  std::vector<LayerParams<T>> params_;
};

/// Argmax with ties resolved to the lowest class index.
template <typename T>
int argmax(std::span<const T> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <typename T>
int predict(const Model<T>& model, const BasicImage<T>& x, Trace<T>& trace) {
  return argmax<T>(model.logits(x, trace));
}

template <typename T>
int predict(const Model<T>& model, const BasicImage<T>& x) {
  Trace<T> trace;
  return predict(model, x, trace);
}

inline constexpr double log_prob_floor = 1e-12;

template <typename T>
struct InputGradient {
  std::vector<T> grad;  // d log f_s / d X, planar like the image
  T f_s = T(0);
  T log_f_s = T(0);
  int predicted = 0;
};

/// Gradient of log f_s (f_s floored at 1e-12) with respect to the input image.
template <typename T>
InputGradient<T> backward_to_input(const Model<T>& model, const BasicImage<T>& x, int target,
                                   Trace<T>& trace) {
  check(target >= 0 && target < model.class_count(), ErrorKind::invalid_argument,
        "target class out of range");
  const auto z = model.logits(x, trace);
  const auto p = kernels::softmax<T>(z);
  InputGradient<T> out;
  out.predicted = argmax<T>(z);
  out.f_s = p[target];
  const T log_raw = kernels::log_softmax_at<T>(z, static_cast<std::size_t>(target));
  const T floor = static_cast<T>(std::log(log_prob_floor));
  out.log_f_s = std::max(log_raw, floor);
  std::vector<T> g(p.size(), T(0));
  if (log_raw > floor)
    for (std::size_t i = 0; i < p.size(); ++i)
      g[i] = (static_cast<int>(i) == target ? T(1) : T(0)) - p[i];
  Tensor<T> grad_input;
  model.backward(trace, g, &grad_input, nullptr);
  out.grad = std::move(grad_input.data);
  return out;
}

template <typename T>
InputGradient<T> backward_to_input(const Model<T>& model, const BasicImage<T>& x, int target) {
  Trace<T> trace;
  return backward_to_input(model, x, target, trace);
}

/// Reference desk-scale architectures.
inline std::vector<LayerSpec> cnn_a_layers(int classes, int input_size) {
  (void)input_size;
  return {LayerSpec::conv(3, 6, 3),   LayerSpec::relu(), LayerSpec::maxpool(),
          LayerSpec::conv(6, 12, 3),  LayerSpec::relu(), LayerSpec::maxpool(),
          LayerSpec::conv(12, 16, 3), LayerSpec::relu(), LayerSpec::gap(),
          LayerSpec::linear(16, classes), LayerSpec::softmax()};
}

inline std::vector<LayerSpec> cnn_b_layers(int classes, int input_size) {
  (void)input_size;
  return {LayerSpec::conv(3, 8, 5, 2), LayerSpec::relu(), LayerSpec::maxpool(),
          LayerSpec::conv(8, 24, 3),   LayerSpec::relu(), LayerSpec::gap(),
          LayerSpec::linear(24, classes), LayerSpec::softmax()};
}

template <typename T>
Model<T> make_model(const std::string& arch_id, int classes, int input_size) {
  if (arch_id == "cnn-a") return Model<T>(arch_id, input_size, classes, cnn_a_layers(classes, input_size));
  if (arch_id == "cnn-b") return Model<T>(arch_id, input_size, classes, cnn_b_layers(classes, input_size));
  throw Error(ErrorKind::invalid_argument, "unknown architecture '" + arch_id + "'");
}

}  // namespace advdoodle::tinynet
