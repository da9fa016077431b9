#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "advdoodle/compose.hpp"
#include "advdoodle/error.hpp"
#include "advdoodle/rng.hpp"
#include "advdoodle/tinynet/adam.hpp"
#include "advdoodle/tinynet/model.hpp"

namespace advdoodle::tinynet {

struct TrainConfig {
  int epochs = 40;
  int batch_size = 16;
  AdamConfig adam{};  // lr 0.001
  std::uint64_t seed = 0;
};

struct TrainReport {
  int epochs = 0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

template <typename T>
double accuracy(const Model<T>& model, std::span<const BasicImage<T>> images) {
  if (images.empty()) return 0.0;
  Trace<T> trace;
  std::size_t hits = 0;
  for (const auto& img : images) {
    check(img.label.has_value(), ErrorKind::invalid_dataset, "unlabelled image");
    if (predict(model, img, trace) == *img.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(images.size());
}

/// Softmax cross-entropy gradient with respect to the logits: p - onehot.
template <typename T>
std::vector<T> cross_entropy_grad(std::span<const T> logits, int label, T* loss = nullptr) {
  auto p = kernels::softmax<T>(logits);
  if (loss) *loss = -kernels::log_softmax_at<T>(logits, static_cast<std::size_t>(label));
  p[label] -= T(1);
  return p;
}

/// Minibatch Adam on mean cross-entropy. Deterministic for a fixed seed.
template <typename T>
TrainReport train(Model<T>& model, std::span<const BasicImage<T>> train_set,
                  std::span<const BasicImage<T>> val_set, const TrainConfig& cfg) {
  check(cfg.batch_size >= 1 && cfg.epochs >= 0, ErrorKind::invalid_argument,
        "bad training configuration");
  std::vector<int> per_class(model.class_count(), 0);
  for (const auto& img : train_set) {
    check(img.label.has_value() && *img.label >= 0 && *img.label < model.class_count(),
          ErrorKind::invalid_dataset, "training image label out of range");
    ++per_class[*img.label];
  }
  for (int c = 0; c < model.class_count(); ++c)
    check(per_class[c] > 0, ErrorKind::invalid_dataset,
          "class " + std::to_string(c) + " has no training images");

  const auto n_layers = model.layers().size();
  std::vector<AdamState<T>> w_state(n_layers), b_state(n_layers);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, 0x7a11));
  Trace<T> trace;
  TrainReport report;
  report.epochs = cfg.epochs;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      auto grads = model.zero_gradients();
      for (std::size_t k = start; k < end; ++k) {
        const auto& img = train_set[order[k]];
        const auto z = model.logits(img, trace);
        T loss{};
        const auto g = cross_entropy_grad<T>(z, *img.label, &loss);
        epoch_loss += static_cast<double>(loss);
        model.backward(trace, g, nullptr, &grads);
      }
      const T inv = T(1) / static_cast<T>(end - start);
      for (std::size_t i = 0; i < n_layers; ++i) {
        if (!model.layers()[i].has_params()) continue;
        for (auto& v : grads[i].weights) v *= inv;
        for (auto& v : grads[i].bias) v *= inv;
        adam_step<T>(model.params()[i].weights, grads[i].weights, w_state[i], cfg.adam);
        adam_step<T>(model.params()[i].bias, grads[i].bias, b_state[i], cfg.adam);
      }
    }
    report.epoch_loss.push_back(train_set.empty() ? 0.0 : epoch_loss / train_set.size());
  }
  report.train_accuracy = accuracy<T>(model, train_set);
  report.val_accuracy = accuracy<T>(model, val_set);
  return report;
}

}  // namespace advdoodle::tinynet
