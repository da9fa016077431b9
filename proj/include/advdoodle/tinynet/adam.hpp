#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "advdoodle/error.hpp"

namespace advdoodle::tinynet {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::int64_t step = 0;
};

/// Standard Adam with bias correction; moments are lazily sized on first use.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  check(params.size() == grads.size(), ErrorKind::invalid_input, "adam shape mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
  }
  check(state.m.size() == params.size(), ErrorKind::invalid_input, "adam state shape mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    params[i] = static_cast<T>(params[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

}  // namespace advdoodle::tinynet
