#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "advdoodle/error.hpp"

namespace advdoodle::tinynet {

/// Dense row-major tensor. Feature maps use shape {channels, height, width}.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, T fill = T(0)) { reshape(std::move(dims), fill); }

  static std::size_t volume(const std::vector<int>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  }

  /// Resizes without releasing capacity; contents are reset to `fill`.
  void reshape(std::vector<int> dims, T fill = T(0)) {
    for (int d : dims) check(d > 0, ErrorKind::invalid_input, "tensor dims must be positive");
    shape = std::move(dims);
    data.assign(volume(shape), fill);
  }

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape[i]; }

  T& operator[](std::size_t i) { return data[i]; }
  T operator[](std::size_t i) const { return data[i]; }
};

}  // namespace advdoodle::tinynet
