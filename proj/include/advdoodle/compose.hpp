#pragma once

#include <optional>
#include <span>
#include <vector>

#include "advdoodle/affine.hpp"
#include "advdoodle/error.hpp"
#include "advdoodle/raster.hpp"

namespace advdoodle {

/// Three-channel image with values in [0, 1], stored planar (channel, row, column).
template <typename T>
struct BasicImage {
  int height = 0;
  int width = 0;
  std::vector<T> data;
  /// Ground-truth class, zero-based.
  std::optional<int> label;

  BasicImage() = default;
  BasicImage(int h, int w, T fill = T(0))
      : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

  Canvas canvas() const { return {height, width}; }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  T& at(int c, int h, int w) { return data[c * plane() + static_cast<std::size_t>(h) * width + w]; }
  T at(int c, int h, int w) const {
    return data[c * plane() + static_cast<std::size_t>(h) * width + w];
  }

  template <typename U>
  BasicImage<U> cast() const {
    BasicImage<U> out;
    out.height = height;
    out.width = width;
    out.label = label;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool operator==(const BasicImage&) const = default;
};

using RgbImage = BasicImage<float>;

/// out = X * (1 - cov), the mask shared by all three channels.
template <typename T>
BasicImage<T> composite(const BasicImage<T>& x, const CoverageMap& cov) {
  check(cov.canvas == x.canvas(), ErrorKind::invalid_input, "coverage/image shape mismatch");
  BasicImage<T> out = x;
  const std::size_t plane = x.plane();
  for (int c = 0; c < 3; ++c) {
    T* dst = out.data.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const double keep = 1.0 - cov.values[i];
      if (keep != 1.0) dst[i] = static_cast<T>(dst[i] * keep);
    }
  }
  return out;
}

/// psi(X, V; t): draw the doodle, misaligned by t, onto X.
template <typename T>
BasicImage<T> doodle(const BasicImage<T>& x, const ControlPointSet& v, const AffineParams& t,
                     const RasterConfig& cfg, CoverageMap* cov_out = nullptr) {
  auto cov = rasterize(apply_affine(v, t, x.canvas()), x.canvas(), cfg);
  auto out = composite(x, cov);
  if (cov_out) *cov_out = std::move(cov);
  return out;
}

/// d loss / d cov given d loss / d out: -sum_c upstream_c * X_c per pixel.
template <typename T>
std::vector<double> backprop_doodle(std::span<const T> upstream, const BasicImage<T>& x) {
  check(upstream.size() == x.data.size(), ErrorKind::invalid_input,
        "upstream gradient shape mismatch");
  const std::size_t plane = x.plane();
  std::vector<double> grad(plane, 0.0);
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      grad[i] -= static_cast<double>(upstream[c * plane + i]) * static_cast<double>(x.data[c * plane + i]);
  return grad;
}

}  // namespace advdoodle
