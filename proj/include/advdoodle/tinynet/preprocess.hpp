#pragma once

#include <algorithm>
#include <cmath>

#include "advdoodle/compose.hpp"
#include "advdoodle/error.hpp"

namespace advdoodle::tinynet {

/// Resize to resize_to x resize_to, then take the centred crop.
struct PreprocessSpec {
  int resize_to = 72;
  int center_crop = 64;

  void validate() const {
    check(resize_to >= 8 && center_crop >= 8 && center_crop <= resize_to,
          ErrorKind::invalid_input, "preprocess needs 8 <= center_crop <= resize_to");
  }
  friend bool operator==(const PreprocessSpec&, const PreprocessSpec&) = default;
};

/// Bilinear resampling with half-pixel centres and edge clamping.
template <typename T>
BasicImage<T> resize_bilinear(const BasicImage<T>& src, int out_h, int out_w) {
  BasicImage<T> out(out_h, out_w);
  out.label = src.label;
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(c, y0, x0) + tx * (src.at(c, y0, x1) - src.at(c, y0, x0));
        const double bot = src.at(c, y1, x0) + tx * (src.at(c, y1, x1) - src.at(c, y1, x0));
        out.at(c, y, x) = static_cast<T>(std::clamp(top + ty * (bot - top), 0.0, 1.0));
      }
    }
  }
  return out;
}

template <typename T>
BasicImage<T> center_crop(const BasicImage<T>& src, int size) {
  check(size <= src.height && size <= src.width, ErrorKind::invalid_input, "crop larger than image");
  const int oy = (src.height - size) / 2;
  const int ox = (src.width - size) / 2;
  BasicImage<T> out(size, size);
  out.label = src.label;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(c, y, x) = src.at(c, y + oy, x + ox);
  return out;
}

template <typename T>
BasicImage<T> preprocess(const BasicImage<T>& raw, const PreprocessSpec& spec) {
  spec.validate();
  check(raw.height >= 8 && raw.width >= 8, ErrorKind::invalid_input, "raw image smaller than 8x8");
  auto resized = (raw.height == spec.resize_to && raw.width == spec.resize_to)
                     ? raw
                     : resize_bilinear(raw, spec.resize_to, spec.resize_to);
  return center_crop(resized, spec.center_crop);
}

}  // namespace advdoodle::tinynet
