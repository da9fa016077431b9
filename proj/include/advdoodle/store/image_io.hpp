#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "advdoodle/compose.hpp"
#include "advdoodle/error.hpp"

namespace advdoodle::store {

namespace detail {

// Owns a png_image for the simplified libpng API and frees it on every path.
class PngImage {
 public:
  PngImage() {
    std::memset(&img_, 0, sizeof(img_));
    img_.version = PNG_IMAGE_VERSION;
  }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
  ~PngImage() { png_image_free(&img_); }
  png_image* get() { return &img_; }
  png_image* operator->() { return &img_; }

 private:
  png_image img_;
};

inline RgbImage from_interleaved(const std::vector<std::uint8_t>& px, int height, int width) {
  RgbImage img(height, width);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      img.data[c * plane + i] = static_cast<float>(px[3 * i + c]) / 255.0f;
  return img;
}

inline std::vector<std::uint8_t> to_interleaved(const RgbImage& img) {
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  std::vector<std::uint8_t> px(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(img.data[c * plane + i], 0.0f, 1.0f);
      px[3 * i + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  return px;
}

inline void check_png(PngImage& img, bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::io, what + ": " + img->message);
}

}  // namespace detail

/// True when the file starts with the PNG signature.
inline bool looks_like_png(const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) return false;
  unsigned char sig[8] = {};
  const bool ok = std::fread(sig, 1, 8, f) == 8 && png_sig_cmp(sig, 0, 8) == 0;
  std::fclose(f);
  return ok;
}

/// Decodes any PNG to 8-bit RGB (alpha composited over black by libpng,
/// grey expanded) and returns channel values in [0, 1].
inline RgbImage read_png(const std::filesystem::path& path) {
  detail::PngImage png;
  detail::check_png(png, png_image_begin_read_from_file(png.get(), path.c_str()),
                    "cannot read " + path.string());
  png->format = PNG_FORMAT_RGB;
  check(png->width > 0 && png->height > 0 && png->width <= 16384 && png->height <= 16384,
        ErrorKind::io, "implausible PNG dimensions in " + path.string());
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(*png.get()));
  detail::check_png(png, png_image_finish_read(png.get(), nullptr, px.data(), 0, nullptr),
                    "cannot decode " + path.string());
  return detail::from_interleaved(px, static_cast<int>(png->height), static_cast<int>(png->width));
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  detail::PngImage png;
  png->width = static_cast<png_uint_32>(img.width);
  png->height = static_cast<png_uint_32>(img.height);
  png->format = PNG_FORMAT_RGB;
  const auto px = detail::to_interleaved(img);
  detail::check_png(png,
                    png_image_write_to_file(png.get(), path.c_str(), 0, px.data(), 0, nullptr),
                    "cannot write " + path.string());
}

inline std::vector<unsigned char> encode_png(const RgbImage& img) {
  detail::PngImage png;
  png->width = static_cast<png_uint_32>(img.width);
  png->height = static_cast<png_uint_32>(img.height);
  png->format = PNG_FORMAT_RGB;
  const auto px = detail::to_interleaved(img);
  png_alloc_size_t size = 0;
  detail::check_png(png,
                    png_image_write_to_memory(png.get(), nullptr, &size, 0, px.data(), 0, nullptr),
                    "cannot size PNG");
  std::vector<unsigned char> out(size);
  detail::check_png(png,
                    png_image_write_to_memory(png.get(), out.data(), &size, 0, px.data(), 0,
                                              nullptr),
                    "cannot encode PNG");
  out.resize(size);
  return out;
}

inline RgbImage decode_png(std::span<const unsigned char> bytes) {
  detail::PngImage png;
  detail::check_png(png, png_image_begin_read_from_memory(png.get(), bytes.data(), bytes.size()),
                    "cannot parse PNG");
  png->format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(*png.get()));
  detail::check_png(png, png_image_finish_read(png.get(), nullptr, px.data(), 0, nullptr),
                    "cannot decode PNG");
  return detail::from_interleaved(px, static_cast<int>(png->height), static_cast<int>(png->width));
}

}  // namespace advdoodle::store
