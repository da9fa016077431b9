#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advdoodle/error.hpp"
#include "advdoodle/tinynet/model.hpp"

namespace advdoodle::tinynet {

// Layout (all integers little-endian):
//   magic "ADVDNET\0" | u32 version | str arch_id | u32 input_size | u32 classes
//   u32 layer_count | per layer: u32 kind, i32 in, i32 out, i32 kernel, i32 stride
//   per layer: u32 n_weights, f32[n], u32 n_bias, f32[n]
//   u32 crc32 of every preceding byte
inline constexpr std::array<char, 8> model_magic = {'A', 'D', 'V', 'D', 'N', 'E', 'T', '\0'};
inline constexpr std::uint32_t model_format_version = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string str(std::size_t max_len = 256) {
    const auto n = u32();
    check(n <= max_len, ErrorKind::corrupt_file, "string field too long");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    check(pos_ + n <= bytes_.size(), ErrorKind::corrupt_file, "unexpected end of model file");
  }
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline std::vector<unsigned char> serialize_model(const Model<float>& model) {
  detail::ByteWriter w;
  w.raw(model_magic.data(), model_magic.size());
  w.u32(model_format_version);
  w.str(model.arch_id());
  w.u32(static_cast<std::uint32_t>(model.input_size()));
  w.u32(static_cast<std::uint32_t>(model.class_count()));
  w.u32(static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& l : model.layers()) {
    w.u32(static_cast<std::uint32_t>(l.kind));
    w.i32(l.in);
    w.i32(l.out);
    w.i32(l.kernel);
    w.i32(l.stride);
  }
  for (const auto& p : model.params()) {
    w.u32(static_cast<std::uint32_t>(p.weights.size()));
    for (float v : p.weights) w.f32(v);
    w.u32(static_cast<std::uint32_t>(p.bias.size()));
    for (float v : p.bias) w.f32(v);
  }
  w.u32(detail::crc32_of(w.bytes()));
  return std::move(w.bytes());
}

/// Parses a model container. When `expected_arch` is given, a different
/// arch_id is refused.
inline Model<float> deserialize_model(std::span<const unsigned char> bytes,
                                      const std::optional<std::string>& expected_arch = {}) {
  check(bytes.size() >= model_magic.size() + 8, ErrorKind::corrupt_file, "model file too short");
  check(std::memcmp(bytes.data(), model_magic.data(), model_magic.size()) == 0,
        ErrorKind::corrupt_file, "bad model magic bytes");
  detail::ByteReader r(bytes);
  std::array<char, 8> magic{};
  r.raw(magic.data(), magic.size());
  const auto version = r.u32();
  check(version == model_format_version, ErrorKind::version_mismatch,
        "unsupported model format version " + std::to_string(version));
  const auto body = bytes.first(bytes.size() - 4);
  detail::ByteReader tail(bytes.last(4));
  check(tail.u32() == detail::crc32_of(body), ErrorKind::corrupt_file, "model checksum mismatch");

  const auto arch = r.str();
  if (expected_arch)
    check(arch == *expected_arch, ErrorKind::arch_mismatch,
          "model file holds '" + arch + "', expected '" + *expected_arch + "'");
  const int input_size = static_cast<int>(r.u32());
  const int classes = static_cast<int>(r.u32());
  const auto n_layers = r.u32();
  check(n_layers <= 256, ErrorKind::corrupt_file, "implausible layer count");
  std::vector<LayerSpec> layers(n_layers);
  for (auto& l : layers) {
    const auto kind = r.u32();
    check(kind >= 1 && kind <= 6, ErrorKind::corrupt_file, "unknown layer kind");
    l.kind = static_cast<LayerKind>(kind);
    l.in = r.i32();
    l.out = r.i32();
    l.kernel = r.i32();
    l.stride = r.i32();
  }
  Model<float> model = [&] {
    try {
      return Model<float>(arch, input_size, classes, layers);
    } catch (const Error& e) {
      throw Error(ErrorKind::corrupt_file, std::string("inconsistent architecture: ") + e.what());
    }
  }();
  for (auto& p : model.params()) {
    check(r.u32() == p.weights.size(), ErrorKind::corrupt_file, "weight blob size mismatch");
    for (auto& v : p.weights) v = r.f32();
    check(r.u32() == p.bias.size(), ErrorKind::corrupt_file, "bias blob size mismatch");
    for (auto& v : p.bias) v = r.f32();
  }
  check(r.remaining() == 4, ErrorKind::corrupt_file, "trailing bytes in model file");
  return model;
}

inline void save_model(const Model<float>& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

inline Model<float> load_model(const std::filesystem::path& path,
                               const std::optional<std::string>& expected_arch = {}) {
  const auto bytes = detail::read_file(path);
  return deserialize_model(bytes, expected_arch);
}

}  // namespace advdoodle::tinynet
