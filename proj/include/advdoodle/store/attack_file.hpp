#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "advdoodle/attack.hpp"
#include "advdoodle/bezier.hpp"
#include "advdoodle/error.hpp"
#include "advdoodle/store/config.hpp"
#include "advdoodle/tinynet/model_io.hpp"

namespace advdoodle::store {

inline constexpr const char* attack_format_name = "advdoodle-attack";
inline constexpr int attack_format_version = 1;

/// Persisted outcome of one run_attack call.
struct AttackFile {
  std::string image_ref;  // dataset-relative path of the clean image
  int class_id = 1;       // ground truth, 1-based
  Canvas canvas{64, 64};
  std::string arch_id;
  AttackConfig config{};
  std::uint64_t seed = 0;
  bool success = false;
  double s_min = std::numeric_limits<double>::infinity();
  std::optional<ControlPointSet> best_v;  // pixel coordinates in memory

  friend bool operator==(const AttackFile&, const AttackFile&) = default;
};

inline AttackFile make_attack_file(const AttackRecord& rec, const AttackConfig& cfg,
                                   std::string image_ref, int class_id, Canvas canvas,
                                   std::string arch_id) {
  AttackFile f;
  f.image_ref = std::move(image_ref);
  f.class_id = class_id;
  f.canvas = canvas;
  f.arch_id = std::move(arch_id);
  f.config = cfg;
  f.seed = cfg.seed;
  f.success = rec.success;
  f.s_min = rec.s_min;
  f.best_v = rec.best_v;
  return f;
}

namespace detail {

/// A normalized value n with n * extent == px exactly, searched a few ulps
/// around px / extent. Exact by construction when extent is a power of two.
inline std::optional<double> exact_normalized(double px, int extent) {
  const double e = extent;
  double n = px / e;
  if (n * e == px) return n;
  double up = n, down = n;
  for (int k = 0; k < 64; ++k) {
    up = std::nextafter(up, std::numeric_limits<double>::infinity());
    down = std::nextafter(down, -std::numeric_limits<double>::infinity());
    if (up * e == px) return up;
    if (down * e == px) return down;
  }
  return std::nullopt;
}

inline std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", v);
  return buf;
}

inline std::uint32_t crc_text(const std::string& s) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

}  // namespace detail

/// JSON body without the checksum field. Coordinates are stored divided by
/// the canvas extent; any coordinate that has no exact normalized double is
/// additionally listed in pixel units under "px_exact".
inline json attack_body(const AttackFile& f) {
  json j;
  j["format"] = attack_format_name;
  j["version"] = attack_format_version;
  j["image"] = {{"ref", f.image_ref},
                {"class_id", f.class_id},
                {"height", f.canvas.height},
                {"width", f.canvas.width}};
  j["arch_id"] = f.arch_id;
  j["config"] = to_json(f.config);
  j["seed"] = f.seed;
  j["success"] = f.success;
  j["s_min"] = std::isfinite(f.s_min) ? json(f.s_min) : json(nullptr);
  if (!f.best_v) {
    j["best_v"] = nullptr;
    return j;
  }
  const auto& v = *f.best_v;
  json pts = json::array();
  json exact = json::array();
  for (std::size_t i = 0; i < v.points().size(); ++i) {
    const Vec2 p = v.points()[i];
    const auto nx = detail::exact_normalized(p.x, f.canvas.width);
    const auto ny = detail::exact_normalized(p.y, f.canvas.height);
    pts.push_back({nx.value_or(p.x / f.canvas.width), ny.value_or(p.y / f.canvas.height)});
    if (!nx || !ny) exact.push_back({i, p.x, p.y});
  }
  j["best_v"] = {{"curves", v.curves()}, {"points_per_curve", v.points_per_curve()}, {"points", pts}};
  if (!exact.empty()) j["best_v"]["px_exact"] = exact;
  return j;
}

inline std::string serialize_attack(const AttackFile& f) {
  json j = attack_body(f);
  j["checksum"] = "crc32:" + detail::hex32(detail::crc_text(j.dump()));
  return j.dump(2) + "\n";
}

namespace detail {

inline void require_keys(const json& j, std::initializer_list<const char*> keys,
                         std::initializer_list<const char*> optional_keys, const std::string& where) {
  check(j.is_object(), ErrorKind::invalid_input, where + " must be an object");
  for (const char* k : keys)
    check(j.contains(k), ErrorKind::invalid_input, "missing field '" + std::string(k) + "' in " + where);
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* a : keys) known = known || k == a;
    for (const char* a : optional_keys) known = known || k == a;
    check(known, ErrorKind::invalid_input, "unknown field '" + k + "' in " + where);
  }
}

}  // namespace detail

/// Checks, in order: parseable, format and version, checksum, strict schema.
inline AttackFile parse_attack(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::corrupt_file, std::string("attack file is not valid JSON: ") + e.what());
  }
  check(j.is_object() && j.contains("format") && j["format"] == attack_format_name,
        ErrorKind::corrupt_file, "not an attack file");
  check(j.contains("version") && j["version"].is_number_integer(), ErrorKind::corrupt_file,
        "attack file has no version");
  const int version = j["version"].get<int>();
  check(version == attack_format_version, ErrorKind::version_mismatch,
        "unsupported attack file version " + std::to_string(version));
  check(j.contains("checksum") && j["checksum"].is_string(), ErrorKind::corrupt_file,
        "attack file has no checksum");
  const std::string stored = j["checksum"].get<std::string>();
  j.erase("checksum");
  check(stored == "crc32:" + detail::hex32(detail::crc_text(j.dump())), ErrorKind::corrupt_file,
        "attack file checksum mismatch");

  try {
    detail::require_keys(j, {"format", "version", "image", "arch_id", "config", "seed", "success", "s_min", "best_v"},
                         {}, "attack file");
    const auto& img = j["image"];
    detail::require_keys(img, {"ref", "class_id", "height", "width"}, {}, "attack file image");
    AttackFile f;
    f.image_ref = img["ref"].get<std::string>();
    f.class_id = img["class_id"].get<int>();
    f.canvas = {img["height"].get<int>(), img["width"].get<int>()};
    check(f.canvas.height >= 1 && f.canvas.width >= 1, ErrorKind::invalid_input, "bad canvas size");
    f.arch_id = j["arch_id"].get<std::string>();
    from_json_strict(j["config"], f.config, "attack file config");
    check(to_json(f.config) == j["config"], ErrorKind::invalid_input,
          "attack file config snapshot is incomplete");
    f.seed = j["seed"].get<std::uint64_t>();
    f.success = j["success"].get<bool>();
    f.s_min = j["s_min"].is_null() ? std::numeric_limits<double>::infinity() : j["s_min"].get<double>();
    if (!j["best_v"].is_null()) {
      const auto& bv = j["best_v"];
      detail::require_keys(bv, {"curves", "points_per_curve", "points"}, {"px_exact"}, "attack file best_v");
      ControlPointSet v(bv["curves"].get<int>(), bv["points_per_curve"].get<int>());
      const auto& pts = bv["points"];
      check(pts.is_array() && pts.size() == v.size(), ErrorKind::invalid_input,
            "best_v point count does not match its shape");
      for (std::size_t i = 0; i < v.size(); ++i) {
        check(pts[i].is_array() && pts[i].size() == 2, ErrorKind::invalid_input, "bad point");
        v.points()[i] = {pts[i][0].get<double>() * f.canvas.width,
                         pts[i][1].get<double>() * f.canvas.height};
      }
      if (bv.contains("px_exact"))
        for (const auto& e : bv["px_exact"]) {
          const auto i = e.at(0).get<std::size_t>();
          check(i < v.size(), ErrorKind::invalid_input, "px_exact index out of range");
          v.points()[i] = {e.at(1).get<double>(), e.at(2).get<double>()};
        }
      f.best_v = std::move(v);
    }
    return f;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_input, std::string("attack file schema: ") + e.what());
  }
}

inline void save_attack(const std::filesystem::path& path, const AttackFile& f) {
  write_text(path, serialize_attack(f));
}

inline AttackFile load_attack(const std::filesystem::path& path) {
  const auto bytes = tinynet::detail::read_file(path);
  return parse_attack(std::string(bytes.begin(), bytes.end()));
}

}  // namespace advdoodle::store
