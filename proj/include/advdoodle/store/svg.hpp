#pragma once

#include <charconv>
#include <cstdlib>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "advdoodle/bezier.hpp"
#include "advdoodle/error.hpp"
#include "advdoodle/store/attack_file.hpp"

namespace advdoodle::store {

namespace detail {

/// Shortest text that parses back to the same double.
inline std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline std::string point(Vec2 p) { return num(p.x) + " " + num(p.y); }

/// Path data for one curve. Degrees up to cubic map onto native SVG segments;
/// higher degrees become their flattened polyline.
inline std::string curve_path(std::span<const Vec2> pts) {
  std::string d = "M " + point(pts[0]);
  switch (pts.size()) {
    case 2: return d + " L " + point(pts[1]);
    case 3: return d + " Q " + point(pts[1]) + " " + point(pts[2]);
    case 4: return d + " C " + point(pts[1]) + " " + point(pts[2]) + " " + point(pts[3]);
    default: {
      const auto line = flatten(pts);
      for (std::size_t i = 1; i < line.vertices.size(); ++i) d += " L " + point(line.vertices[i]);
      return d;
    }
  }
}

}  // namespace detail

/// Black strokes on a transparent canvas, one path element per curve.
/// Curves of degree above three also carry their control points in a
/// data attribute so the document can be read back without loss.
inline std::string export_svg(const AttackFile& attack) {
  check(attack.success && attack.best_v.has_value(), ErrorKind::refused,
        "only successful attacks can be exported");
  const auto& v = *attack.best_v;
  const Canvas c = attack.canvas;
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(c.width) +
                    "\" height=\"" + std::to_string(c.height) + "\" viewBox=\"0 0 " +
                    std::to_string(c.width) + " " + std::to_string(c.height) + "\">\n";
  for (int l = 0; l < v.curves(); ++l) {
    out += "  <path d=\"" + detail::curve_path(v.curve(l)) + "\" fill=\"none\" stroke=\"black\" stroke-width=\"" +
           detail::num(attack.config.raster.width_px) + "\" stroke-linecap=\"round\" stroke-linejoin=\"round\"";
    if (v.points_per_curve() > 4) {
      out += " data-control-points=\"";
      for (int n = 0; n < v.points_per_curve(); ++n)
        out += (n ? " " : "") + detail::point(v.at(l, n));
      out += "\"";
    }
    out += "/>\n";
  }
  out += "</svg>\n";
  return out;
}

namespace detail {

inline std::vector<double> parse_numbers(std::string_view s) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char ch = s[i];
    if (ch == ' ' || ch == ',' || ch == '\n' || ch == '\t' || ch == 'M' || ch == 'L' || ch == 'Q' ||
        ch == 'C') {
      ++i;
      continue;
    }
    double v = 0;
    const auto r = std::from_chars(s.data() + i, s.data() + s.size(), v);
    check(r.ec == std::errc(), ErrorKind::invalid_input, "bad number in path data");
    out.push_back(v);
    i = static_cast<std::size_t>(r.ptr - s.data());
  }
  return out;
}

inline std::string_view attribute(std::string_view element, std::string_view name) {
  const std::string key = " " + std::string(name) + "=\"";
  const auto at = element.find(key);
  if (at == std::string_view::npos) return {};
  const auto start = at + key.size();
  const auto end = element.find('"', start);
  check(end != std::string_view::npos, ErrorKind::invalid_input, "unterminated attribute");
  return element.substr(start, end - start);
}

}  // namespace detail

/// Reads the control points back from a document written by export_svg.
inline std::vector<std::vector<Vec2>> parse_svg_curves(std::string_view svg) {
  std::vector<std::vector<Vec2>> curves;
  std::size_t pos = 0;
  while ((pos = svg.find("<path ", pos)) != std::string_view::npos) {
    const auto end = svg.find("/>", pos);
    check(end != std::string_view::npos, ErrorKind::invalid_input, "unterminated path element");
    const auto element = svg.substr(pos, end - pos);
    auto data = detail::attribute(element, "data-control-points");
    if (data.empty()) data = detail::attribute(element, "d");
    const auto nums = detail::parse_numbers(data);
    check(nums.size() >= 4 && nums.size() % 2 == 0, ErrorKind::invalid_input, "bad path data");
    std::vector<Vec2> pts;
    for (std::size_t i = 0; i < nums.size(); i += 2) pts.push_back({nums[i], nums[i + 1]});
    curves.push_back(std::move(pts));
    pos = end;
  }
  return curves;
}

}  // namespace advdoodle::store
