#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "advdoodle/bezier.hpp"
#include "advdoodle/compose.hpp"
#include "advdoodle/error.hpp"
#include "advdoodle/raster.hpp"
#include "advdoodle/store/attack_file.hpp"
#include "advdoodle/tinynet/model.hpp"

namespace advdoodle::service {

using nlohmann::json;

/// Freehand input: canvas-normalized points plus the pen width in pixels.
struct Stroke {
  std::vector<Vec2> points;
  double width_px = 1.5;
  friend bool operator==(const Stroke&, const Stroke&) = default;
};

struct Outcome {
  int predicted = 0;  // 0-based
  double confidence_s = 0.0;
  double confidence_predicted = 0.0;
  bool fooled = false;
  std::vector<double> probabilities;
  friend bool operator==(const Outcome&, const Outcome&) = default;
};

struct Submission {
  int seq = 0;
  std::string received_at;
  std::vector<Stroke> strokes;
  Outcome outcome;
};

struct StrokeLimits {
  std::size_t max_strokes = 256;
  std::size_t max_points = 4096;  // per stroke
  double max_width_px = 32.0;
  double coord_bound = 4.0;  // |normalized coordinate| limit
};

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof(out), "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

/// Human strokes go through the same coverage machinery as the attack, with
/// no transform. Strokes sharing a width are rasterized together; groups
/// combine by the same complement product as individual curves.
inline CoverageMap strokes_coverage(std::span<const Stroke> strokes, Canvas canvas,
                                    const RasterConfig& base) {
  CoverageMap cov;
  cov.canvas = canvas;
  cov.width_px = base.width_px;
  cov.softness_px = base.softness_px;
  cov.values.assign(static_cast<std::size_t>(canvas.height) * canvas.width, 0.0);
  std::map<double, std::vector<Polyline>> by_width;
  for (const auto& s : strokes) {
    Polyline line;
    for (const auto& p : s.points) line.vertices.push_back({p.x * canvas.width, p.y * canvas.height});
    by_width[s.width_px].push_back(std::move(line));
  }
  if (by_width.size() == 1) {
    RasterConfig cfg = base;
    cfg.width_px = by_width.begin()->first;
    return rasterize_polylines(by_width.begin()->second, canvas, cfg);
  }
  std::vector<double> keep(cov.values.size(), 1.0);
  for (const auto& [w, lines] : by_width) {
    RasterConfig cfg = base;
    cfg.width_px = w;
    const auto part = rasterize_polylines(lines, canvas, cfg);
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] *= 1.0 - part.values[i];
  }
  for (std::size_t i = 0; i < keep.size(); ++i) cov.values[i] = 1.0 - keep[i];
  return cov;
}

inline Outcome classify(const tinynet::Model<float>& model, const RgbImage& image, int s,
                        std::span<const Stroke> strokes, const RasterConfig& raster) {
  const auto cov = strokes_coverage(strokes, image.canvas(), raster);
  const auto probs = model.forward(composite(image, cov));
  Outcome o;
  o.predicted = tinynet::argmax<float>(probs);
  o.confidence_s = probs[static_cast<std::size_t>(s)];
  o.confidence_predicted = probs[static_cast<std::size_t>(o.predicted)];
  o.fooled = o.predicted != s;
  o.probabilities.assign(probs.begin(), probs.end());
  return o;
}

/// Polylines that trace a control point set exactly, in normalized coordinates.
inline std::vector<Stroke> strokes_from_control_points(const ControlPointSet& v, Canvas canvas,
                                                       const RasterConfig& raster) {
  std::vector<Stroke> out;
  for (int l = 0; l < v.curves(); ++l) {
    const auto line = flatten(v.curve(l), raster.segments);
    Stroke s;
    s.width_px = raster.width_px;
    for (const auto& p : line.vertices) s.points.push_back({p.x / canvas.width, p.y / canvas.height});
    out.push_back(std::move(s));
  }
  return out;
}

inline json to_json(const Stroke& s) {
  json pts = json::array();
  for (const auto& p : s.points) pts.push_back({p.x, p.y});
  return {{"points", pts}, {"width_px", s.width_px}};
}

inline json to_json(const Outcome& o, const std::vector<std::string>& class_names) {
  auto name = [&](int k) {
    return k >= 0 && k < static_cast<int>(class_names.size()) ? class_names[k] : std::to_string(k + 1);
  };
  return {{"predicted_class_id", o.predicted + 1},
          {"predicted_class", name(o.predicted)},
          {"confidence_s", o.confidence_s},
          {"confidence_predicted", o.confidence_predicted},
          {"fooled", o.fooled},
          {"probabilities", o.probabilities}};
}

inline Outcome outcome_from_json(const json& j) {
  Outcome o;
  o.predicted = j.at("predicted_class_id").get<int>() - 1;
  o.confidence_s = j.at("confidence_s").get<double>();
  o.confidence_predicted = j.at("confidence_predicted").get<double>();
  o.fooled = j.at("fooled").get<bool>();
  o.probabilities = j.at("probabilities").get<std::vector<double>>();
  return o;
}

/// Parses and validates a stroke list; `default_width` fills missing widths.
inline std::vector<Stroke> parse_strokes(const json& j, double default_width, const StrokeLimits& lim) {
  check(j.is_object() && j.contains("strokes") && j["strokes"].is_array(), ErrorKind::invalid_input,
        "body must be an object with a 'strokes' array");
  for (const auto& [k, v] : j.items())
    check(k == "strokes", ErrorKind::invalid_input, "unknown field '" + k + "'");
  const auto& arr = j["strokes"];
  check(arr.size() <= lim.max_strokes, ErrorKind::invalid_input, "too many strokes");
  std::vector<Stroke> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& sj = arr[i];
    const std::string where = "stroke " + std::to_string(i);
    check(sj.is_object() && sj.contains("points") && sj["points"].is_array(), ErrorKind::invalid_input,
          where + " needs a 'points' array");
    for (const auto& [k, v] : sj.items())
      check(k == "points" || k == "width_px", ErrorKind::invalid_input, where + ": unknown field '" + k + "'");
    Stroke s;
    s.width_px = default_width;
    if (sj.contains("width_px")) {
      check(sj["width_px"].is_number(), ErrorKind::invalid_input, where + ": width_px must be a number");
      s.width_px = sj["width_px"].get<double>();
    }
    check(std::isfinite(s.width_px) && s.width_px > 0.0 && s.width_px <= lim.max_width_px,
          ErrorKind::invalid_input, where + ": width_px out of range");
    const auto& pts = sj["points"];
    check(pts.size() >= 2, ErrorKind::invalid_input, where + " has fewer than 2 points");
    check(pts.size() <= lim.max_points, ErrorKind::invalid_input, where + " has too many points");
    for (const auto& p : pts) {
      check(p.is_array() && p.size() == 2 && p[0].is_number() && p[1].is_number(), ErrorKind::invalid_input,
            where + ": points must be [x, y] pairs");
      const Vec2 q{p[0].get<double>(), p[1].get<double>()};
      check(is_finite(q), ErrorKind::invalid_input, where + ": non-finite coordinate");
      check(std::abs(q.x) <= lim.coord_bound && std::abs(q.y) <= lim.coord_bound, ErrorKind::invalid_input,
            where + ": coordinate outside the allowed range");
      s.points.push_back(q);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// One person's replication of one computer attack.
struct ReplicationSession {
  std::string id;
  std::string attack_id;
  store::AttackFile reference;
  RgbImage image;  // preprocessed clean image
  int s = 0;       // ground truth, 0-based
  double stroke_width = 1.5;
  std::string created_at;
  std::vector<Submission> submissions;
  std::mutex mu;  // guards submissions and the session log
};

}  // namespace advdoodle::service
