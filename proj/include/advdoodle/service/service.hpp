#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "advdoodle/error.hpp"
#include "advdoodle/service/session.hpp"
#include "advdoodle/store/attack_file.hpp"
#include "advdoodle/store/dataset.hpp"
#include "advdoodle/store/image_io.hpp"
#include "advdoodle/store/svg.hpp"
#include "advdoodle/tinynet/model.hpp"
#include "advdoodle/tinynet/preprocess.hpp"

namespace advdoodle::service {

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct ServiceConfig {
  std::filesystem::path dataset_root;
  tinynet::PreprocessSpec preprocess{};
  std::vector<std::string> class_names;
  std::filesystem::path log_dir;  // empty: no session logs
  std::size_t max_body_bytes = 1u << 20;
  StrokeLimits limits{};
};

inline int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::not_found: return 404;
    case ErrorKind::refused: return 409;
    case ErrorKind::io:
    case ErrorKind::corrupt_file:
    case ErrorKind::numeric: return 500;
    default: return 400;
  }
}

inline Response error_response(int status, std::string_view kind, const std::string& message) {
  return {status, "application/json", json{{"error", {{"kind", kind}, {"message", message}}}}.dump()};
}

inline Response error_response(const Error& e) {
  return error_response(http_status(e.kind()), to_string(e.kind()), e.what());
}

/// Backend of the replication UI. Models and attack files are loaded once
/// and never modified; sessions are created, read and appended to.
class DoodleService {
 public:
  DoodleService(ServiceConfig cfg, std::map<std::string, tinynet::Model<float>> models,
                std::map<std::string, store::AttackFile> attacks)
      : cfg_(std::move(cfg)), models_(std::move(models)), attacks_(std::move(attacks)) {
    if (!cfg_.log_dir.empty()) std::filesystem::create_directories(cfg_.log_dir);
  }

  const ServiceConfig& config() const { return cfg_; }

  Response create_session(const std::string& body) {
    return guarded(body, [&](const json& j) {
      check(j.is_object() && j.contains("attack") && j["attack"].is_string(), ErrorKind::invalid_input,
            "body must name an 'attack'");
      for (const auto& [k, v] : j.items())
        check(k == "attack" || k == "stroke_width", ErrorKind::invalid_input, "unknown field '" + k + "'");
      const auto attack_id = j["attack"].get<std::string>();
      const auto it = attacks_.find(attack_id);
      check(it != attacks_.end(), ErrorKind::not_found, "unknown attack '" + attack_id + "'");
      const auto& ref = it->second;
      check(models_.count(ref.arch_id) > 0, ErrorKind::not_found, "no served model for '" + ref.arch_id + "'");

      auto session = std::make_shared<ReplicationSession>();
      session->attack_id = attack_id;
      session->reference = ref;
      session->s = ref.class_id - 1;
      session->stroke_width = ref.config.raster.width_px;
      if (j.contains("stroke_width")) {
        check(j["stroke_width"].is_number(), ErrorKind::invalid_input, "stroke_width must be a number");
        session->stroke_width = j["stroke_width"].get<double>();
        check(std::isfinite(session->stroke_width) && session->stroke_width > 0.0 &&
                  session->stroke_width <= cfg_.limits.max_width_px,
              ErrorKind::invalid_input, "stroke_width out of range");
      }
      session->image = load_image(ref);
      session->created_at = utc_now();
      {
        std::unique_lock lock(sessions_mu_);
        session->id = "s" + std::to_string(++session_counter_);
      }
      // Logged before the session becomes visible, so "created" is always line one.
      append_log(*session, json{{"event", "created"},
                                {"session", session->id},
                                {"attack", attack_id},
                                {"stroke_width", session->stroke_width},
                                {"created_at", session->created_at}});
      {
        std::unique_lock lock(sessions_mu_);
        sessions_[session->id] = session;
      }
      std::lock_guard lock(session->mu);
      return Response{201, "application/json", state_json(*session).dump()};
    });
  }

  Response get_session(const std::string& id) {
    return guarded_noparse([&] {
      auto s = find(id);
      std::lock_guard lock(s->mu);
      return Response{200, "application/json", state_json(*s).dump()};
    });
  }

  Response get_image(const std::string& id) {
    return guarded_noparse([&] {
      auto s = find(id);
      const auto png = store::encode_png(s->image);
      return Response{200, "image/png", std::string(png.begin(), png.end())};
    });
  }

  Response get_reference(const std::string& id) {
    return guarded_noparse([&] {
      auto s = find(id);
      return Response{200, "image/svg+xml", store::export_svg(s->reference)};
    });
  }

  /// Composites the strokes onto the clean image, classifies, records.
  Response submit_strokes(const std::string& id, const std::string& body) {
    return guarded(body, [&](const json& j) {
      auto s = find(id);
      const auto strokes = parse_strokes(j, s->stroke_width, cfg_.limits);
      std::lock_guard lock(s->mu);
      Submission sub;
      sub.seq = static_cast<int>(s->submissions.size()) + 1;
      sub.received_at = utc_now();
      sub.strokes = strokes;
      sub.outcome = evaluate(*s, strokes);
      json strokes_json = json::array();
      for (const auto& st : strokes) strokes_json.push_back(to_json(st));
      append_log(*s, json{{"event", "submission"},
                          {"session", s->id},
                          {"seq", sub.seq},
                          {"received_at", sub.received_at},
                          {"strokes", strokes_json},
                          {"outcome", to_json(sub.outcome, cfg_.class_names)}});
      s->submissions.push_back(sub);
      return Response{200, "application/json",
                      json{{"session", s->id}, {"seq", sub.seq},
                           {"outcome", to_json(sub.outcome, cfg_.class_names)}}
                          .dump()};
    });
  }

  Outcome evaluate(const ReplicationSession& s, std::span<const Stroke> strokes) const {
    return classify(models_.at(s.reference.arch_id), s.image, s.s, strokes, s.reference.config.raster);
  }

  std::filesystem::path log_path(const std::string& id) const { return cfg_.log_dir / (id + ".jsonl"); }

  struct ReplayResult {
    int submissions = 0;
    int mismatches = 0;
  };

  /// Re-runs every recorded submission of a session log and compares outcomes.
  ReplayResult replay_log(const std::filesystem::path& path) const {
    std::ifstream in(path);
    check(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
    ReplayResult r;
    std::string line;
    std::optional<ReplicationSession> session;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw Error(ErrorKind::corrupt_file, std::string("bad session log line: ") + e.what());
      }
      if (j.at("event") == "created") {
        const auto it = attacks_.find(j.at("attack").get<std::string>());
        check(it != attacks_.end(), ErrorKind::not_found, "log names an unknown attack");
        session.emplace();
        session->reference = it->second;
        session->s = it->second.class_id - 1;
        session->stroke_width = j.at("stroke_width").get<double>();
        session->image = load_image(it->second);
      } else if (j.at("event") == "submission") {
        check(session.has_value(), ErrorKind::corrupt_file, "submission before session creation");
        const auto strokes = parse_strokes(json{{"strokes", j.at("strokes")}}, session->stroke_width,
                                           cfg_.limits);
        ++r.submissions;
        if (!(evaluate(*session, strokes) == outcome_from_json(j.at("outcome")))) ++r.mismatches;
      }
    }
    return r;
  }

 private:
  template <typename F>
  Response guarded(const std::string& body, F&& f) {
    if (body.size() > cfg_.max_body_bytes)
      return error_response(413, "payload_too_large", "request body exceeds " + std::to_string(cfg_.max_body_bytes) + " bytes");
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception& e) {  // parse errors and number overflow alike
      return error_response(400, to_string(ErrorKind::invalid_input), std::string("malformed JSON: ") + e.what());
    }
    return guarded_noparse([&] { return f(j); });
  }

  template <typename F>
  Response guarded_noparse(F&& f) {
    try {
      return f();
    } catch (const Error& e) {
      return error_response(e);
    } catch (const json::exception& e) {
      return error_response(400, to_string(ErrorKind::invalid_input), e.what());
    }
  }

  std::shared_ptr<ReplicationSession> find(const std::string& id) {
    std::shared_lock lock(sessions_mu_);
    const auto it = sessions_.find(id);
    check(it != sessions_.end(), ErrorKind::not_found, "unknown session '" + id + "'");
    return it->second;
  }

  RgbImage load_image(const store::AttackFile& ref) const {
    RgbImage raw = store::read_png(cfg_.dataset_root / ref.image_ref);
    RgbImage img = tinynet::preprocess(raw, cfg_.preprocess);
    check(img.canvas() == ref.canvas, ErrorKind::invalid_input,
          "preprocessed image does not match the attack canvas");
    img.label = ref.class_id - 1;
    return img;
  }

  json state_json(const ReplicationSession& s) const {
    json subs = json::array();
    for (const auto& sub : s.submissions) {
      json strokes = json::array();
      for (const auto& st : sub.strokes) strokes.push_back(to_json(st));
      subs.push_back({{"seq", sub.seq},
                      {"received_at", sub.received_at},
                      {"strokes", strokes},
                      {"outcome", to_json(sub.outcome, cfg_.class_names)}});
    }
    const auto& ref = s.reference;
    const int k = ref.class_id - 1;
    return {{"id", s.id},
            {"attack", s.attack_id},
            {"image_ref", ref.image_ref},
            {"class_id", ref.class_id},
            {"class_name", k >= 0 && k < static_cast<int>(cfg_.class_names.size()) ? cfg_.class_names[k] : ""},
            {"arch_id", ref.arch_id},
            {"canvas", {{"height", ref.canvas.height}, {"width", ref.canvas.width}}},
            {"stroke_width", s.stroke_width},
            {"created_at", s.created_at},
            {"submissions", subs}};
  }

  void append_log(const ReplicationSession& s, const json& event) {
    if (cfg_.log_dir.empty()) return;
    std::ofstream out(log_path(s.id), std::ios::app);
    check(static_cast<bool>(out), ErrorKind::io, "cannot append to session log");
    out << event.dump() << "\n";
    out.flush();
  }

  ServiceConfig cfg_;
  const std::map<std::string, tinynet::Model<float>> models_;
  const std::map<std::string, store::AttackFile> attacks_;
  std::shared_mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<ReplicationSession>> sessions_;
  std::uint64_t session_counter_ = 0;
};

}  // namespace advdoodle::service
