#pragma once

#include <string>

#include "httplib.h"

#include "advdoodle/service/service.hpp"

namespace advdoodle::service {

/// Registers the session routes of `svc` on `server`. The service must outlive it.
inline void mount_routes(httplib::Server& server, DoodleService& svc) {
  server.set_payload_max_length(svc.config().max_body_bytes);
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Post("/sessions", [&svc, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.create_session(req.body));
  });
  server.Get(R"(/sessions/([A-Za-z0-9_-]+))", [&svc, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.get_session(req.matches[1]));
  });
  server.Get(R"(/sessions/([A-Za-z0-9_-]+)/image)",
             [&svc, reply](const httplib::Request& req, httplib::Response& res) {
               reply(res, svc.get_image(req.matches[1]));
             });
  server.Get(R"(/sessions/([A-Za-z0-9_-]+)/reference)",
             [&svc, reply](const httplib::Request& req, httplib::Response& res) {
               reply(res, svc.get_reference(req.matches[1]));
             });
  server.Post(R"(/sessions/([A-Za-z0-9_-]+)/strokes)",
              [&svc, reply](const httplib::Request& req, httplib::Response& res) {
                reply(res, svc.submit_strokes(req.matches[1], req.body));
              });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const auto r = res.status == 413 ? error_response(413, "payload_too_large", "request body too large")
                                     : error_response(res.status, "http", "no such route");
    res.set_content(r.body, r.content_type);
  });
}

}  // namespace advdoodle::service
