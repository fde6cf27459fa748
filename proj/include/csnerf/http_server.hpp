#pragma once

#include <string>

// Eigen must be parsed before httplib: <resolv.h> defines a `_res` macro.
#include "csnerf/service.hpp"

#include <httplib.h>

namespace csnerf::service {

inline void send(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  res.set_header("Access-Control-Allow-Origin", "*");
  res.set_header("Access-Control-Expose-Headers", "X-Render-Ms, X-Block-Id, X-Seed, X-Tinted-Pixels");
  res.set_content(r.body, r.content_type);
}

// GET /info, POST /render, GET /trajectories.
inline void bind_routes(httplib::Server& server, RenderService& svc) {
  server.Get("/info", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.handle_info()); });
  server.Get("/trajectories",
             [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.handle_trajectories()); });
  server.Post("/render", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.handle_render(req.body));
  });
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.status = 204;
  });
}

}  // namespace csnerf::service
