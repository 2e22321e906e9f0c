#pragma once

// Binds an Api to a cpp-httplib server: JSON over HTTP/1.1, CORS enabled,
// optional static UI assets.

#include <optional>
#include <string>

#include <httplib.h>

#include "attnscope/service.hpp"

namespace attnscope {

inline Params to_params(const httplib::Params& in) {
  Params out;
  for (const auto& [k, v] : in) out[k] = v;  // last value wins on repeats
  return out;
}

inline void bind_routes(httplib::Server& server, Api& api,
                        const std::optional<std::string>& ui_dir = std::nullopt) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  auto dispatch = [&api](const httplib::Request& req, httplib::Response& res) {
    Response r = api.handle(req.method, req.path, to_params(req.params), req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json; charset=utf-8");
  };
  server.Get(R"(/api/v1/.*)", dispatch);
  server.Post(R"(/api/v1/.*)", dispatch);
  server.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
  });
  if (ui_dir) server.set_mount_point("/", *ui_dir);
}

}  // namespace attnscope
