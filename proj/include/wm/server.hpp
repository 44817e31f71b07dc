#pragma once

// HTTP JSON API over a SessionManager.

#include <filesystem>
#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "wm/session.hpp"

namespace wm {

namespace server_detail {

inline void send_json(httplib::Response& res, int status, const ojson& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message,
                       ojson extra = ojson::object()) {
  ojson body = {{"error", {{"kind", kind}, {"message", message}}}};
  for (auto& [k, v] : extra.items()) body["error"][k] = v;
  send_json(res, status, body);
}

inline ojson world_json(const WorldModel& w) {
  return {{"id", w.id}, {"description", w.description}, {"render_kind", render_kind_name(w.render_kind)}};
}

inline ojson rejected_json(const NoValidCandidate& e) {
  ojson out = ojson::array();
  for (const auto& c : e.rejected()) out.push_back({{"code", c.code}, {"reason", c.reason}, {"raw", c.raw}});
  return out;
}

inline std::size_t parse_index(const std::string& s, const char* what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || s.front() == '-') throw BadRequest(std::string("bad ") + what + " '" + s + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace server_detail

/// Registers the API routes on `http`. The manager must outlive the server.
inline void install_routes(httplib::Server& http, SessionManager& manager) {
  using namespace server_detail;

  http.Get("/worlds", [](const httplib::Request&, httplib::Response& res) {
    ojson out = ojson::array();
    for (const auto& id : list_worlds()) out.push_back(world_json(*load_world(id)));
    send_json(res, 200, {{"worlds", out}});
  });

  http.Post("/sessions", [&manager](const httplib::Request& req, httplib::Response& res) {
    ojson body;
    try {
      body = req.body.empty() ? ojson::object() : ojson::parse(req.body);
      if (!body.is_object()) throw std::invalid_argument("body must be a JSON object");
    } catch (const std::exception& e) {
      return send_error(res, 400, "BadRequest", e.what());
    }
    if (!body.contains("world") || !body.at("world").is_string())
      return send_error(res, 400, "BadRequest", "missing world");
    std::optional<std::uint64_t> seed;
    std::optional<SamplingBudget> budget;
    try {
      if (body.contains("seed") && !body.at("seed").is_null()) {
        if (!body.at("seed").is_number_unsigned()) throw std::invalid_argument("seed must be a non-negative integer");
        seed = body.at("seed").get<std::uint64_t>();
      }
      if (body.contains("budget") && !body.at("budget").is_null())
        budget = budget_from_json(body.at("budget"), manager.config().budget);
    } catch (const std::exception& e) {
      return send_error(res, 400, "BadRequest", e.what());
    }
    try {
      send_json(res, 201, to_json(manager.create(body.at("world").get<std::string>(), seed, budget)));
    } catch (const UnknownWorld& e) {
      send_error(res, 404, "UnknownWorld", e.what());
    }
  });

  http.Get(R"(/sessions/([^/]+))", [&manager](const httplib::Request& req, httplib::Response& res) {
    auto rec = manager.get(req.matches[1]);
    if (!rec) return send_error(res, 404, "UnknownSession", "unknown session '" + std::string(req.matches[1]) + "'");
    send_json(res, 200, to_json(*rec));
  });

  http.Post(R"(/sessions/([^/]+)/utterances)", [&manager](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!manager.get(id)) return send_error(res, 404, "UnknownSession", "unknown session '" + id + "'");
    UtteranceRequest u;
    try {
      const auto body = ojson::parse(req.body);
      if (!body.is_object()) throw std::invalid_argument("body must be a JSON object");
      if (body.contains("tag")) u.tag = require_tag(body.at("tag").get<std::string>());
      if (body.contains("text")) u.text = body.at("text").get<std::string>();
      if (body.contains("code")) u.code = body.at("code").get<std::string>();
      if (body.contains("override_candidate") && !body.at("override_candidate").is_null()) {
        if (!body.at("override_candidate").is_number_unsigned())
          throw std::invalid_argument("override_candidate must be a non-negative integer");
        u.override_candidate = body.at("override_candidate").get<std::size_t>();
      }
      if (!u.code && !u.tag) throw std::invalid_argument("missing tag");
    } catch (const std::exception& e) {
      return send_error(res, 400, "BadRequest", e.what());
    }
    try {
      send_json(res, 200, to_json(manager.post(id, u)));
    } catch (const BadRequest& e) {
      send_error(res, 400, "BadRequest", e.what());
    } catch (const NoValidCandidate& e) {
      send_error(res, 422, "NoValidCandidate", e.what(), {{"rejected", rejected_json(e)}});
    } catch (const InvalidCode& e) {
      send_error(res, 422, "InvalidCode", e.what());
    } catch (const QueryFailed& e) {
      auto err = e.entry().result.error;
      err["entry"] = to_json(e.entry());
      send_json(res, 409, {{"error", err}});
    } catch (const BackendError& e) {
      send_error(res, 502, "BackendError", e.what());
    } catch (const std::out_of_range& e) {
      send_error(res, 404, "UnknownSession", e.what());
    }
  });

  http.Get(R"(/sessions/([^/]+)/entries/([^/]+)/render)", [&manager](const httplib::Request& req,
                                                                      httplib::Response& res) {
    const std::string id = req.matches[1];
    auto rec = manager.get(id);
    if (!rec) return send_error(res, 404, "UnknownSession", "unknown session '" + id + "'");
    try {
      const auto entry = parse_index(req.matches[2], "entry");
      if (entry >= rec->entries.size())
        return send_error(res, 404, "UnknownEntry", "no entry " + std::to_string(entry));
      const auto k = req.has_param("k") ? parse_index(req.get_param_value("k"), "k") : 0;
      const auto r = manager.render(id, entry, k);
      if (req.get_param_value("format") == "json") {
        send_json(res, 200, r.scene.to_json());
      } else {
        res.status = 200;
        res.set_content(r.svg, "image/svg+xml");
      }
    } catch (const BadRequest& e) {
      send_error(res, 400, "BadRequest", e.what());
    } catch (const RenderError& e) {
      send_error(res, 500, "RenderError", e.what());
    }
  });

  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, "InternalError", e.what());
    }
  });
}

/// Serves the API (and, if `static_dir` is set, a static client) until stopped.
inline bool serve(SessionManager& manager, const std::string& static_dir = {}) {
  httplib::Server http;
  install_routes(http, manager);
  if (!static_dir.empty() && std::filesystem::is_directory(static_dir)) http.set_mount_point("/", static_dir);
  return http.listen(manager.config().host, manager.config().port);
}

}  // namespace wm
