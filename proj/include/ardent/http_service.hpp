#pragma once

// HTTP/JSON front end for SessionService.
//
//   POST /sessions                    {bundle?, arm?, favourite?} -> {session_id, arm}
//   GET  /sessions/{id}/item
//   POST /sessions/{id}/intended      {action}
//   POST /sessions/{id}/explanation   -> {explainer_id, explainer_label, asset_url} | {exhausted: true}
//   POST /sessions/{id}/final         {action}
//   GET  /sessions/{id}/log
//   GET  /assets/{bundle}/...         static bundle files
//
// 404 not found, 409 protocol violation, 400 invalid request.

// Eigen must precede httplib: <resolv.h> defines a `_res` macro.
#include "ardent/session.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace ardent {

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw InvalidArgument("request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed JSON body: ") + e.what());
  }
}

inline ActionId action_field(const nlohmann::json& body) {
  if (!body.contains("action") || !body.at("action").is_number_integer() || body.at("action").get<long long>() < 0)
    throw InvalidArgument("body must carry a nonnegative integer 'action'");
  return body.at("action").get<ActionId>();
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    send_json(res, 200, f());
  } catch (const NotFound& e) {
    send_json(res, 404, {{"error", "not-found"}, {"message", e.what()}});
  } catch (const ProtocolViolation& e) {
    send_json(res, 409, {{"error", "protocol-violation"}, {"message", e.what()}});
  } catch (const InvalidArgument& e) {
    send_json(res, 400, {{"error", "invalid-request"}, {"message", e.what()}});
  } catch (const nlohmann::json::exception& e) {
    send_json(res, 400, {{"error", "invalid-request"}, {"message", e.what()}});
  } catch (const std::exception& e) {
    send_json(res, 500, {{"error", "internal"}, {"message", e.what()}});
  }
}

}  // namespace detail

// Registers the wire protocol and static mounts. `static_dir`, when given, is
// served at "/" (the browser client).
inline void register_routes(httplib::Server& server, SessionService& service,
                            const std::optional<std::filesystem::path>& static_dir = std::nullopt) {
  using detail::guarded;

  server.Post("/sessions", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = detail::parse_body(req);
      std::string bundle_id;
      if (body.contains("bundle")) {
        bundle_id = body.at("bundle").get<std::string>();
      } else {
        const auto ids = service.bundle_ids();
        if (ids.size() != 1) throw InvalidArgument("specify 'bundle': the service hosts " + std::to_string(ids.size()));
        bundle_id = ids.front();
      }
      std::optional<Arm> arm;
      const std::string arm_name = body.value("arm", std::string("auto"));
      if (arm_name != "auto") arm = arm_from_string(arm_name);
      std::optional<ExplainerId> favourite;
      if (body.contains("favourite") && !body.at("favourite").is_null()) {
        if (!body.at("favourite").is_number_integer() || body.at("favourite").get<long long>() < 0)
          throw InvalidArgument("'favourite' must be a nonnegative integer");
        favourite = body.at("favourite").get<ExplainerId>();
      }
      return service.create_session(bundle_id, arm, favourite);
    });
  });

  server.Get(R"(/sessions/([0-9a-f]+)/item)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.get_item(req.matches[1]); });
  });

  server.Post(R"(/sessions/([0-9a-f]+)/intended)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.submit_intended(req.matches[1], detail::action_field(detail::parse_body(req))); });
  });

  server.Post(R"(/sessions/([0-9a-f]+)/explanation)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.request_explanation(req.matches[1]); });
  });

  server.Post(R"(/sessions/([0-9a-f]+)/final)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.submit_final(req.matches[1], detail::action_field(detail::parse_body(req))); });
  });

  server.Get(R"(/sessions/([0-9a-f]+)/log)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.export_log(req.matches[1]); });
  });

  for (const auto& id : service.bundle_ids()) {
    const auto b = service.bundle(id);
    if (!b->root.empty()) server.set_mount_point("/assets/" + id, b->root.string());
  }
  if (static_dir) server.set_mount_point("/", static_dir->string());
}

}  // namespace ardent
