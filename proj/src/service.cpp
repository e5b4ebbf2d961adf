#include "ablreg/service.hpp"

#include <cstdlib>
#include <future>
#include <sstream>
#include <thread>

#include <httplib.h>

namespace ablreg {

namespace {

HttpResponse json_response(int status, const Json& j) { return {status, "application/json", j.dump()}; }

HttpResponse error_response(const SessionError& e) { return json_response(e.status, e.to_json()); }

HttpResponse error_response(int status, const std::string& code, const std::string& stage, const std::string& msg) {
  return error_response(SessionError(status, code, stage, msg));
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string item;
  while (std::getline(ss, item, '/')) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

Json parse_body(const std::string& body, const std::string& stage) {
  if (body.empty()) return Json::object();
  try {
    return Json::parse(body);
  } catch (const Json::exception& e) {
    throw SessionError(400, "invalid_json", stage, e.what());
  }
}

double query_double(const std::map<std::string, std::string>& q, const std::string& key, double fallback) {
  const auto it = q.find(key);
  if (it == q.end() || it->second.empty()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw SessionError(400, "invalid_parameter", "slice", "query parameter '" + key + "' is not a number");
  }
}

/// In-plane displacement lifted to 3D with the orthogonal plane's (u, v) axes.
Vec3 lift_in_plane(OrthogonalPlane plane, const Vec2& d) {
  switch (plane) {
    case OrthogonalPlane::axial:
      return {d.x(), d.y(), 0.0};
    case OrthogonalPlane::sagittal:
      return {0.0, d.x(), d.y()};
    case OrthogonalPlane::coronal:
      return {d.x(), 0.0, d.y()};
  }
  return Vec3::Zero();
}

}  // namespace

SessionService::SessionService(std::string data_dir, SessionSettings defaults)
    : data_dir_(std::move(data_dir)), defaults_(std::move(defaults)) {}

std::string SessionService::add_session(SessionData data, const SessionSettings& settings) {
  std::lock_guard lock(sessions_mutex_);
  const std::string id = "s" + std::to_string(next_id_++);
  sessions_[id] = std::make_shared<Session>(id, std::move(data), settings);
  return id;
}

std::shared_ptr<Session> SessionService::find(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

HttpResponse SessionService::create_session(const std::string& body) {
  const Json j = parse_body(body, "load");
  if (!j.is_object()) throw SessionError(400, "invalid_json", "load", "session request must be an object");
  SessionSettings settings = defaults_;
  try {
    if (j.contains("workspace") && !j["workspace"].is_null()) settings.workspace = j["workspace"].get<OrientedBox>();
    settings.control_spacing = j.value("spacing", settings.control_spacing);
    settings.lambda = j.value("lambda", settings.lambda);
    settings.cpd.seed = j.value("seed", settings.cpd.seed);
  } catch (const std::exception& e) {
    throw SessionError(400, "invalid_parameter", "load", e.what());
  }
  SessionData data = load_session_data(session_inputs_from_json(j, data_dir_));
  const std::string id = add_session(std::move(data), settings);
  return json_response(201, Json{{"id", id}});
}

HttpResponse SessionService::handle(const std::string& method, const std::string& path,
                                    const std::map<std::string, std::string>& query, const std::string& body) {
  try {
    const std::vector<std::string> parts = split_path(path);
    if (parts.empty() || parts[0] != "sessions") {
      return error_response(404, "not_found", "route", "no route for " + path);
    }
    if (parts.size() == 1) {
      if (method != "POST") return error_response(405, "method_not_allowed", "route", method + " " + path);
      return create_session(body);
    }
    const auto session = find(parts[1]);
    if (!session) return error_response(404, "unknown_session", "session", "no session '" + parts[1] + "'");
    return dispatch(*session, method, parts, query, body);
  } catch (const SessionError& e) {
    return error_response(e);
  } catch (const std::exception& e) {
    return error_response(500, "internal", "service", e.what());
  }
}

HttpResponse SessionService::dispatch(Session& s, const std::string& method, const std::vector<std::string>& parts,
                                      const std::map<std::string, std::string>& query, const std::string& body) {
  const std::size_t n = parts.size();
  const auto path_is = [&](std::initializer_list<const char*> tail) {
    if (n != 2 + tail.size()) return false;
    std::size_t i = 2;
    for (const char* t : tail) {
      if (std::string(t) != "*" && parts[i] != t) return false;
      ++i;
    }
    return true;
  };
  const auto route = [&](const char* m, std::initializer_list<const char*> tail) {
    return method == m && path_is(tail);
  };

  if (route("POST", {"register", "rigid"})) {
    const RigidStageResult r = s.register_rigid();
    return json_response(200, Json{{"matrix", matrix_to_json(r.transform)},
                                   {"diagnostics", r.diagnostics},
                                   {"source_points", r.source_points},
                                   {"target_points", r.target_points}});
  }
  if (route("GET", {"slice"})) {
    OrthogonalPlane plane = OrthogonalPlane::axial;
    BlendMode blend = BlendMode::alpha;
    try {
      if (query.count("plane")) plane = plane_from_string(query.at("plane"));
      if (query.count("blend")) blend = blend_from_string(query.at("blend"));
    } catch (const std::exception& e) {
      throw SessionError(400, "invalid_parameter", "slice", e.what());
    }
    const auto [lo, hi] = s.data().ctmri.geometry.world_bounds();
    const int axis = plane == OrthogonalPlane::axial ? 2 : plane == OrthogonalPlane::sagittal ? 0 : 1;
    const double pos = query_double(query, "pos", 0.5 * (lo[axis] + hi[axis]));
    const double clip = query_double(query, "clip", 30.0);
    return {200, "image/png", s.slice_png(plane, pos, clip, blend)};
  }
  if (route("GET", {"controlpoints"})) {
    return json_response(200, Json(s.control_points()));
  }
  if (route("POST", {"controlpoints", "*", "drag"})) {
    int pid = 0;
    try {
      std::size_t used = 0;
      pid = std::stoi(parts[3], &used);
      if (used != parts[3].size()) throw std::invalid_argument(parts[3]);
    } catch (const std::exception&) {
      throw SessionError(404, "unknown_control_point", "nonrigid", "control point '" + parts[3] + "' does not exist");
    }
    const Json j = parse_body(body, "nonrigid");
    Vec3 d;
    try {
      const Json& disp = j.at("displacement");
      if (disp.size() == 2) {
        d = lift_in_plane(plane_from_string(j.at("plane").get<std::string>()), vec2_from_json(disp));
      } else {
        d = vec3_from_json(disp);
      }
    } catch (const std::exception& e) {
      throw SessionError(400, "invalid_displacement", "nonrigid", e.what());
    }
    return json_response(200, s.drag(pid, d));
  }
  if (route("POST", {"undo"})) {
    return json_response(200, s.undo());
  }
  if (route("GET", {"metrics"})) {
    return json_response(200, s.metrics());
  }
  if (route("GET", {"audit"})) {
    Json log = Json::array();
    for (const AuditEntry& e : s.audit_log()) {
      log.push_back({{"sequence", e.sequence}, {"id", e.point_id}, {"displacement", vec_to_json(e.displacement)}});
    }
    return json_response(200, Json{{"edits", log}});
  }
  if (path_is({"register", "rigid"}) || path_is({"slice"}) || path_is({"controlpoints"}) ||
      path_is({"controlpoints", "*", "drag"}) || path_is({"undo"}) || path_is({"metrics"}) || path_is({"audit"})) {
    return error_response(405, "method_not_allowed", "route", method + " is not allowed on this resource");
  }
  std::string joined;
  for (const auto& p : parts) joined += "/" + p;
  return error_response(404, "not_found", "route", "no route for " + method + " " + joined);
}

int service_port_from_env() {
  const char* env = std::getenv("ABLREG_PORT");
  if (!env) return 8750;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v <= 0 || v > 65535) return 8750;
  return static_cast<int>(v);
}

struct HttpServer::Impl {
  httplib::Server server;
  std::thread thread;
};

HttpServer::HttpServer(SessionService& service) : impl_(std::make_unique<Impl>()) {
  const auto bridge = [&service](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    const HttpResponse r = service.handle(req.method, req.path, query, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  const char* any = R"(/.*)";
  impl_->server.Get(any, bridge);
  impl_->server.Post(any, bridge);
  impl_->server.Put(any, bridge);
  impl_->server.Delete(any, bridge);
  impl_->server.Patch(any, bridge);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  if (impl_->thread.joinable()) throw Error("server already started");
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::stop() {
  if (!impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

int serve(const std::string& data_dir, const std::string& host, int port) {
  SessionService service(data_dir);
  HttpServer server(service);
  try {
    server.start(host, port);
  } catch (const Error&) {
    return 1;
  }
  std::promise<void>().get_future().wait();
  return 0;
}

}  // namespace ablreg
