// HTTP/JSON session service. Requests are dispatched by `handle`, which does
// not depend on the transport; `serve` binds it to an HTTP listener.
//
//   POST /sessions                                   {input paths} -> {"id"}
//   POST /sessions/{id}/register/rigid               -> T_rigid + diagnostics
//   GET  /sessions/{id}/slice?plane=&pos=&clip=&blend=  -> PNG
//   GET  /sessions/{id}/controlpoints                -> control point set
//   POST /sessions/{id}/controlpoints/{pid}/drag     {"displacement": [dx,dy,dz]}
//                                                    or [du,dv] with "plane"
//   POST /sessions/{id}/undo
//   GET  /sessions/{id}/metrics
//   GET  /sessions/{id}/audit
// Errors are JSON {code, message, stage}.

#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "ablreg/session.hpp"

namespace ablreg {

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

class SessionService {
 public:
  explicit SessionService(std::string data_dir, SessionSettings defaults = {});

  HttpResponse handle(const std::string& method, const std::string& path,
                      const std::map<std::string, std::string>& query, const std::string& body);

  /// Registers an in-memory session and returns its id.
  std::string add_session(SessionData data, const SessionSettings& settings);
  std::shared_ptr<Session> find(const std::string& id) const;

 private:
  HttpResponse create_session(const std::string& body);
  HttpResponse dispatch(Session& s, const std::string& method, const std::vector<std::string>& parts,
                        const std::map<std::string, std::string>& query, const std::string& body);

  std::string data_dir_;
  SessionSettings defaults_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
};

/// HTTP transport for a SessionService.
class HttpServer {
 public:
  explicit HttpServer(SessionService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port (0 picks a free port) and serves on a background
  /// thread. Returns the bound port; throws Error when binding fails.
  int start(const std::string& host, int port);
  /// Stops serving and joins the background thread.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Port from ABLREG_PORT, 8750 when unset or invalid.
int service_port_from_env();

/// Blocks serving HTTP on host:port until the process is stopped.
int serve(const std::string& data_dir, const std::string& host, int port);

}  // namespace ablreg
