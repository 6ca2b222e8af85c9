// SPDX-License-Identifier: Apache-2.0
//
// JSON-over-HTTP chat service: session registry, request routing and the
// HTTP server wrapper.
//
//   POST   /api/session               → {session_id}
//   POST   /api/session/{id}/message  {text} → session payload with response
//   GET    /api/session/{id}/state    → session payload
//   DELETE /api/session/{id}          → {}
//   GET    /api/meta                  → {slots, candidate_count, checkpoint_info}
//
// Errors are {error} with a 4xx status.
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "taskbot/session.hpp"

namespace httplib {
class Server;
}

namespace taskbot {

class SessionManager {
 public:
  explicit SessionManager(std::shared_ptr<const InferenceBundle> bundle, std::size_t max_sessions = 1024);

  std::string create();
  std::shared_ptr<Session> find(const std::string& id) const;
  bool remove(const std::string& id);
  std::size_t size() const;
  const InferenceBundle& bundle() const { return *bundle_; }

 private:
  std::shared_ptr<const InferenceBundle> bundle_;
  std::size_t max_sessions_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_;
};

nlohmann::json meta_json(const InferenceBundle& bundle);

struct HttpReply {
  int status = 200;
  std::string body;
};

/// Routes one API request; never throws.
HttpReply handle_request(SessionManager& sessions, const std::string& method, const std::string& path,
                         const std::string& body);

class HttpService {
 public:
  explicit HttpService(SessionManager& sessions, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  SessionManager& sessions_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace taskbot
