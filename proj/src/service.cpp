// SPDX-License-Identifier: Apache-2.0
#include "taskbot/service.hpp"

#include <cstdio>
#include <random>
#include <vector>

#include "httplib.h"
#include "taskbot/errors.hpp"

namespace taskbot {

using nlohmann::json;

SessionManager::SessionManager(std::shared_ptr<const InferenceBundle> bundle, std::size_t max_sessions)
    : bundle_(std::move(bundle)), max_sessions_(max_sessions), salt_(std::random_device{}()) {}

std::string SessionManager::create() {
  std::lock_guard lock(mutex_);
  if (sessions_.size() >= max_sessions_) throw ContractError("too many open sessions");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%08llx%06llx", static_cast<unsigned long long>(salt_ & 0xffffffffULL),
                static_cast<unsigned long long>(++counter_));
  sessions_.emplace(buf, std::make_shared<Session>(bundle_));
  return buf;
}

std::shared_ptr<Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

bool SessionManager::remove(const std::string& id) {
  std::lock_guard lock(mutex_);
  return sessions_.erase(id) > 0;
}

std::size_t SessionManager::size() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

json meta_json(const InferenceBundle& bundle) {
  json slots = json::array();
  for (const auto& s : bundle.prep.schema) slots.push_back({{"name", s.name}, {"values", s.candidates}});
  return json{{"slots", slots}, {"candidate_count", bundle.prep.candidates.size()}, {"checkpoint_info", bundle.info}};
}

namespace {

HttpReply reply(int status, const json& body) { return HttpReply{status, body.dump()}; }
HttpReply error(int status, const std::string& message) { return reply(status, json{{"error", message}}); }

std::vector<std::string> segments(const std::string& path) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    const auto next = path.find('/', pos);
    const std::string part = path.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (!part.empty()) out.push_back(part);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace

HttpReply handle_request(SessionManager& sessions, const std::string& method, const std::string& path,
                         const std::string& body) {
  try {
    const auto seg = segments(path.substr(0, path.find('?')));
    if (seg.size() < 2 || seg[0] != "api") return error(404, "no such endpoint: " + path);

    if (seg.size() == 2 && seg[1] == "meta") {
      if (method != "GET") return error(405, "use GET for /api/meta");
      return reply(200, meta_json(sessions.bundle()));
    }
    if (seg[1] != "session") return error(404, "no such endpoint: " + path);

    if (seg.size() == 2) {
      if (method != "POST") return error(405, "use POST to create a session");
      try {
        return reply(200, json{{"session_id", sessions.create()}});
      } catch (const ContractError& e) {
        return error(429, e.what());
      }
    }
    const std::string& id = seg[2];
    if (seg.size() == 3) {
      if (method != "DELETE") return error(405, "use DELETE to close a session");
      if (!sessions.remove(id)) return error(404, "unknown session " + id);
      return reply(200, json::object());
    }
    if (seg.size() != 4) return error(404, "no such endpoint: " + path);

    auto session = sessions.find(id);
    if (seg[3] == "state") {
      if (method != "GET") return error(405, "use GET for session state");
      if (!session) return error(404, "unknown session " + id);
      return reply(200, session->state_json(false));
    }
    if (seg[3] == "message") {
      if (method != "POST") return error(405, "use POST to send a message");
      if (!session) return error(404, "unknown session " + id);
      json req;
      try {
        req = json::parse(body);
      } catch (const json::exception&) {
        return error(400, "request body is not valid JSON");
      }
      if (!req.is_object() || !req.contains("text") || !req["text"].is_string()) {
        return error(400, "request body must be {\"text\": string}");
      }
      const std::string text = req["text"].get<std::string>();
      if (tokenize(text).empty()) return error(400, "text must not be empty");
      return reply(200, session->step(text).payload);
    }
    return error(404, "no such endpoint: " + path);
  } catch (const ContractError& e) {
    return error(400, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

HttpService::HttpService(SessionManager& sessions, std::optional<std::filesystem::path> static_dir)
    : sessions_(sessions), server_(std::make_unique<httplib::Server>()) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const HttpReply r = handle_request(sessions_, req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"}});
  server_->Get(R"(/api/.*)", handler);
  server_->Post(R"(/api/.*)", handler);
  server_->Delete(R"(/api/.*)", handler);
  server_->Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  if (static_dir) {
    if (!server_->set_mount_point("/", static_dir->string())) {
      throw ConfigError("static directory " + static_dir->string() + " does not exist");
    }
  }
}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void HttpService::listen(const std::string& host, int port) {
  port_ = port;
  if (!server_->listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace taskbot
