#include "hpcrag/service.hpp"

#include <chrono>
#include <cstdio>
#include <random>

#include <httplib.h>

#include "hpcrag/error.hpp"
#include "hpcrag/text.hpp"

namespace hpcrag {

namespace {

HttpReply error_reply(int status, std::string_view code, const std::string& message) {
  return {status, {{"error", code}, {"message", message}}};
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kTransportError:
      return 503;
    case ErrorCode::kBackendError:
      return 502;
    case ErrorCode::kEmptyInput:
      return 422;
    case ErrorCode::kContextOverflow:
      return 413;
    default:
      return 500;
  }
}

}  // namespace

ChatService::ChatService(std::shared_ptr<const RagEngine> engine, PipelineConfig config, nlohmann::json public_config,
                         std::size_t session_turns)
    : engine_(std::move(engine)),
      config_(std::move(config)),
      public_config_(std::move(public_config)),
      session_turns_(session_turns),
      id_state_(std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32)),
      server_(std::make_unique<httplib::Server>()) {
  config_.validate();
  mount();
}

ChatService::~ChatService() { stop(); }

std::string ChatService::new_session_id() {
  std::lock_guard lock(sessions_mu_);
  std::uint64_t z = (id_state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  char buf[24];
  std::snprintf(buf, sizeof buf, "s-%016llx", static_cast<unsigned long long>(z));
  return buf;
}

std::shared_ptr<ChatService::Session> ChatService::session(const std::string& id) {
  std::lock_guard lock(sessions_mu_);
  auto& s = sessions_[id];
  if (!s) s = std::make_shared<Session>();
  return s;
}

std::vector<ChatMessage> ChatService::transcript(const std::string& session_id) const {
  std::shared_ptr<Session> s;
  {
    std::lock_guard lock(sessions_mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) return {};
    s = it->second;
  }
  std::lock_guard lock(s->mu);
  return {s->messages.begin(), s->messages.end()};
}

HttpReply ChatService::handle_chat(const std::string& body) {
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    return error_reply(400, "BadRequest", "request body is not valid JSON");
  }
  if (!req.is_object() || !req.contains("message") || !req["message"].is_string()) {
    return error_reply(400, "BadRequest", "expected an object with a string 'message'");
  }
  if (req.contains("session_id") && !req["session_id"].is_string() && !req["session_id"].is_null()) {
    return error_reply(400, "BadRequest", "'session_id' must be a string");
  }
  const std::string message = req["message"].get<std::string>();
  if (trim(message).empty()) return error_reply(422, "EmptyInput", "message is empty");

  std::string sid = req.contains("session_id") && req["session_id"].is_string()
                        ? req["session_id"].get<std::string>()
                        : std::string();
  if (sid.empty()) sid = new_session_id();
  auto s = session(sid);

  std::lock_guard lock(s->mu);
  const std::vector<ChatMessage> history(s->messages.begin(), s->messages.end());
  AnswerBundle bundle;
  try {
    bundle = engine_->answer_query(message, config_, history);
  } catch (const Error& e) {
    return error_reply(status_for(e.code()), error_code_name(e.code()), e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "InternalError", e.what());
  }

  s->messages.push_back({Role::kUser, message});
  s->messages.push_back({Role::kAssistant, bundle.answer});
  while (s->messages.size() > 2 * session_turns_) s->messages.pop_front();

  nlohmann::json contexts = nlohmann::json::array();
  for (const auto& c : bundle.contexts) {
    contexts.push_back({{"chunk_id", c.chunk_id},
                        {"kind", kind_name(c.kind)},
                        {"provenance", provenance_name(c.provenance)},
                        {"text", c.text}});
  }
  return {200,
          {{"answer", bundle.answer},
           {"contexts", contexts},
           {"commands_executed", bundle.commands_executed},
           {"session_id", sid}}};
}

HttpReply ChatService::handle_health() const {
  return {200,
          {{"status", "ok"},
           {"corpus_chunks", engine_->chunks().size()},
           {"registry_size", engine_->registry().size()}}};
}

HttpReply ChatService::handle_config() const { return {200, public_config_}; }

void ChatService::mount() {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server_->Post("/api/chat", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_chat(req.body));
  });
  server_->Get("/api/health", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_health());
  });
  server_->Get("/api/config", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_config());
  });
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server_->Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

int ChatService::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool ChatService::bind(const std::string& host, int port) { return server_->bind_to_port(host, port); }

bool ChatService::listen_after_bind() { return server_->listen_after_bind(); }

void ChatService::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

void ChatService::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace hpcrag
