#pragma once

#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "hpcrag/pipeline.hpp"

namespace httplib {
class Server;
}

namespace hpcrag {

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

/// HTTP front for the chat UI:
///   POST /api/chat    {session_id?, message} -> {answer, contexts, commands_executed, session_id}
///   GET  /api/health  -> {status, corpus_chunks, registry_size}
///   GET  /api/config  -> sanitized configuration
/// Session transcripts live in memory only and keep the last `session_turns`
/// exchanges; requests on the same session are serialized.
class ChatService {
 public:
  ChatService(std::shared_ptr<const RagEngine> engine, PipelineConfig config, nlohmann::json public_config,
              std::size_t session_turns = 10);
  ~ChatService();

  ChatService(const ChatService&) = delete;
  ChatService& operator=(const ChatService&) = delete;

  HttpReply handle_chat(const std::string& body);
  HttpReply handle_health() const;
  HttpReply handle_config() const;

  /// Transcript snapshot, empty for unknown sessions.
  std::vector<ChatMessage> transcript(const std::string& session_id) const;

  /// Binds to an ephemeral port and returns it (or -1).
  int bind_any_port(const std::string& host);
  bool bind(const std::string& host, int port);
  /// Blocks until stop().
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Session {
    std::mutex mu;
    std::deque<ChatMessage> messages;
  };

  std::shared_ptr<Session> session(const std::string& id);
  std::string new_session_id();
  void mount();

  std::shared_ptr<const RagEngine> engine_;
  PipelineConfig config_;
  nlohmann::json public_config_;
  std::size_t session_turns_;
  mutable std::mutex sessions_mu_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t id_state_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace hpcrag
