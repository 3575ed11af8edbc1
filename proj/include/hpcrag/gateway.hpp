#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace hpcrag {

enum class Role { kSystem, kUser, kAssistant };

std::string_view role_name(Role role) noexcept;
Role parse_role(std::string_view name);

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_output_tokens = 4096;
  std::string model_id;

  /// Throws kInvalidArgument when messages are empty, any content is empty,
  /// temperature is negative or max_output_tokens is not positive.
  void validate() const;
};

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

/// Connection settings for an OpenAI-compatible endpoint. The API key itself
/// is never stored; only the name of the environment variable holding it.
struct BackendProfile {
  std::string endpoint_url;
  std::string api_key_env_name;
  std::string chat_model;
  std::string embed_model;
  std::string rerank_model;
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::string model_id() const = 0;
  virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) const = 0;
};

/// Cross-encoder style scorer: one score per passage, higher is more relevant.
class RerankBackend {
 public:
  virtual ~RerankBackend() = default;
  virtual std::string model_id() const = 0;
  virtual std::vector<double> score(std::string_view query, std::span<const std::string> passages) const = 0;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string model_id() const = 0;
  virtual std::string complete(const ChatRequest& request) const = 0;
};

/// Append-only JSON-lines sink. Each record is written with a single append
/// under a lock, so concurrent writers never interleave within a line.
class AuditLog {
 public:
  /// File-backed log; an empty path keeps records in memory only.
  explicit AuditLog(std::filesystem::path path = {}, bool keep_in_memory = false);

  void append(const nlohmann::json& record);
  std::vector<nlohmann::json> records() const;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  bool keep_in_memory_;
  mutable std::mutex mu_;
  std::vector<nlohmann::json> memory_;
};

struct GatewayOptions {
  std::size_t context_token_budget = 128000;
  /// Token estimate = ceil(code points / chars_per_token).
  double chars_per_token = 4.0;
  std::ptrdiff_t max_in_flight = 4;
};

std::size_t estimate_tokens(std::string_view text, double chars_per_token);

/// Uniform front for the three model capabilities. Validates inputs and
/// outputs, bounds in-flight calls per capability and writes one audit record
/// per call.
class ModelGateway {
 public:
  ModelGateway(std::shared_ptr<const EmbeddingBackend> embedder, std::shared_ptr<const RerankBackend> reranker,
               std::shared_ptr<const ChatBackend> chat, GatewayOptions options = {},
               std::shared_ptr<AuditLog> audit = nullptr);

  std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts) const;
  EmbeddingVector embed_text(const std::string& text) const;
  std::vector<double> rerank_passages(std::string_view query, std::span<const std::string> passages) const;
  std::string complete_chat(ChatRequest request) const;

  const GatewayOptions& options() const noexcept { return options_; }
  bool has_chat() const noexcept { return chat_ != nullptr; }

 private:
  void audit(std::string_view capability, const std::string& model_id, const std::string& input,
             const std::string& output, double latency_ms, nlohmann::json extra) const;

  std::shared_ptr<const EmbeddingBackend> embedder_;
  std::shared_ptr<const RerankBackend> reranker_;
  std::shared_ptr<const ChatBackend> chat_;
  GatewayOptions options_;
  std::shared_ptr<AuditLog> audit_;
  std::unique_ptr<std::counting_semaphore<>> embed_slots_;
  std::unique_ptr<std::counting_semaphore<>> rerank_slots_;
  std::unique_ptr<std::counting_semaphore<>> chat_slots_;
};

}  // namespace hpcrag
