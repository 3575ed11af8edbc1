#pragma once

#include <chrono>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "hpcrag/gateway.hpp"

namespace hpcrag {

struct ParsedUrl {
  std::string scheme;
  std::string host;
  int port = 0;
  std::string base_path;  // without trailing slash
};

/// Throws kConfigError unless `url` is http(s)://host[:port][/path].
ParsedUrl parse_endpoint_url(const std::string& url);

struct HttpOptions {
  std::chrono::milliseconds connect_timeout{10000};
  std::chrono::milliseconds read_timeout{120000};
  /// Transport failures are retried once after this delay; HTTP error
  /// statuses are never retried.
  std::chrono::milliseconds retry_backoff{1000};
  std::size_t embed_batch_size = 64;
};

/// JSON-over-HTTP POST with the retry policy above. The API key is read from
/// the environment on every call and scrubbed from any error text.
class HttpTransport {
 public:
  HttpTransport(BackendProfile profile, HttpOptions options = {});

  nlohmann::json post_json(const std::string& path, const nlohmann::json& body) const;
  const BackendProfile& profile() const noexcept { return profile_; }
  const HttpOptions& options() const noexcept { return options_; }

 private:
  std::string api_key() const;

  BackendProfile profile_;
  HttpOptions options_;
  ParsedUrl url_;
};

/// POST {base}/embeddings  {"model", "input": [..]} -> {"data": [{"index", "embedding"}]}
class OpenAiEmbeddingBackend final : public EmbeddingBackend {
 public:
  explicit OpenAiEmbeddingBackend(std::shared_ptr<const HttpTransport> transport);
  std::string model_id() const override;
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) const override;

 private:
  std::shared_ptr<const HttpTransport> transport_;
};

/// POST {base}/rerank  {"model", "query", "passages": [..]} -> {"scores": [..]}
class OpenAiRerankBackend final : public RerankBackend {
 public:
  explicit OpenAiRerankBackend(std::shared_ptr<const HttpTransport> transport);
  std::string model_id() const override;
  std::vector<double> score(std::string_view query, std::span<const std::string> passages) const override;

 private:
  std::shared_ptr<const HttpTransport> transport_;
};

/// POST {base}/chat/completions  {"model", "messages", "temperature", "max_tokens"}
class OpenAiChatBackend final : public ChatBackend {
 public:
  explicit OpenAiChatBackend(std::shared_ptr<const HttpTransport> transport);
  std::string model_id() const override;
  std::string complete(const ChatRequest& request) const override;

 private:
  std::shared_ptr<const HttpTransport> transport_;
};

}  // namespace hpcrag
