#include "hpcrag/http_backend.hpp"

#include <httplib.h>

#include <cstdlib>
#include <regex>
#include <thread>

#include "hpcrag/error.hpp"
#include "hpcrag/text.hpp"

namespace hpcrag {

ParsedUrl parse_endpoint_url(const std::string& url) {
  static const std::regex kUrl(R"(^(https?)://([A-Za-z0-9.\-_]+|\[[0-9A-Fa-f:]+\])(?::([0-9]{1,5}))?(/[^?#]*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, kUrl)) {
    throw Error(ErrorCode::kConfigError, "endpoint_url is not a valid http(s) URL: '" + url + "'");
  }
  ParsedUrl out;
  out.scheme = m[1].str();
  out.host = m[2].str();
  out.port = m[3].matched ? std::stoi(m[3].str()) : (out.scheme == "https" ? 443 : 80);
  if (out.port <= 0 || out.port > 65535) throw Error(ErrorCode::kConfigError, "endpoint_url port out of range");
  out.base_path = m[4].matched ? m[4].str() : "";
  while (!out.base_path.empty() && out.base_path.back() == '/') out.base_path.pop_back();
  return out;
}

HttpTransport::HttpTransport(BackendProfile profile, HttpOptions options)
    : profile_(std::move(profile)), options_(options), url_(parse_endpoint_url(profile_.endpoint_url)) {}

std::string HttpTransport::api_key() const {
  if (profile_.api_key_env_name.empty()) return {};
  const char* v = std::getenv(profile_.api_key_env_name.c_str());
  return v ? std::string(v) : std::string{};
}

nlohmann::json HttpTransport::post_json(const std::string& path, const nlohmann::json& body) const {
  const std::string key = api_key();
  const auto scrub = [&key](std::string text) {
    return key.empty() ? text : replace_all(std::move(text), key, "[REDACTED]");
  };

  httplib::Client client(url_.scheme + "://" + url_.host + ":" + std::to_string(url_.port));
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(options_.connect_timeout).count(),
                                (options_.connect_timeout.count() % 1000) * 1000);
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(options_.read_timeout).count(),
                          (options_.read_timeout.count() % 1000) * 1000);
  httplib::Headers headers;
  if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);

  const std::string full_path = url_.base_path + path;
  const std::string payload = body.dump();
  httplib::Result res;
  for (int attempt = 0; attempt < 2; ++attempt) {
    res = client.Post(full_path, headers, payload, "application/json");
    if (res) break;
    if (attempt == 0) std::this_thread::sleep_for(options_.retry_backoff);
  }
  if (!res) {
    throw Error(ErrorCode::kTransportError,
                scrub("POST " + full_path + " failed: " + httplib::to_string(res.error())));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorCode::kBackendError,
                scrub("POST " + full_path + " returned HTTP " + std::to_string(res->status) + ": " +
                      res->body.substr(0, 300)));
  }
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kBackendError, "POST " + full_path + " returned a non-JSON body");
  }
}

OpenAiEmbeddingBackend::OpenAiEmbeddingBackend(std::shared_ptr<const HttpTransport> transport)
    : transport_(std::move(transport)) {}

std::string OpenAiEmbeddingBackend::model_id() const { return transport_->profile().embed_model; }

std::vector<EmbeddingVector> OpenAiEmbeddingBackend::embed(std::span<const std::string> texts) const {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  const std::size_t batch = std::max<std::size_t>(1, transport_->options().embed_batch_size);
  for (std::size_t begin = 0; begin < texts.size(); begin += batch) {
    const auto chunk = texts.subspan(begin, std::min(batch, texts.size() - begin));
    nlohmann::json body = {{"model", model_id()}, {"input", std::vector<std::string>(chunk.begin(), chunk.end())}};
    const auto reply = transport_->post_json("/embeddings", body);
    try {
      const auto& data = reply.at("data");
      if (!data.is_array() || data.size() != chunk.size()) {
        throw Error(ErrorCode::kBackendError, "embedding response has the wrong number of items");
      }
      std::vector<EmbeddingVector> ordered(chunk.size());
      std::vector<bool> seen(chunk.size(), false);
      for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t idx = data[i].contains("index") ? data[i]["index"].get<std::size_t>() : i;
        if (idx >= chunk.size() || seen[idx]) {
          throw Error(ErrorCode::kBackendError, "embedding response has an invalid index");
        }
        seen[idx] = true;
        ordered[idx].values = data[i].at("embedding").get<std::vector<double>>();
      }
      for (auto& v : ordered) out.push_back(std::move(v));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kBackendError, std::string("malformed embedding response: ") + e.what());
    }
  }
  return out;
}

OpenAiRerankBackend::OpenAiRerankBackend(std::shared_ptr<const HttpTransport> transport)
    : transport_(std::move(transport)) {}

std::string OpenAiRerankBackend::model_id() const { return transport_->profile().rerank_model; }

std::vector<double> OpenAiRerankBackend::score(std::string_view query, std::span<const std::string> passages) const {
  nlohmann::json body = {{"model", model_id()},
                         {"query", std::string(query)},
                         {"passages", std::vector<std::string>(passages.begin(), passages.end())}};
  const auto reply = transport_->post_json("/rerank", body);
  try {
    return reply.at("scores").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBackendError, std::string("malformed rerank response: ") + e.what());
  }
}

OpenAiChatBackend::OpenAiChatBackend(std::shared_ptr<const HttpTransport> transport)
    : transport_(std::move(transport)) {}

std::string OpenAiChatBackend::model_id() const { return transport_->profile().chat_model; }

std::string OpenAiChatBackend::complete(const ChatRequest& request) const {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", role_name(m.role)}, {"content", m.content}});
  }
  nlohmann::json body = {{"model", request.model_id.empty() ? model_id() : request.model_id},
                         {"messages", std::move(messages)},
                         {"temperature", request.temperature},
                         {"max_tokens", request.max_output_tokens}};
  const auto reply = transport_->post_json("/chat/completions", body);
  try {
    const auto& content = reply.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw Error(ErrorCode::kBackendError, "chat response content is not text");
    return content.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBackendError, std::string("malformed chat response: ") + e.what());
  }
}

}  // namespace hpcrag
