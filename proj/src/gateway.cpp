#include "hpcrag/gateway.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "hpcrag/error.hpp"
#include "hpcrag/text.hpp"

namespace hpcrag {

std::string_view role_name(Role role) noexcept {
  switch (role) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view name) {
  if (name == "system") return Role::kSystem;
  if (name == "user") return Role::kUser;
  if (name == "assistant") return Role::kAssistant;
  throw Error(ErrorCode::kInvalidArgument, "unknown chat role '" + std::string(name) + "'");
}

void ChatRequest::validate() const {
  if (messages.empty()) throw Error(ErrorCode::kInvalidArgument, "chat request has no messages");
  for (const auto& m : messages) {
    if (m.content.empty()) throw Error(ErrorCode::kInvalidArgument, "chat message content is empty");
  }
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::kInvalidArgument, "temperature must be a finite value >= 0");
  }
  if (max_output_tokens <= 0) throw Error(ErrorCode::kInvalidArgument, "max_output_tokens must be positive");
}

AuditLog::AuditLog(std::filesystem::path path, bool keep_in_memory)
    : path_(std::move(path)), keep_in_memory_(keep_in_memory || path_.empty()) {
  if (!path_.empty() && path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
}

void AuditLog::append(const nlohmann::json& record) {
  const std::string line = record.dump() + "\n";
  std::lock_guard lock(mu_);
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error(ErrorCode::kIoError, "cannot append to audit log " + path_.string());
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
  }
  if (keep_in_memory_) memory_.push_back(record);
}

std::vector<nlohmann::json> AuditLog::records() const {
  std::lock_guard lock(mu_);
  if (keep_in_memory_) return memory_;
  std::vector<nlohmann::json> out;
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

std::size_t estimate_tokens(std::string_view text, double chars_per_token) {
  const auto chars = static_cast<double>(code_point_count(text));
  return static_cast<std::size_t>(std::ceil(chars / chars_per_token));
}

namespace {

class SlotGuard {
 public:
  explicit SlotGuard(std::counting_semaphore<>& sem) : sem_(sem) { sem_.acquire(); }
  ~SlotGuard() { sem_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<>& sem_;
};

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

std::string joined(std::span<const std::string> parts) {
  std::string out;
  for (const auto& p : parts) {
    out += p;
    out.push_back('\x1f');
  }
  return out;
}

void require_non_empty_texts(std::span<const std::string> texts, std::string_view what) {
  if (texts.empty()) throw Error(ErrorCode::kEmptyInput, std::string(what) + " list is empty");
  for (const auto& t : texts) {
    if (trim(t).empty()) throw Error(ErrorCode::kEmptyInput, std::string(what) + " contains a blank entry");
  }
}

}  // namespace

ModelGateway::ModelGateway(std::shared_ptr<const EmbeddingBackend> embedder,
                           std::shared_ptr<const RerankBackend> reranker, std::shared_ptr<const ChatBackend> chat,
                           GatewayOptions options, std::shared_ptr<AuditLog> audit)
    : embedder_(std::move(embedder)),
      reranker_(std::move(reranker)),
      chat_(std::move(chat)),
      options_(options),
      audit_(std::move(audit)) {
  if (options_.max_in_flight <= 0) throw Error(ErrorCode::kConfigError, "max_in_flight must be positive");
  if (!(options_.chars_per_token > 0.0)) throw Error(ErrorCode::kConfigError, "chars_per_token must be positive");
  embed_slots_ = std::make_unique<std::counting_semaphore<>>(options_.max_in_flight);
  rerank_slots_ = std::make_unique<std::counting_semaphore<>>(options_.max_in_flight);
  chat_slots_ = std::make_unique<std::counting_semaphore<>>(options_.max_in_flight);
}

std::vector<EmbeddingVector> ModelGateway::embed_texts(std::span<const std::string> texts) const {
  if (!embedder_) throw Error(ErrorCode::kConfigError, "no embedding backend configured");
  require_non_empty_texts(texts, "embedding input");
  const auto start = std::chrono::steady_clock::now();
  std::vector<EmbeddingVector> out;
  {
    SlotGuard slot(*embed_slots_);
    out = embedder_->embed(texts);
  }
  if (out.size() != texts.size()) {
    throw Error(ErrorCode::kBackendError, "embedding backend returned " + std::to_string(out.size()) +
                                              " vectors for " + std::to_string(texts.size()) + " inputs");
  }
  const std::size_t dim = out.front().dim();
  std::string digest_input;
  for (const auto& v : out) {
    if (v.dim() == 0 || v.dim() != dim) {
      throw Error(ErrorCode::kDimensionMismatch, "embedding backend returned inconsistent dimensions");
    }
    for (double x : v.values) {
      if (!std::isfinite(x)) throw Error(ErrorCode::kBackendError, "embedding contains non-finite values");
    }
  }
  if (audit_) {
    nlohmann::json vectors = nlohmann::json::array();
    for (const auto& v : out) vectors.push_back(v.values);
    audit("embedding", embedder_->model_id(), joined(texts), vectors.dump(), elapsed_ms(start),
          {{"count", texts.size()}, {"dim", dim}});
  }
  return out;
}

EmbeddingVector ModelGateway::embed_text(const std::string& text) const {
  return embed_texts(std::span<const std::string>(&text, 1)).front();
}

std::vector<double> ModelGateway::rerank_passages(std::string_view query, std::span<const std::string> passages) const {
  if (!reranker_) throw Error(ErrorCode::kConfigError, "no rerank backend configured");
  if (passages.empty()) throw Error(ErrorCode::kEmptyInput, "rerank passages list is empty");
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> scores;
  {
    SlotGuard slot(*rerank_slots_);
    scores = reranker_->score(query, passages);
  }
  if (scores.size() != passages.size()) {
    throw Error(ErrorCode::kBackendError, "rerank backend returned " + std::to_string(scores.size()) +
                                              " scores for " + std::to_string(passages.size()) + " passages");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::kBackendError, "rerank score is not finite");
  }
  if (audit_) {
    audit("rerank", reranker_->model_id(), std::string(query) + '\x1e' + joined(passages),
          nlohmann::json(scores).dump(), elapsed_ms(start), {{"count", passages.size()}});
  }
  return scores;
}

std::string ModelGateway::complete_chat(ChatRequest request) const {
  if (!chat_) throw Error(ErrorCode::kConfigError, "no chat backend configured");
  request.validate();
  if (request.model_id.empty()) request.model_id = chat_->model_id();
  std::size_t tokens = 0;
  for (const auto& m : request.messages) tokens += estimate_tokens(m.content, options_.chars_per_token);
  if (tokens > options_.context_token_budget) {
    throw Error(ErrorCode::kContextOverflow, "prompt needs an estimated " + std::to_string(tokens) +
                                                 " tokens, budget is " +
                                                 std::to_string(options_.context_token_budget));
  }
  const auto start = std::chrono::steady_clock::now();
  std::string reply;
  {
    SlotGuard slot(*chat_slots_);
    reply = chat_->complete(request);
  }
  if (audit_) {
    std::string input;
    for (const auto& m : request.messages) {
      input += role_name(m.role);
      input += ':';
      input += m.content;
      input.push_back('\x1e');
    }
    audit("chat", request.model_id, input, reply, elapsed_ms(start),
          {{"temperature", request.temperature},
           {"max_output_tokens", request.max_output_tokens},
           {"estimated_input_tokens", tokens}});
  }
  return reply;
}

void ModelGateway::audit(std::string_view capability, const std::string& model_id, const std::string& input,
                         const std::string& output, double latency_ms, nlohmann::json extra) const {
  nlohmann::json record = {
      {"timestamp", iso_timestamp()},
      {"capability", capability},
      {"model_id", model_id},
      {"input_digest", sha256_hex(input)},
      {"output_digest", sha256_hex(output)},
      {"latency_ms", std::round(latency_ms * 1000.0) / 1000.0},
  };
  if (!extra.is_null()) record["params"] = std::move(extra);
  audit_->append(record);
}

}  // namespace hpcrag
