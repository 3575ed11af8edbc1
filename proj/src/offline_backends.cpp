#include "hpcrag/offline_backends.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "hpcrag/error.hpp"
#include "hpcrag/text.hpp"

namespace hpcrag {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

HashEmbeddingBackend::HashEmbeddingBackend(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
  if (dim_ == 0) throw Error(ErrorCode::kConfigError, "embedding dim must be positive");
}

std::string HashEmbeddingBackend::model_id() const {
  return "offline-hash-" + std::to_string(dim_) + "-seed" + std::to_string(seed_);
}

std::size_t HashEmbeddingBackend::bucket_of(std::string_view token) const noexcept {
  std::uint64_t h = kFnvOffset ^ mix(seed_);
  for (unsigned char c : token) {
    h ^= c;
    h *= kFnvPrime;
  }
  return static_cast<std::size_t>(mix(h) % dim_);
}

EmbeddingVector HashEmbeddingBackend::embed_one(std::string_view text) const {
  auto tokens = tokenize(text);
  // Text made only of punctuation still needs a non-zero vector.
  if (tokens.empty()) tokens.emplace_back(trim(text));
  EmbeddingVector v;
  v.values.assign(dim_, 0.0);
  for (const auto& tok : tokens) v.values[bucket_of(tok)] += 1.0;
  double norm2 = 0.0;
  for (double x : v.values) norm2 += x * x;
  const double norm = std::sqrt(norm2);
  for (double& x : v.values) x /= norm;
  return v;
}

std::vector<EmbeddingVector> HashEmbeddingBackend::embed(std::span<const std::string> texts) const {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t));
  return out;
}

double token_overlap(std::string_view a, std::string_view b) {
  const auto ta = tokenize(a);
  const auto tb = tokenize(b);
  const std::set<std::string> sa(ta.begin(), ta.end());
  const std::set<std::string> sb(tb.begin(), tb.end());
  std::size_t shared = 0;
  for (const auto& t : sa) shared += sb.count(t);
  return static_cast<double>(shared);
}

std::vector<double> TokenOverlapReranker::score(std::string_view query, std::span<const std::string> passages) const {
  std::vector<double> out;
  out.reserve(passages.size());
  for (const auto& p : passages) out.push_back(token_overlap(query, p));
  return out;
}

ScriptedChatBackend::ScriptedChatBackend(std::vector<Entry> script) : script_(std::move(script)) {
  for (const auto& e : script_) {
    if (e.pattern.empty()) throw Error(ErrorCode::kConfigError, "scripted chat entry has an empty matcher");
  }
}

std::shared_ptr<ScriptedChatBackend> ScriptedChatBackend::from_json(const nlohmann::json& script) {
  if (!script.is_array()) throw Error(ErrorCode::kParseError, "chat script must be a JSON list");
  std::vector<Entry> entries;
  for (const auto& item : script) {
    if (!item.is_object() || !item.contains("reply") || !item["reply"].is_string()) {
      throw Error(ErrorCode::kParseError, "chat script entry needs a string 'reply'");
    }
    Entry e;
    e.reply = item["reply"].get<std::string>();
    if (item.contains("contains")) {
      e.match = Match::kContains;
      e.pattern = item["contains"].get<std::string>();
    } else if (item.contains("equals")) {
      e.match = Match::kEquals;
      e.pattern = item["equals"].get<std::string>();
    } else {
      throw Error(ErrorCode::kParseError, "chat script entry needs 'contains' or 'equals'");
    }
    entries.push_back(std::move(e));
  }
  return std::make_shared<ScriptedChatBackend>(std::move(entries));
}

std::shared_ptr<ScriptedChatBackend> ScriptedChatBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kPathNotFound, "chat script not found: " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, "chat script " + path.string() + ": " + e.what());
  }
}

std::string ScriptedChatBackend::prompt_text(const ChatRequest& request) {
  std::string out;
  for (std::size_t i = 0; i < request.messages.size(); ++i) {
    if (i > 0) out.push_back('\n');
    out += request.messages[i].content;
  }
  return out;
}

std::string ScriptedChatBackend::complete(const ChatRequest& request) const {
  {
    std::lock_guard lock(mu_);
    received_.push_back(request);
  }
  const std::string prompt = prompt_text(request);
  for (const auto& e : script_) {
    const bool hit = e.match == Match::kEquals ? prompt == e.pattern : prompt.find(e.pattern) != std::string::npos;
    if (hit) return e.reply;
  }
  throw Error(ErrorCode::kScriptMiss, "no script entry matches the prompt (digest " + sha256_hex(prompt).substr(0, 12) + ")");
}

std::vector<ChatRequest> ScriptedChatBackend::received() const {
  std::lock_guard lock(mu_);
  return received_;
}

}  // namespace hpcrag
