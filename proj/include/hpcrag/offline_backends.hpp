#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "hpcrag/gateway.hpp"

namespace hpcrag {

/// Deterministic bag-of-tokens embedding: each token is hashed with a seeded
/// FNV-1a into one of `dim` buckets, bucket counts are L2-normalized.
class HashEmbeddingBackend final : public EmbeddingBackend {
 public:
  static constexpr std::size_t kDefaultDim = 256;

  explicit HashEmbeddingBackend(std::uint64_t seed = 0, std::size_t dim = kDefaultDim);

  std::string model_id() const override;
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) const override;
  EmbeddingVector embed_one(std::string_view text) const;

  std::size_t bucket_of(std::string_view token) const noexcept;
  std::size_t dim() const noexcept { return dim_; }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

/// Offline stand-in for a cross-encoder: score = number of distinct tokens
/// shared by query and passage.
class TokenOverlapReranker final : public RerankBackend {
 public:
  std::string model_id() const override { return "offline-token-overlap"; }
  std::vector<double> score(std::string_view query, std::span<const std::string> passages) const override;
};

double token_overlap(std::string_view a, std::string_view b);

/// Replies from a fixed script. Entries are tried in declaration order and
/// the first match wins; a prompt no entry matches raises kScriptMiss.
///
/// The prompt a matcher sees is every message content joined with "\n".
class ScriptedChatBackend final : public ChatBackend {
 public:
  enum class Match { kContains, kEquals };

  struct Entry {
    Match match = Match::kContains;
    std::string pattern;
    std::string reply;
  };

  explicit ScriptedChatBackend(std::vector<Entry> script);

  /// JSON list of {"contains": "..."} or {"equals": "..."} objects with a
  /// "reply" field.
  static std::shared_ptr<ScriptedChatBackend> from_json(const nlohmann::json& script);
  static std::shared_ptr<ScriptedChatBackend> from_file(const std::filesystem::path& path);

  static std::string prompt_text(const ChatRequest& request);

  std::string model_id() const override { return "offline-scripted"; }
  std::string complete(const ChatRequest& request) const override;

  /// Requests seen so far, in arrival order.
  std::vector<ChatRequest> received() const;

 private:
  std::vector<Entry> script_;
  mutable std::mutex mu_;
  mutable std::vector<ChatRequest> received_;
};

}  // namespace hpcrag
