#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hpcrag/corpus.hpp"
#include "hpcrag/gateway.hpp"

namespace hpcrag {

/// Chunks addressable by id. Immutable once built.
class ChunkTable {
 public:
  ChunkTable() = default;
  explicit ChunkTable(std::vector<Chunk> chunks);

  const Chunk* find(std::string_view id) const;
  const Chunk& at(std::string_view id) const;
  const std::vector<Chunk>& chunks() const noexcept { return chunks_; }
  std::size_t size() const noexcept { return chunks_.size(); }
  std::size_t count(ChunkKind kind) const;

 private:
  std::vector<Chunk> chunks_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Exact (brute-force) cosine index. Vectors are L2-normalized on insert and
/// stored row-major in one contiguous buffer.
class VectorIndex {
 public:
  explicit VectorIndex(std::size_t dim = 0) : dim_(dim) {}

  void add(std::string chunk_id, ChunkKind kind, const EmbeddingVector& vector);
  /// For vectors already stored normalized (index files); checks the norm is 1
  /// within 1e-9 and keeps the values bit-for-bit.
  void add_unit(std::string chunk_id, ChunkKind kind, std::vector<double> unit_vector);

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::string& chunk_id(std::size_t i) const { return ids_[i]; }
  ChunkKind kind(std::size_t i) const { return kinds_[i]; }
  std::span<const double> vector(std::size_t i) const;
  bool contains(std::string_view chunk_id) const;

  /// Copy of this index without entries of the given kind.
  VectorIndex without_kind(ChunkKind kind) const;

 private:
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<ChunkKind> kinds_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

struct ScoredChunk {
  std::string chunk_id;
  ChunkKind kind = ChunkKind::kDocumentation;
  double bi_score = 0.0;
  std::optional<double> rerank_score;

  bool operator==(const ScoredChunk&) const = default;
};

double cosine(std::span<const double> a, std::span<const double> b);
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

/// One embedding call for all chunks. Command chunks are embedded by their
/// text, which is the command description.
VectorIndex build_index(std::span<const Chunk> chunks, const ModelGateway& gateway);

struct RetrieveOptions {
  /// When set and no command chunk makes the top k, the best-scoring command
  /// chunk replaces the last slot.
  bool reserve_command_slot = false;
};

/// Top-k entries by cosine with the query, ordered by score descending and
/// chunk id ascending.
std::vector<ScoredChunk> retrieve_topk(const std::string& query, const VectorIndex& index, std::size_t k,
                                       const ModelGateway& gateway, const RetrieveOptions& options = {});

/// Same ordering rule, with an already-embedded query.
std::vector<ScoredChunk> retrieve_topk(const EmbeddingVector& query, const VectorIndex& index, std::size_t k,
                                       const RetrieveOptions& options = {});

/// Scores candidates with the reranker and keeps the best k_prime, ordered by
/// rerank score descending then chunk id ascending. bi_score is carried over.
std::vector<ScoredChunk> rerank_candidates(const std::string& query, std::span<const ScoredChunk> candidates,
                                           std::size_t k_prime, const ModelGateway& gateway,
                                           const ChunkTable& chunks);

inline constexpr int kIndexSchemaVersion = 1;

/// {"schema_version": 1, "dim": D, "entries": [{"chunk_id", "vector": [...]}]}
void save_index(const VectorIndex& index, const std::filesystem::path& path);
/// Entry kinds are restored from `chunks`; every entry must name a known chunk.
VectorIndex load_index(const std::filesystem::path& path, const ChunkTable& chunks);

}  // namespace hpcrag
