#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace hpcrag {

class ModelGateway;

enum class ChunkKind { kDocumentation, kCommand };

std::string_view kind_name(ChunkKind kind) noexcept;
ChunkKind parse_kind(std::string_view name);

struct Document {
  std::string id;
  std::string source_uri;
  std::string text;
  ChunkKind kind = ChunkKind::kDocumentation;
};

struct Chunk {
  std::string id;
  std::string doc_id;
  std::size_t ordinal = 0;
  std::string text;
  ChunkKind kind = ChunkKind::kDocumentation;

  bool operator==(const Chunk&) const = default;
};

enum class Separator { kHeading, kBlankLine, kSentence, kCharacter };

/// Sizes are in Unicode code points.
struct ChunkingPolicy {
  std::size_t target_chars = 1500;
  std::size_t overlap_chars = 200;
  std::vector<Separator> split_order = {Separator::kHeading, Separator::kBlankLine, Separator::kSentence,
                                        Separator::kCharacter};

  void validate() const;
};

struct IngestWarning {
  std::string path;
  std::string reason;
};

struct IngestResult {
  std::vector<Document> documents;
  std::vector<IngestWarning> warnings;
};

/// Reads every .md and .txt file below `root` (recursively), ordered by
/// relative path. Files that cannot be read or are not valid UTF-8 are
/// reported in `warnings` and left out.
IngestResult ingest_directory(const std::filesystem::path& root, ChunkKind kind = ChunkKind::kDocumentation);

/// Splits a document into chunks of at most target_chars new code points,
/// each prefixed with up to overlap_chars code points of the text preceding
/// it. Split points are chosen by the separator hierarchy: markdown heading
/// starts, blank lines, sentence ends, then hard cuts.
///
/// Chunk ids are "<doc_id>#<ordinal>".
std::vector<Chunk> chunk_document(const Document& doc, const ChunkingPolicy& policy);

/// Same contract as chunk_document, but asks the chat model for split offsets
/// first (code point offsets as a JSON list). Any invalid proposal falls back
/// to deterministic splitting. `used_model` reports which path was taken.
std::vector<Chunk> chunk_document_with_model(const Document& doc, const ChunkingPolicy& policy,
                                             const ModelGateway& gateway, bool* used_model = nullptr);

/// Inverse of chunking: drops each chunk's overlap prefix and concatenates.
std::string reconstruct_text(const std::vector<Chunk>& doc_chunks, const ChunkingPolicy& policy);

inline constexpr int kCorpusSchemaVersion = 1;

/// {"schema_version": 1, "chunks": [{id, doc_id, ordinal, kind, text}]}
void save_corpus(const std::vector<Chunk>& chunks, const std::filesystem::path& path);
std::vector<Chunk> load_corpus(const std::filesystem::path& path);

}  // namespace hpcrag
