#include "hpcrag/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "hpcrag/error.hpp"

namespace hpcrag {

namespace fs = std::filesystem;

ChunkTable::ChunkTable(std::vector<Chunk> chunks) : chunks_(std::move(chunks)) {
  for (std::size_t i = 0; i < chunks_.size(); ++i) {
    if (!by_id_.emplace(chunks_[i].id, i).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate chunk id '" + chunks_[i].id + "'");
    }
  }
}

const Chunk* ChunkTable::find(std::string_view id) const {
  const auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &chunks_[it->second];
}

const Chunk& ChunkTable::at(std::string_view id) const {
  if (const Chunk* c = find(id)) return *c;
  throw Error(ErrorCode::kInvalidArgument, "unknown chunk id '" + std::string(id) + "'");
}

std::size_t ChunkTable::count(ChunkKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(chunks_.begin(), chunks_.end(), [kind](const Chunk& c) { return c.kind == kind; }));
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> normalized(std::span<const double> v) {
  const double norm = std::sqrt(dot(v, v));
  if (!(norm > 0.0)) throw Error(ErrorCode::kZeroVector, "cannot normalize a zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

bool ranks_before(double sa, const std::string& ida, double sb, const std::string& idb) {
  if (sa != sb) return sa > sb;
  return ida < idb;
}

}  // namespace

void VectorIndex::add(std::string chunk_id, ChunkKind kind, const EmbeddingVector& vector) {
  if (dim_ == 0) dim_ = vector.dim();
  if (vector.dim() != dim_) {
    throw Error(ErrorCode::kDimensionMismatch, "vector for '" + chunk_id + "' has dim " +
                                                   std::to_string(vector.dim()) + ", index dim is " +
                                                   std::to_string(dim_));
  }
  if (by_id_.count(chunk_id)) throw Error(ErrorCode::kDuplicateId, "duplicate chunk id '" + chunk_id + "'");
  add_unit(std::move(chunk_id), kind, normalized(vector.values));
}

void VectorIndex::add_unit(std::string chunk_id, ChunkKind kind, std::vector<double> unit_vector) {
  if (dim_ == 0) dim_ = unit_vector.size();
  if (unit_vector.size() != dim_) {
    throw Error(ErrorCode::kDimensionMismatch, "vector for '" + chunk_id + "' has the wrong dim");
  }
  if (std::abs(std::sqrt(dot(unit_vector, unit_vector)) - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "vector for '" + chunk_id + "' is not unit length");
  }
  if (by_id_.count(chunk_id)) throw Error(ErrorCode::kDuplicateId, "duplicate chunk id '" + chunk_id + "'");
  by_id_.emplace(chunk_id, ids_.size());
  ids_.push_back(std::move(chunk_id));
  kinds_.push_back(kind);
  values_.insert(values_.end(), unit_vector.begin(), unit_vector.end());
}

std::span<const double> VectorIndex::vector(std::size_t i) const {
  return std::span<const double>(values_).subspan(i * dim_, dim_);
}

bool VectorIndex::contains(std::string_view chunk_id) const { return by_id_.count(std::string(chunk_id)) > 0; }

VectorIndex VectorIndex::without_kind(ChunkKind kind) const {
  VectorIndex out(dim_);
  for (std::size_t i = 0; i < size(); ++i) {
    if (kinds_[i] == kind) continue;
    out.by_id_.emplace(ids_[i], out.ids_.size());
    out.ids_.push_back(ids_[i]);
    out.kinds_.push_back(kinds_[i]);
    const auto v = vector(i);
    out.values_.insert(out.values_.end(), v.begin(), v.end());
  }
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "cosine of vectors with dims " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorCode::kZeroVector, "cosine of a zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) { return cosine(a.values, b.values); }

VectorIndex build_index(std::span<const Chunk> chunks, const ModelGateway& gateway) {
  if (chunks.empty()) throw Error(ErrorCode::kEmptyInput, "cannot build an index over zero chunks");
  std::vector<std::string> texts;
  texts.reserve(chunks.size());
  for (const auto& c : chunks) texts.push_back(c.text);
  const auto vectors = gateway.embed_texts(texts);
  VectorIndex index(vectors.front().dim());
  for (std::size_t i = 0; i < chunks.size(); ++i) index.add(chunks[i].id, chunks[i].kind, vectors[i]);
  return index;
}

std::vector<ScoredChunk> retrieve_topk(const EmbeddingVector& query, const VectorIndex& index, std::size_t k,
                                       const RetrieveOptions& options) {
  if (index.empty()) throw Error(ErrorCode::kEmptyInput, "index is empty");
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be positive");
  if (query.dim() != index.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "query dim " + std::to_string(query.dim()) + " != index dim " +
                                                   std::to_string(index.dim()));
  }
  const auto q = normalized(query.values);
  std::vector<double> scores(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) scores[i] = std::clamp(dot(index.vector(i), q), -1.0, 1.0);

  std::vector<std::size_t> order(index.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto before = [&](std::size_t a, std::size_t b) {
    return ranks_before(scores[a], index.chunk_id(a), scores[b], index.chunk_id(b));
  };
  const std::size_t take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), before);
  order.resize(take);

  if (options.reserve_command_slot) {
    const bool has_command = std::any_of(order.begin(), order.end(),
                                         [&](std::size_t i) { return index.kind(i) == ChunkKind::kCommand; });
    if (!has_command) {
      std::optional<std::size_t> best;
      for (std::size_t i = 0; i < index.size(); ++i) {
        if (index.kind(i) == ChunkKind::kCommand && (!best || before(i, *best))) best = i;
      }
      if (best) order.back() = *best;
    }
  }

  std::vector<ScoredChunk> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back({index.chunk_id(i), index.kind(i), scores[i], std::nullopt});
  return out;
}

std::vector<ScoredChunk> retrieve_topk(const std::string& query, const VectorIndex& index, std::size_t k,
                                       const ModelGateway& gateway, const RetrieveOptions& options) {
  if (index.empty()) throw Error(ErrorCode::kEmptyInput, "index is empty");
  return retrieve_topk(gateway.embed_text(query), index, k, options);
}

std::vector<ScoredChunk> rerank_candidates(const std::string& query, std::span<const ScoredChunk> candidates,
                                           std::size_t k_prime, const ModelGateway& gateway,
                                           const ChunkTable& chunks) {
  if (candidates.empty()) throw Error(ErrorCode::kEmptyInput, "no candidates to rerank");
  if (k_prime == 0) throw Error(ErrorCode::kInvalidArgument, "k_prime must be positive");
  std::vector<std::string> passages;
  passages.reserve(candidates.size());
  for (const auto& c : candidates) passages.push_back(chunks.at(c.chunk_id).text);
  const auto scores = gateway.rerank_passages(query, passages);

  std::vector<ScoredChunk> out(candidates.begin(), candidates.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rerank_score = scores[i];
  std::stable_sort(out.begin(), out.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
    return ranks_before(*a.rerank_score, a.chunk_id, *b.rerank_score, b.chunk_id);
  });
  out.resize(std::min(k_prime, out.size()));
  return out;
}

void save_index(const VectorIndex& index, const fs::path& path) {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto v = index.vector(i);
    entries.push_back({{"chunk_id", index.chunk_id(i)}, {"vector", std::vector<double>(v.begin(), v.end())}});
  }
  const nlohmann::json doc = {
      {"schema_version", kIndexSchemaVersion}, {"dim", index.dim()}, {"entries", std::move(entries)}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write index file " + path.string());
  out << doc.dump() << '\n';
}

VectorIndex load_index(const fs::path& path, const ChunkTable& chunks) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read index file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIoError, "index file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || doc.value("schema_version", -1) != kIndexSchemaVersion) {
    throw Error(ErrorCode::kSchemaVersionMismatch, "index file " + path.string() + " has an unsupported schema_version");
  }
  try {
    VectorIndex index(doc.at("dim").get<std::size_t>());
    for (const auto& e : doc.at("entries")) {
      const auto id = e.at("chunk_id").get<std::string>();
      const Chunk* chunk = chunks.find(id);
      if (!chunk) throw Error(ErrorCode::kParseError, "index entry '" + id + "' is not in the corpus");
      index.add_unit(id, chunk->kind, e.at("vector").get<std::vector<double>>());
    }
    return index;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIoError, "index file " + path.string() + " is malformed: " + e.what());
  }
}

}  // namespace hpcrag
