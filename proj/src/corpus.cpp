#include "hpcrag/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "hpcrag/error.hpp"
#include "hpcrag/gateway.hpp"
#include "hpcrag/text.hpp"

namespace hpcrag {

namespace fs = std::filesystem;

std::string_view kind_name(ChunkKind kind) noexcept {
  return kind == ChunkKind::kCommand ? "command" : "documentation";
}

ChunkKind parse_kind(std::string_view name) {
  if (name == "documentation") return ChunkKind::kDocumentation;
  if (name == "command") return ChunkKind::kCommand;
  throw Error(ErrorCode::kParseError, "unknown chunk kind '" + std::string(name) + "'");
}

void ChunkingPolicy::validate() const {
  if (target_chars == 0) throw Error(ErrorCode::kConfigError, "chunking target_chars must be positive");
  if (overlap_chars >= target_chars) {
    throw Error(ErrorCode::kConfigError, "chunking overlap_chars must be smaller than target_chars");
  }
  if (split_order.empty() || split_order.back() != Separator::kCharacter) {
    throw Error(ErrorCode::kConfigError, "chunking split_order must end with the character separator");
  }
}

IngestResult ingest_directory(const fs::path& root, ChunkKind kind) {
  std::error_code ec;
  if (!fs::exists(root, ec) || !fs::is_directory(root, ec)) {
    throw Error(ErrorCode::kPathNotFound, "document directory not found: " + root.string());
  }
  std::vector<std::pair<std::string, fs::path>> files;
  for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied, ec);
       it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) break;
    if (!it->is_regular_file(ec)) continue;
    const auto ext = to_lower_ascii(it->path().extension().string());
    if (ext != ".md" && ext != ".txt") continue;
    files.emplace_back(fs::relative(it->path(), root).generic_string(), it->path());
  }
  std::sort(files.begin(), files.end());

  IngestResult result;
  for (const auto& [rel, path] : files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      result.warnings.push_back({rel, "unreadable"});
      continue;
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    if (!is_valid_utf8(text)) {
      result.warnings.push_back({rel, "not valid UTF-8"});
      continue;
    }
    if (trim(text).empty()) {
      result.warnings.push_back({rel, "empty file"});
      continue;
    }
    result.documents.push_back({rel, "file://" + fs::absolute(path).lexically_normal().generic_string(),
                                std::move(text), kind});
  }
  return result;
}

namespace {

// Code-point indexed view of a document used by the splitter.
struct CpText {
  std::string_view bytes;
  std::vector<std::size_t> offsets;

  std::size_t size() const { return offsets.size() - 1; }
  char byte_before(std::size_t cp, std::size_t back) const {
    const std::size_t b = offsets[cp];
    return b >= back ? bytes[b - back] : '\0';
  }
  char byte_at(std::size_t cp) const { return cp < size() ? bytes[offsets[cp]] : '\0'; }
};

bool is_boundary(const CpText& t, std::size_t p, Separator sep) {
  switch (sep) {
    case Separator::kHeading:
      return t.byte_at(p) == '#' && t.byte_before(p, 1) == '\n';
    case Separator::kBlankLine:
      return t.byte_before(p, 1) == '\n' && t.byte_before(p, 2) == '\n' && t.byte_at(p) != '\n';
    case Separator::kSentence: {
      const char ws = t.byte_before(p, 1);
      const char end = t.byte_before(p, 2);
      const char cur = t.byte_at(p);
      return (ws == ' ' || ws == '\n') && (end == '.' || end == '!' || end == '?') && cur != ' ' && cur != '\n';
    }
    case Separator::kCharacter:
      return true;
  }
  return false;
}

using Segments = std::vector<std::pair<std::size_t, std::size_t>>;

void split_range(const CpText& t, std::size_t a, std::size_t b, std::size_t level,
                 const ChunkingPolicy& policy, Segments& out) {
  const std::size_t target = policy.target_chars;
  if (b - a <= target) {
    out.emplace_back(a, b);
    return;
  }
  const Separator sep = policy.split_order[std::min(level, policy.split_order.size() - 1)];
  if (sep == Separator::kCharacter || level >= policy.split_order.size()) {
    for (std::size_t s = a; s < b; s += target) out.emplace_back(s, std::min(b, s + target));
    return;
  }
  std::vector<std::size_t> cuts;
  for (std::size_t p = a + 1; p < b; ++p) {
    if (is_boundary(t, p, sep)) cuts.push_back(p);
  }
  if (cuts.empty()) {
    split_range(t, a, b, level + 1, policy, out);
    return;
  }
  cuts.push_back(b);

  // Greedily merge consecutive pieces while they fit; oversized pieces are
  // split at the next separator level.
  std::size_t seg_start = a;
  std::size_t seg_end = a;
  std::size_t piece_start = a;
  for (std::size_t piece_end : cuts) {
    if (piece_end - seg_start <= target) {
      seg_end = piece_end;
    } else {
      if (seg_end > seg_start) {
        out.emplace_back(seg_start, seg_end);
        seg_start = seg_end;
      }
      if (piece_end - piece_start <= target) {
        seg_end = piece_end;
      } else {
        split_range(t, piece_start, piece_end, level + 1, policy, out);
        seg_start = seg_end = piece_end;
      }
    }
    piece_start = piece_end;
  }
  if (seg_end > seg_start) out.emplace_back(seg_start, seg_end);
}

std::vector<Chunk> chunks_from_segments(const Document& doc, const CpText& t, const Segments& segments,
                                        const ChunkingPolicy& policy) {
  std::vector<Chunk> chunks;
  chunks.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto [s, e] = segments[i];
    const std::size_t from = s - std::min(policy.overlap_chars, s);
    Chunk c;
    c.id = doc.id + "#" + std::to_string(i);
    c.doc_id = doc.id;
    c.ordinal = i;
    c.kind = doc.kind;
    c.text = std::string(t.bytes.substr(t.offsets[from], t.offsets[e] - t.offsets[from]));
    chunks.push_back(std::move(c));
  }
  return chunks;
}

CpText index_text(const Document& doc, const ChunkingPolicy& policy) {
  policy.validate();
  if (doc.text.empty()) throw Error(ErrorCode::kEmptyInput, "document '" + doc.id + "' has no text");
  return CpText{doc.text, code_point_offsets(doc.text)};
}

}  // namespace

std::vector<Chunk> chunk_document(const Document& doc, const ChunkingPolicy& policy) {
  const CpText t = index_text(doc, policy);
  Segments segments;
  split_range(t, 0, t.size(), 0, policy, segments);
  return chunks_from_segments(doc, t, segments, policy);
}

std::vector<Chunk> chunk_document_with_model(const Document& doc, const ChunkingPolicy& policy,
                                             const ModelGateway& gateway, bool* used_model) {
  const CpText t = index_text(doc, policy);
  if (used_model) *used_model = false;
  if (t.size() <= policy.target_chars) return chunk_document(doc, policy);

  ChatRequest request;
  request.messages = {
      {Role::kSystem,
       "You split technical documentation into self-contained retrieval chunks. Reply with a JSON list of "
       "integers only."},
      {Role::kUser, "The document below has " + std::to_string(t.size()) +
                        " characters (Unicode code points). Propose the character offsets where new chunks "
                        "should begin, so that every chunk has at most " +
                        std::to_string(policy.target_chars) +
                        " characters and covers one coherent topic. Reply with a JSON list of increasing "
                        "integers, for example [812, 1650].\n\nDOCUMENT:\n" +
                        doc.text}};
  std::string reply;
  try {
    reply = gateway.complete_chat(request);
  } catch (const Error&) {
    return chunk_document(doc, policy);
  }

  Segments segments;
  try {
    const auto open = reply.find('[');
    const auto close = reply.rfind(']');
    if (open == std::string::npos || close == std::string::npos || close < open) throw Error(ErrorCode::kParseError, "");
    const auto offsets = nlohmann::json::parse(reply.substr(open, close - open + 1)).get<std::vector<long long>>();
    std::size_t prev = 0;
    for (long long o : offsets) {
      if (o <= static_cast<long long>(prev) || o >= static_cast<long long>(t.size())) throw Error(ErrorCode::kParseError, "");
      segments.emplace_back(prev, static_cast<std::size_t>(o));
      prev = static_cast<std::size_t>(o);
    }
    segments.emplace_back(prev, t.size());
    for (const auto& [s, e] : segments) {
      if (e - s > policy.target_chars) throw Error(ErrorCode::kParseError, "");
    }
  } catch (const std::exception&) {
    return chunk_document(doc, policy);
  }
  if (used_model) *used_model = true;
  return chunks_from_segments(doc, t, segments, policy);
}

std::string reconstruct_text(const std::vector<Chunk>& doc_chunks, const ChunkingPolicy& policy) {
  std::string out;
  std::size_t cps = 0;
  for (const auto& c : doc_chunks) {
    const std::size_t skip = std::min(policy.overlap_chars, cps);
    const auto offsets = code_point_offsets(c.text);
    const std::size_t from = offsets[std::min(skip, offsets.size() - 1)];
    const std::string_view fresh = std::string_view(c.text).substr(from);
    out.append(fresh);
    cps += code_point_count(fresh);
  }
  return out;
}

void save_corpus(const std::vector<Chunk>& chunks, const fs::path& path) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& c : chunks) {
    records.push_back(
        {{"id", c.id}, {"doc_id", c.doc_id}, {"ordinal", c.ordinal}, {"kind", kind_name(c.kind)}, {"text", c.text}});
  }
  const nlohmann::json doc = {{"schema_version", kCorpusSchemaVersion}, {"chunks", std::move(records)}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write corpus file " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIoError, "failed writing corpus file " + path.string());
}

std::vector<Chunk> load_corpus(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read corpus file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIoError, "corpus file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("schema_version") || doc["schema_version"] != kCorpusSchemaVersion) {
    throw Error(ErrorCode::kSchemaVersionMismatch,
                "corpus file " + path.string() + " has schema_version " +
                    (doc.is_object() && doc.contains("schema_version") ? doc["schema_version"].dump() : "(none)") +
                    ", expected " + std::to_string(kCorpusSchemaVersion));
  }
  std::vector<Chunk> chunks;
  std::set<std::string> ids;
  try {
    for (const auto& r : doc.at("chunks")) {
      Chunk c;
      c.id = r.at("id").get<std::string>();
      c.doc_id = r.at("doc_id").get<std::string>();
      c.ordinal = r.at("ordinal").get<std::size_t>();
      c.kind = parse_kind(r.at("kind").get<std::string>());
      c.text = r.at("text").get<std::string>();
      if (!ids.insert(c.id).second) throw Error(ErrorCode::kDuplicateId, "duplicate chunk id '" + c.id + "'");
      chunks.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIoError, "corpus file " + path.string() + " has a malformed chunk record: " + e.what());
  }
  return chunks;
}

}  // namespace hpcrag
