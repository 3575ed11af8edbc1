#include "hpcrag/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "hpcrag/error.hpp"
#include "hpcrag/http_backend.hpp"
#include "hpcrag/offline_backends.hpp"
#include "hpcrag/retrieval.hpp"

namespace hpcrag {

namespace fs = std::filesystem;

namespace {

void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [k, v] : obj.items()) {
    if (!known.count(k)) throw Error(ErrorCode::kConfigError, "unknown key '" + k + "' in " + where);
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

const nlohmann::json& section(const nlohmann::json& j, const char* name) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(name)) return empty;
  if (!j[name].is_object()) throw Error(ErrorCode::kConfigError, std::string("'") + name + "' must be an object");
  return j[name];
}

void env_override(std::string& field, const char* var) {
  if (const char* v = std::getenv(var); v && *v) field = v;
}

}  // namespace

void AppConfig::validate() const {
  if (docs_dirs.empty()) throw Error(ErrorCode::kConfigError, "no documentation directory configured");
  for (const auto& d : docs_dirs) {
    if (!fs::is_directory(d)) throw Error(ErrorCode::kConfigError, "documentation directory not found: " + d.string());
  }
  if (registry_path.empty()) throw Error(ErrorCode::kConfigError, "no command registry configured");
  if (!fs::is_regular_file(registry_path)) {
    throw Error(ErrorCode::kConfigError, "command registry not found: " + registry_path.string());
  }
  chunking.validate();
  pipeline.validate();
  if (max_processes == 0) throw Error(ErrorCode::kConfigError, "sandbox.max_processes must be positive");
  if (gateway.max_in_flight <= 0 || gateway.chars_per_token <= 0 || gateway.context_token_budget == 0) {
    throw Error(ErrorCode::kConfigError, "gateway limits must be positive");
  }
  if (session_turns == 0) throw Error(ErrorCode::kConfigError, "service.session_turns must be positive");

  const bool remote = backends.embedding == "openai" || backends.rerank == "openai" || backends.chat == "openai";
  if (backends.embedding != "hash" && backends.embedding != "openai") {
    throw Error(ErrorCode::kConfigError, "unknown embedding backend: " + backends.embedding);
  }
  if (backends.rerank != "overlap" && backends.rerank != "openai") {
    throw Error(ErrorCode::kConfigError, "unknown rerank backend: " + backends.rerank);
  }
  if (backends.chat != "scripted" && backends.chat != "openai" && backends.chat != "none") {
    throw Error(ErrorCode::kConfigError, "unknown chat backend: " + backends.chat);
  }
  if (backends.chat == "scripted" && !fs::is_regular_file(backends.chat_script)) {
    throw Error(ErrorCode::kConfigError, "chat script not found: " + backends.chat_script.string());
  }
  if (remote) {
    parse_endpoint_url(profile.endpoint_url);
    if (backends.embedding == "openai" && profile.embed_model.empty()) {
      throw Error(ErrorCode::kConfigError, "profile.embed_model is required for the openai embedding backend");
    }
    if (backends.rerank == "openai" && profile.rerank_model.empty()) {
      throw Error(ErrorCode::kConfigError, "profile.rerank_model is required for the openai rerank backend");
    }
    if (backends.chat == "openai" && profile.chat_model.empty()) {
      throw Error(ErrorCode::kConfigError, "profile.chat_model is required for the openai chat backend");
    }
  }
  if (bind_port <= 0 || bind_port > 65535) throw Error(ErrorCode::kConfigError, "service.port out of range");
}

AppConfig app_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::kConfigError, "config must be a JSON object");
  reject_unknown(j,
                 {"docs", "registry", "artifact_dir", "audit_log", "sandbox", "chunking", "pipeline", "gateway",
                  "backends", "profile", "service"},
                 "config");
  AppConfig c;
  try {
    if (j.contains("docs")) {
      const auto& d = j["docs"];
      if (d.is_string()) {
        c.docs_dirs.push_back(resolve(base_dir, d.get<std::string>()));
      } else {
        for (const auto& item : d) c.docs_dirs.push_back(resolve(base_dir, item.get<std::string>()));
      }
    }
    c.registry_path = resolve(base_dir, j.value("registry", ""));
    c.artifact_dir = resolve(base_dir, j.value("artifact_dir", "artifacts"));
    c.audit_log = resolve(base_dir, j.value("audit_log", ""));

    const auto& sb = section(j, "sandbox");
    reject_unknown(sb, {"working_dir", "max_processes"}, "sandbox");
    c.sandbox_dir = resolve(base_dir, sb.value("working_dir", ""));
    c.max_processes = sb.value("max_processes", c.max_processes);

    const auto& ch = section(j, "chunking");
    reject_unknown(ch, {"target_chars", "overlap_chars"}, "chunking");
    c.chunking.target_chars = ch.value("target_chars", c.chunking.target_chars);
    c.chunking.overlap_chars = ch.value("overlap_chars", c.chunking.overlap_chars);

    c.pipeline = pipeline_config_from_json(section(j, "pipeline"));

    const auto& gw = section(j, "gateway");
    reject_unknown(gw, {"context_token_budget", "chars_per_token", "max_in_flight"}, "gateway");
    c.gateway.context_token_budget = gw.value("context_token_budget", c.gateway.context_token_budget);
    c.gateway.chars_per_token = gw.value("chars_per_token", c.gateway.chars_per_token);
    c.gateway.max_in_flight = gw.value("max_in_flight", c.gateway.max_in_flight);

    const auto& be = section(j, "backends");
    reject_unknown(be, {"embedding", "hash_seed", "hash_dim", "rerank", "chat", "chat_script"}, "backends");
    c.backends.embedding = be.value("embedding", c.backends.embedding);
    c.backends.hash_seed = be.value("hash_seed", c.backends.hash_seed);
    c.backends.hash_dim = be.value("hash_dim", c.backends.hash_dim);
    c.backends.rerank = be.value("rerank", c.backends.rerank);
    c.backends.chat = be.value("chat", c.backends.chat);
    c.backends.chat_script = resolve(base_dir, be.value("chat_script", ""));

    const auto& pr = section(j, "profile");
    reject_unknown(pr, {"endpoint_url", "api_key_env", "chat_model", "embed_model", "rerank_model"}, "profile");
    c.profile.endpoint_url = pr.value("endpoint_url", "");
    c.profile.api_key_env_name = pr.value("api_key_env", "");
    c.profile.chat_model = pr.value("chat_model", "");
    c.profile.embed_model = pr.value("embed_model", "");
    c.profile.rerank_model = pr.value("rerank_model", "");

    const auto& sv = section(j, "service");
    reject_unknown(sv, {"host", "port", "session_turns"}, "service");
    c.bind_host = sv.value("host", c.bind_host);
    c.bind_port = sv.value("port", c.bind_port);
    c.session_turns = sv.value("session_turns", c.session_turns);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("bad config value: ") + e.what());
  }

  env_override(c.profile.endpoint_url, "HPCRAG_ENDPOINT_URL");
  env_override(c.profile.api_key_env_name, "HPCRAG_API_KEY_ENV");
  env_override(c.profile.chat_model, "HPCRAG_CHAT_MODEL");
  env_override(c.profile.embed_model, "HPCRAG_EMBED_MODEL");
  env_override(c.profile.rerank_model, "HPCRAG_RERANK_MODEL");
  return c;
}

AppConfig load_app_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, "config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
  const fs::path abs = fs::absolute(path);
  AppConfig c = app_config_from_json(j, abs.parent_path());
  c.config_path = abs;
  return c;
}

nlohmann::json sanitized_config(const AppConfig& c) {
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& d : c.docs_dirs) docs.push_back(d.string());
  return {{"docs", docs},
          {"registry", c.registry_path.string()},
          {"artifact_dir", c.artifact_dir.string()},
          {"pipeline", to_json(c.pipeline)},
          {"chunking", {{"target_chars", c.chunking.target_chars}, {"overlap_chars", c.chunking.overlap_chars}}},
          {"gateway",
           {{"context_token_budget", c.gateway.context_token_budget},
            {"chars_per_token", c.gateway.chars_per_token},
            {"max_in_flight", c.gateway.max_in_flight}}},
          {"backends", {{"embedding", c.backends.embedding}, {"rerank", c.backends.rerank}, {"chat", c.backends.chat}}},
          {"profile",
           {{"endpoint_url", c.profile.endpoint_url},
            {"api_key_env", c.profile.api_key_env_name},
            {"chat_model", c.profile.chat_model},
            {"embed_model", c.profile.embed_model},
            {"rerank_model", c.profile.rerank_model}}},
          {"service", {{"session_turns", c.session_turns}}}};
}

std::shared_ptr<ModelGateway> make_gateway(const AppConfig& c, std::shared_ptr<AuditLog> audit) {
  std::shared_ptr<const HttpTransport> transport;
  auto http = [&] {
    if (!transport) transport = std::make_shared<HttpTransport>(c.profile);
    return transport;
  };
  std::shared_ptr<const EmbeddingBackend> embed;
  if (c.backends.embedding == "openai") {
    embed = std::make_shared<OpenAiEmbeddingBackend>(http());
  } else {
    embed = std::make_shared<HashEmbeddingBackend>(c.backends.hash_seed, c.backends.hash_dim);
  }
  std::shared_ptr<const RerankBackend> rerank;
  if (c.backends.rerank == "openai") {
    rerank = std::make_shared<OpenAiRerankBackend>(http());
  } else {
    rerank = std::make_shared<TokenOverlapReranker>();
  }
  std::shared_ptr<const ChatBackend> chat;
  if (c.backends.chat == "openai") {
    chat = std::make_shared<OpenAiChatBackend>(http());
  } else if (c.backends.chat == "scripted") {
    chat = ScriptedChatBackend::from_file(c.backends.chat_script);
  }
  GatewayOptions opts = c.gateway;
  return std::make_shared<ModelGateway>(embed, rerank, chat, opts, std::move(audit));
}

SandboxPolicy make_sandbox(const AppConfig& c, std::shared_ptr<AuditLog> audit) {
  SandboxPolicy s;
  if (!c.sandbox_dir.empty()) s.working_dir = c.sandbox_dir;
  s.slots = std::make_shared<ProcessSlots>(static_cast<std::ptrdiff_t>(c.max_processes));
  s.audit = std::move(audit);
  return s;
}

IngestSummary ingest_to_artifacts(const AppConfig& c, const ModelGateway& gateway) {
  IngestSummary summary;
  CommandRegistry registry = CommandRegistry::load(c.registry_path);
  std::vector<Chunk> chunks;
  for (const auto& dir : c.docs_dirs) {
    IngestResult r = ingest_directory(dir);
    summary.documents += r.documents.size();
    summary.warnings.insert(summary.warnings.end(), r.warnings.begin(), r.warnings.end());
    for (const auto& doc : r.documents) {
      auto part = chunk_document(doc, c.chunking);
      chunks.insert(chunks.end(), part.begin(), part.end());
    }
  }
  summary.doc_chunks = chunks.size();
  auto cmd = command_chunks(registry);
  summary.command_chunks = cmd.size();
  chunks.insert(chunks.end(), cmd.begin(), cmd.end());

  ChunkTable table(chunks);
  if (table.size() == 0) throw Error(ErrorCode::kEmptyInput, "nothing to index: no documentation and no commands");
  VectorIndex index = build_index(table.chunks(), gateway);

  fs::create_directories(c.artifact_dir);
  summary.corpus_path = c.artifact_dir / kCorpusFile;
  summary.index_path = c.artifact_dir / kIndexFile;
  save_corpus(chunks, summary.corpus_path);
  save_index(index, summary.index_path);
  return summary;
}

RagEngine load_engine(const AppConfig& c, std::shared_ptr<const ModelGateway> gateway, SandboxPolicy sandbox) {
  const fs::path corpus_path = c.artifact_dir / kCorpusFile;
  const fs::path index_path = c.artifact_dir / kIndexFile;
  for (const auto& p : {corpus_path, index_path}) {
    if (!fs::exists(p)) throw Error(ErrorCode::kMissingArtifact, p.string() + " does not exist; run 'ingest' first");
  }
  CommandRegistry registry = CommandRegistry::load(c.registry_path);
  ChunkTable table(load_corpus(corpus_path));

  std::vector<Chunk> ingested_cmds;
  for (const auto& ch : table.chunks()) {
    if (ch.kind == ChunkKind::kCommand) ingested_cmds.push_back(ch);
  }
  if (ingested_cmds != command_chunks(registry)) {
    throw Error(ErrorCode::kConfigError,
                "command registry " + c.registry_path.string() + " changed since ingest; run 'ingest' again");
  }
  VectorIndex index = load_index(index_path, table);
  return RagEngine(std::move(table), std::move(index), std::move(registry), std::move(gateway), std::move(sandbox));
}

}  // namespace hpcrag
