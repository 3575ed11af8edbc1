#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpcrag/commands.hpp"
#include "hpcrag/corpus.hpp"
#include "hpcrag/gateway.hpp"
#include "hpcrag/pipeline.hpp"

namespace hpcrag {

/// Which implementation backs each model capability.
///   embedding: "hash" | "openai"
///   rerank:    "overlap" | "openai"
///   chat:      "scripted" | "openai" | "none"
struct BackendSelection {
  std::string embedding = "hash";
  std::uint64_t hash_seed = 0;
  std::size_t hash_dim = 256;
  std::string rerank = "overlap";
  std::string chat = "scripted";
  std::filesystem::path chat_script;
};

struct AppConfig {
  std::filesystem::path config_path;
  std::vector<std::filesystem::path> docs_dirs;
  std::filesystem::path registry_path;
  std::filesystem::path artifact_dir = "artifacts";
  std::filesystem::path audit_log;
  std::filesystem::path sandbox_dir;
  std::size_t max_processes = 4;
  ChunkingPolicy chunking;
  PipelineConfig pipeline;
  GatewayOptions gateway;
  BackendSelection backends;
  BackendProfile profile;
  std::string bind_host = "127.0.0.1";
  int bind_port = 8080;
  std::size_t session_turns = 10;

  /// kConfigError for unknown backend types, missing required paths or a bad
  /// pipeline section.
  void validate() const;
};

/// Loads a JSON config file. Relative paths resolve against the file's
/// directory. Afterwards these environment variables override the profile:
/// HPCRAG_ENDPOINT_URL, HPCRAG_API_KEY_ENV, HPCRAG_CHAT_MODEL,
/// HPCRAG_EMBED_MODEL, HPCRAG_RERANK_MODEL.
AppConfig load_app_config(const std::filesystem::path& path);
AppConfig app_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

/// Config as JSON with secrets left out (only the key's variable name is
/// shown, never its value).
nlohmann::json sanitized_config(const AppConfig& config);

std::shared_ptr<ModelGateway> make_gateway(const AppConfig& config, std::shared_ptr<AuditLog> audit = nullptr);
SandboxPolicy make_sandbox(const AppConfig& config, std::shared_ptr<AuditLog> audit = nullptr);

inline constexpr std::string_view kCorpusFile = "corpus.json";
inline constexpr std::string_view kIndexFile = "index.json";

struct IngestSummary {
  std::size_t documents = 0;
  std::size_t doc_chunks = 0;
  std::size_t command_chunks = 0;
  std::vector<IngestWarning> warnings;
  std::filesystem::path corpus_path;
  std::filesystem::path index_path;
};

/// Reads the docs and registry, chunks, embeds, and writes corpus.json and
/// index.json into the artifact directory.
IngestSummary ingest_to_artifacts(const AppConfig& config, const ModelGateway& gateway);

/// Loads corpus.json and index.json. kMissingArtifact when ingest has not
/// run; kConfigError when the registry no longer matches the ingested
/// command chunks.
RagEngine load_engine(const AppConfig& config, std::shared_ptr<const ModelGateway> gateway, SandboxPolicy sandbox);

}  // namespace hpcrag
