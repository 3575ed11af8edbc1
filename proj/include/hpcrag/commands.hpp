#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpcrag/corpus.hpp"
#include "hpcrag/error.hpp"
#include "hpcrag/gateway.hpp"
#include "hpcrag/retrieval.hpp"

namespace hpcrag {

/// A pre-registered command and its "hypothetical command" text: a natural
/// language description of what the command reports. argv is passed to execve
/// as-is; nothing from a query, chunk or model reply is ever substituted in.
struct CommandSpec {
  std::string name;
  std::vector<std::string> argv;
  std::string description;
  int timeout_ms = 10000;
  std::size_t max_output_bytes = 16384;
  bool enabled = true;

  /// argv joined with single spaces.
  std::string raw_command() const;
  /// Throws kInvalidSpec on empty argv, placeholder syntax in any token, an
  /// empty description or one equal to the raw command, or bad limits.
  void validate() const;

  bool operator==(const CommandSpec&) const = default;
};

/// True if the token looks like a template slot: {x}, {{x}}, ${x}, $(x), $X
/// or a backtick.
bool has_placeholder(std::string_view token);

class CommandRegistry {
 public:
  CommandRegistry() = default;
  /// Validates every spec; duplicate names raise kDuplicateName.
  explicit CommandRegistry(std::vector<CommandSpec> specs);

  /// JSON or YAML (by .yaml/.yml extension) list of
  /// {name, argv[], description, timeout_ms?, max_output_bytes?, enabled?}.
  static CommandRegistry load(const std::filesystem::path& path);
  static CommandRegistry from_json(const nlohmann::json& list);

  const CommandSpec* find(std::string_view name) const;
  const std::vector<CommandSpec>& specs() const noexcept { return specs_; }
  std::size_t size() const noexcept { return specs_.size(); }
  std::size_t enabled_count() const;

 private:
  std::vector<CommandSpec> specs_;
};

inline constexpr std::string_view kCommandChunkPrefix = "cmd:";

/// One chunk per enabled spec: id "cmd:<name>", text = description.
std::vector<Chunk> command_chunks(const CommandRegistry& registry);
std::optional<std::string> command_name_from_chunk_id(std::string_view chunk_id);

struct CommandOutput {
  std::string spec_name;
  int exit_code = 0;
  std::string stdout_text;
  std::string stderr_text;
  bool truncated = false;
  std::int64_t duration_ms = 0;
  bool timed_out = false;
  /// Invalid UTF-8 bytes were replaced with '?'.
  bool decode_replaced = false;

  bool operator==(const CommandOutput&) const = default;
};

inline constexpr std::string_view kTruncationMarker = "\n[output truncated]\n";

/// Thrown for kTimeout; carries whatever output was captured before the kill.
class CommandTimeout : public Error {
 public:
  CommandTimeout(const std::string& message, CommandOutput partial)
      : Error(ErrorCode::kTimeout, message), partial_(std::move(partial)) {}
  const CommandOutput& partial() const noexcept { return partial_; }

 private:
  CommandOutput partial_;
};

/// Caps the number of live child processes across every caller sharing it.
class ProcessSlots {
 public:
  explicit ProcessSlots(std::ptrdiff_t limit = 4) : sem_(limit) {}
  void acquire() { sem_.acquire(); }
  void release() { sem_.release(); }

 private:
  std::counting_semaphore<> sem_;
};

struct SandboxPolicy {
  std::filesystem::path working_dir = std::filesystem::temp_directory_path();
  /// Names of parent environment variables passed through; all others are
  /// dropped.
  std::vector<std::string> env_allowlist = {"PATH", "HOME", "LANG"};
  std::shared_ptr<ProcessSlots> slots = std::make_shared<ProcessSlots>(4);
  /// JSON-lines record per spawned process:
  /// {timestamp, query_digest, spec_name, argv, exit_code, duration_ms, truncated, timed_out}
  std::shared_ptr<AuditLog> audit;
};

/// Runs the registered command `name` without a shell: own process group,
/// stdin from /dev/null, cwd = working_dir, filtered environment, no new
/// privileges. Output beyond max_output_bytes (stdout and stderr combined) is
/// discarded and the kept part gets kTruncationMarker appended. The process
/// group is killed at timeout_ms, raising CommandTimeout.
///
/// Errors: kNotInRegistry, kDisabled, kSpawnError, kTimeout.
CommandOutput execute_command(const CommandRegistry& registry, std::string_view name, const SandboxPolicy& sandbox,
                              std::string_view query_digest = {});

enum class Provenance { kDocument, kCommandExecution };

std::string_view provenance_name(Provenance p) noexcept;

struct ResolvedContext {
  std::string chunk_id;
  ChunkKind kind = ChunkKind::kDocumentation;
  std::string text;
  Provenance provenance = Provenance::kDocument;
  std::optional<CommandOutput> command_output;

  bool operator==(const ResolvedContext&) const = default;
};

struct ExecutionPolicy {
  std::size_t max_commands_per_query = 2;
};

/// Turns reranked chunks into prompt context. Documentation passes through;
/// the highest-ranked command chunks (up to the cap) are executed, the rest
/// keep only their description. Failures become context text, never errors.
std::vector<ResolvedContext> resolve_contexts(std::span<const ScoredChunk> ranked, const ChunkTable& chunks,
                                              const CommandRegistry& registry, const SandboxPolicy& sandbox,
                                              const ExecutionPolicy& policy, std::string_view query_digest = {});

/// Context block for an executed (or attempted) command.
std::string render_command_context(const CommandSpec& spec, const CommandOutput& output);

nlohmann::json to_json(const CommandOutput& output);
CommandOutput command_output_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ResolvedContext& context);
ResolvedContext resolved_context_from_json(const nlohmann::json& j);

}  // namespace hpcrag
