#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpcrag/commands.hpp"
#include "hpcrag/corpus.hpp"
#include "hpcrag/gateway.hpp"
#include "hpcrag/retrieval.hpp"

namespace hpcrag {

enum class PromptStyle { kPlain, kCot };

std::string_view prompt_style_name(PromptStyle style) noexcept;
PromptStyle parse_prompt_style(std::string_view name);

struct PipelineConfig {
  std::size_t top_k_retrieval = 20;
  std::size_t top_k_rerank = 5;
  PromptStyle prompt_style = PromptStyle::kPlain;
  double temperature = 0.0;
  int max_output_tokens = 4096;
  std::size_t context_token_budget = 128000;
  bool hyce_enabled = true;
  bool reserve_command_slot = false;
  ExecutionPolicy execution;

  /// Throws kConfigError on non-positive sizes or top_k_rerank > top_k_retrieval.
  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& config);
/// Missing keys keep their defaults.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

/// Identifies the prompt templates below; bump when their wording changes.
inline constexpr std::string_view kAnswerPromptVersion = "answer-v1";
inline constexpr std::string_view kAnswerSystemPrompt =
    "You are an HPC support assistant for this cluster. Answer the user's question using only the context "
    "provided in the message. Context blocks tagged [DOC] are excerpts from the cluster documentation; blocks "
    "tagged [CMD] describe commands run on the user's behalf and, when they ran, their live output. If the "
    "context does not contain the answer, say that you do not know rather than guessing.";
inline constexpr std::string_view kNoContextMarker = "(no context retrieved)";
inline constexpr std::string_view kCotInstruction =
    "\n\nThink through the problem step by step, reasoning over the context blocks, before stating your final "
    "answer.";

struct BuiltPrompt {
  std::vector<ChatMessage> messages;
  /// Contexts dropped (lowest-ranked first) to fit the token budget.
  std::vector<std::string> dropped_context_ids;
};

/// System message, then `history` verbatim, then one user message:
///   CONTEXT:
///   [1] [DOC] <chunk id>
///   <text>
///   ...
///   QUESTION: <query>
/// with kCotInstruction appended for the cot style. Raises kContextOverflow
/// only if the prompt exceeds the budget with every context dropped.
BuiltPrompt build_prompt(const std::string& query, std::span<const ResolvedContext> contexts, PromptStyle style,
                         std::size_t context_token_budget, double chars_per_token = 4.0,
                         std::span<const ChatMessage> history = {});

struct AnswerBundle {
  std::string query;
  std::string answer;
  std::vector<ResolvedContext> contexts;
  std::vector<std::string> commands_executed;
  std::string prompt_digest;
  std::string prompt_version{kAnswerPromptVersion};
  PipelineConfig config_snapshot;
  std::vector<std::string> retrieved_ids;
  std::vector<std::string> reranked_ids;
  std::vector<std::string> dropped_context_ids;
};

nlohmann::json to_json(const AnswerBundle& bundle);
AnswerBundle answer_bundle_from_json(const nlohmann::json& j);

/// Read-only state shared by every query: chunks (documentation and command
/// descriptions), the vector index over them, the command registry, the model
/// gateway and the sandbox. Safe for concurrent answer_query calls.
class RagEngine {
 public:
  RagEngine(ChunkTable chunks, VectorIndex index, CommandRegistry registry,
            std::shared_ptr<const ModelGateway> gateway, SandboxPolicy sandbox);

  /// Indexes `doc_chunks` plus command_chunks(registry).
  static RagEngine build(std::vector<Chunk> doc_chunks, CommandRegistry registry,
                         std::shared_ptr<const ModelGateway> gateway, SandboxPolicy sandbox);

  /// retrieve -> rerank -> resolve (execute commands) -> prompt -> answer.
  /// With hyce_enabled=false, command entries are not part of the searched
  /// index at all.
  AnswerBundle answer_query(const std::string& query, const PipelineConfig& config,
                            std::span<const ChatMessage> history = {}) const;

  const ChunkTable& chunks() const noexcept { return chunks_; }
  const VectorIndex& index() const noexcept { return index_; }
  const CommandRegistry& registry() const noexcept { return registry_; }
  const ModelGateway& gateway() const noexcept { return *gateway_; }
  const SandboxPolicy& sandbox() const noexcept { return sandbox_; }

 private:
  ChunkTable chunks_;
  VectorIndex index_;
  VectorIndex docs_only_index_;
  CommandRegistry registry_;
  std::shared_ptr<const ModelGateway> gateway_;
  SandboxPolicy sandbox_;
};

}  // namespace hpcrag
