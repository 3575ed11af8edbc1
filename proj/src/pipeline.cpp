#include "hpcrag/pipeline.hpp"

#include "hpcrag/error.hpp"
#include "hpcrag/text.hpp"

namespace hpcrag {

std::string_view prompt_style_name(PromptStyle style) noexcept { return style == PromptStyle::kCot ? "cot" : "plain"; }

PromptStyle parse_prompt_style(std::string_view name) {
  if (name == "plain") return PromptStyle::kPlain;
  if (name == "cot") return PromptStyle::kCot;
  throw Error(ErrorCode::kConfigError, "unknown prompt style '" + std::string(name) + "'");
}

void PipelineConfig::validate() const {
  if (top_k_retrieval == 0 || top_k_rerank == 0) throw Error(ErrorCode::kConfigError, "top-k values must be positive");
  if (top_k_rerank > top_k_retrieval) throw Error(ErrorCode::kConfigError, "top_k_rerank exceeds top_k_retrieval");
  if (!(temperature >= 0.0)) throw Error(ErrorCode::kConfigError, "temperature must be >= 0");
  if (max_output_tokens <= 0) throw Error(ErrorCode::kConfigError, "max_output_tokens must be positive");
  if (context_token_budget == 0) throw Error(ErrorCode::kConfigError, "context_token_budget must be positive");
}

nlohmann::json to_json(const PipelineConfig& c) {
  return {{"top_k_retrieval", c.top_k_retrieval},
          {"top_k_rerank", c.top_k_rerank},
          {"prompt_style", prompt_style_name(c.prompt_style)},
          {"temperature", c.temperature},
          {"max_output_tokens", c.max_output_tokens},
          {"context_token_budget", c.context_token_budget},
          {"hyce_enabled", c.hyce_enabled},
          {"reserve_command_slot", c.reserve_command_slot},
          {"max_commands_per_query", c.execution.max_commands_per_query}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    c.top_k_retrieval = j.value("top_k_retrieval", c.top_k_retrieval);
    c.top_k_rerank = j.value("top_k_rerank", c.top_k_rerank);
    c.prompt_style = parse_prompt_style(j.value("prompt_style", std::string(prompt_style_name(c.prompt_style))));
    c.temperature = j.value("temperature", c.temperature);
    c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
    c.context_token_budget = j.value("context_token_budget", c.context_token_budget);
    c.hyce_enabled = j.value("hyce_enabled", c.hyce_enabled);
    c.reserve_command_slot = j.value("reserve_command_slot", c.reserve_command_slot);
    c.execution.max_commands_per_query = j.value("max_commands_per_query", c.execution.max_commands_per_query);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::string user_message(const std::string& query, std::span<const ResolvedContext> contexts, PromptStyle style) {
  std::string out = "CONTEXT:\n";
  if (contexts.empty()) {
    out += kNoContextMarker;
    out += "\n";
  }
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const auto& c = contexts[i];
    out += "[" + std::to_string(i + 1) + "] " + (c.kind == ChunkKind::kCommand ? "[CMD] " : "[DOC] ") + c.chunk_id +
           "\n";
    out += c.text;
    if (c.text.empty() || c.text.back() != '\n') out += '\n';
    out += '\n';
  }
  out += "\nQUESTION: " + query;
  if (style == PromptStyle::kCot) out += kCotInstruction;
  return out;
}

std::size_t prompt_tokens(const std::vector<ChatMessage>& messages, double chars_per_token) {
  std::size_t n = 0;
  for (const auto& m : messages) n += estimate_tokens(m.content, chars_per_token);
  return n;
}

std::string prompt_fingerprint(const std::vector<ChatMessage>& messages) {
  std::string s;
  for (const auto& m : messages) {
    s += role_name(m.role);
    s += '\x1f';
    s += m.content;
    s += '\x1e';
  }
  return sha256_hex(s);
}

}  // namespace

BuiltPrompt build_prompt(const std::string& query, std::span<const ResolvedContext> contexts, PromptStyle style,
                         std::size_t context_token_budget, double chars_per_token,
                         std::span<const ChatMessage> history) {
  if (trim(query).empty()) throw Error(ErrorCode::kEmptyInput, "query is empty");
  BuiltPrompt out;
  std::size_t kept = contexts.size();
  for (;;) {
    out.messages.clear();
    out.messages.push_back({Role::kSystem, std::string(kAnswerSystemPrompt)});
    out.messages.insert(out.messages.end(), history.begin(), history.end());
    out.messages.push_back({Role::kUser, user_message(query, contexts.first(kept), style)});
    const std::size_t tokens = prompt_tokens(out.messages, chars_per_token);
    if (tokens <= context_token_budget) break;
    if (kept == 0) {
      throw Error(ErrorCode::kContextOverflow, "query alone needs an estimated " + std::to_string(tokens) +
                                                   " tokens, budget is " + std::to_string(context_token_budget));
    }
    --kept;
    out.dropped_context_ids.push_back(contexts[kept].chunk_id);
  }
  return out;
}

nlohmann::json to_json(const AnswerBundle& b) {
  nlohmann::json contexts = nlohmann::json::array();
  for (const auto& c : b.contexts) contexts.push_back(to_json(c));
  return {{"query", b.query},
          {"answer", b.answer},
          {"contexts", std::move(contexts)},
          {"commands_executed", b.commands_executed},
          {"prompt_digest", b.prompt_digest},
          {"prompt_version", b.prompt_version},
          {"config_snapshot", to_json(b.config_snapshot)},
          {"retrieved_ids", b.retrieved_ids},
          {"reranked_ids", b.reranked_ids},
          {"dropped_context_ids", b.dropped_context_ids}};
}

AnswerBundle answer_bundle_from_json(const nlohmann::json& j) {
  AnswerBundle b;
  b.query = j.at("query").get<std::string>();
  b.answer = j.at("answer").get<std::string>();
  for (const auto& c : j.at("contexts")) b.contexts.push_back(resolved_context_from_json(c));
  b.commands_executed = j.at("commands_executed").get<std::vector<std::string>>();
  b.prompt_digest = j.at("prompt_digest").get<std::string>();
  b.prompt_version = j.value("prompt_version", std::string(kAnswerPromptVersion));
  b.config_snapshot = pipeline_config_from_json(j.at("config_snapshot"));
  b.retrieved_ids = j.value("retrieved_ids", std::vector<std::string>{});
  b.reranked_ids = j.value("reranked_ids", std::vector<std::string>{});
  b.dropped_context_ids = j.value("dropped_context_ids", std::vector<std::string>{});
  return b;
}

RagEngine::RagEngine(ChunkTable chunks, VectorIndex index, CommandRegistry registry,
                     std::shared_ptr<const ModelGateway> gateway, SandboxPolicy sandbox)
    : chunks_(std::move(chunks)),
      index_(std::move(index)),
      docs_only_index_(index_.without_kind(ChunkKind::kCommand)),
      registry_(std::move(registry)),
      gateway_(std::move(gateway)),
      sandbox_(std::move(sandbox)) {
  if (!gateway_) throw Error(ErrorCode::kConfigError, "RagEngine needs a model gateway");
  for (std::size_t i = 0; i < index_.size(); ++i) {
    if (!chunks_.find(index_.chunk_id(i))) {
      throw Error(ErrorCode::kConfigError, "index entry '" + index_.chunk_id(i) + "' has no chunk");
    }
  }
}

RagEngine RagEngine::build(std::vector<Chunk> doc_chunks, CommandRegistry registry,
                           std::shared_ptr<const ModelGateway> gateway, SandboxPolicy sandbox) {
  auto cmd = command_chunks(registry);
  doc_chunks.insert(doc_chunks.end(), std::make_move_iterator(cmd.begin()), std::make_move_iterator(cmd.end()));
  ChunkTable table(std::move(doc_chunks));
  VectorIndex index = table.size() == 0 ? VectorIndex{} : build_index(table.chunks(), *gateway);
  return RagEngine(std::move(table), std::move(index), std::move(registry), std::move(gateway), std::move(sandbox));
}

AnswerBundle RagEngine::answer_query(const std::string& query, const PipelineConfig& config,
                                     std::span<const ChatMessage> history) const {
  config.validate();
  if (trim(query).empty()) throw Error(ErrorCode::kEmptyInput, "query is empty");
  AnswerBundle bundle;
  bundle.query = query;
  bundle.config_snapshot = config;

  const VectorIndex& searched = config.hyce_enabled ? index_ : docs_only_index_;
  std::vector<ScoredChunk> candidates;
  if (!searched.empty()) {
    candidates = retrieve_topk(query, searched, config.top_k_retrieval, *gateway_,
                               RetrieveOptions{config.reserve_command_slot && config.hyce_enabled});
  }
  for (const auto& c : candidates) bundle.retrieved_ids.push_back(c.chunk_id);

  std::vector<ScoredChunk> ranked;
  if (!candidates.empty()) ranked = rerank_candidates(query, candidates, config.top_k_rerank, *gateway_, chunks_);
  for (const auto& c : ranked) bundle.reranked_ids.push_back(c.chunk_id);

  bundle.contexts = resolve_contexts(ranked, chunks_, registry_, sandbox_, config.execution, sha256_hex(query));
  for (const auto& c : bundle.contexts) {
    if (c.command_output) bundle.commands_executed.push_back(c.command_output->spec_name);
  }

  auto prompt = build_prompt(query, bundle.contexts, config.prompt_style, config.context_token_budget,
                             gateway_->options().chars_per_token, history);
  bundle.dropped_context_ids = prompt.dropped_context_ids;
  bundle.contexts.resize(bundle.contexts.size() - prompt.dropped_context_ids.size());
  bundle.prompt_digest = prompt_fingerprint(prompt.messages);

  ChatRequest request;
  request.messages = std::move(prompt.messages);
  request.temperature = config.temperature;
  request.max_output_tokens = config.max_output_tokens;
  bundle.answer = gateway_->complete_chat(std::move(request));
  return bundle;
}

}  // namespace hpcrag
