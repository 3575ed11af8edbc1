#include <gtest/gtest.h>

#include "hpcrag/error.hpp"
#include "hpcrag/pipeline.hpp"
#include "hpcrag/text.hpp"
#include "support/helpers.hpp"

using namespace hpcrag;

namespace {

ResolvedContext doc_ctx(std::string id, std::string text) {
  ResolvedContext c;
  c.chunk_id = std::move(id);
  c.text = std::move(text);
  return c;
}

std::vector<Chunk> docs() {
  return {testutil::doc_chunk("docs/storage.md#0", "Home directories have a 50 GB storage quota per user."),
          testutil::doc_chunk("docs/login.md#0", "Connect to the login node with ssh and your cluster account."),
          testutil::doc_chunk("docs/gpu.md#0", "GPU jobs must request the gpu partition in the batch script.")};
}

CommandRegistry registry() {
  return CommandRegistry({testutil::printf_spec("gpu_availability", "GPUS_FREE=3\\n",
                                                "show current GPU availability and free GPUs on every node"),
                          testutil::printf_spec("my_jobs", "JOBID 42 RUNNING\\n",
                                                "list my queued and running batch jobs")});
}

}  // namespace

TEST(Prompt, ExactLayout) {
  ResolvedContext cmd;
  cmd.chunk_id = "cmd:x";
  cmd.kind = ChunkKind::kCommand;
  cmd.text = "Command: x\n";
  const std::vector<ResolvedContext> ctx = {doc_ctx("a.md#0", "alpha"), cmd};
  const auto p = build_prompt("what is x?", ctx, PromptStyle::kPlain, 100000);
  ASSERT_EQ(p.messages.size(), 2u);
  EXPECT_EQ(p.messages[0].role, Role::kSystem);
  EXPECT_EQ(p.messages[0].content, kAnswerSystemPrompt);
  EXPECT_EQ(p.messages[1].content,
            "CONTEXT:\n[1] [DOC] a.md#0\nalpha\n\n[2] [CMD] cmd:x\nCommand: x\n\n\nQUESTION: what is x?");
  EXPECT_TRUE(p.dropped_context_ids.empty());
}

TEST(Prompt, CotAppendsInstructionToUserMessageOnly) {
  const std::vector<ResolvedContext> ctx = {doc_ctx("a.md#0", "alpha")};
  const auto plain = build_prompt("q", ctx, PromptStyle::kPlain, 100000);
  const auto cot = build_prompt("q", ctx, PromptStyle::kCot, 100000);
  EXPECT_EQ(cot.messages[0].content, plain.messages[0].content);
  EXPECT_EQ(cot.messages[1].content, plain.messages[1].content + std::string(kCotInstruction));
}

TEST(Prompt, EmptyContextMarkerAndHistory) {
  const std::vector<ChatMessage> history = {{Role::kUser, "earlier"}, {Role::kAssistant, "reply"}};
  const auto p = build_prompt("q", {}, PromptStyle::kPlain, 100000, 4.0, history);
  ASSERT_EQ(p.messages.size(), 4u);
  EXPECT_EQ(p.messages[1], history[0]);
  EXPECT_EQ(p.messages[2], history[1]);
  EXPECT_EQ(p.messages[3].content, "CONTEXT:\n(no context retrieved)\n\nQUESTION: q");
}

TEST(Prompt, DropsLowestRankedContextsToFitBudget) {
  const std::vector<ResolvedContext> ctx = {doc_ctx("a#0", std::string(400, 'a')), doc_ctx("b#0", std::string(400, 'b')),
                                            doc_ctx("c#0", std::string(400, 'c'))};
  const std::size_t system = estimate_tokens(kAnswerSystemPrompt, 4.0);
  const auto full = build_prompt("q", ctx, PromptStyle::kPlain, 1000000);
  const std::size_t full_tokens = system + estimate_tokens(full.messages[1].content, 4.0);
  const auto p = build_prompt("q", ctx, PromptStyle::kPlain, full_tokens - 1);
  EXPECT_EQ(p.dropped_context_ids, (std::vector<std::string>{"c#0"}));
  EXPECT_EQ(p.messages[1].content.find("[3]"), std::string::npos);
  EXPECT_EQ(build_prompt("q", ctx, PromptStyle::kPlain, full_tokens).dropped_context_ids.size(), 0u);
  const auto none = build_prompt("q", ctx, PromptStyle::kPlain, system + 20);
  EXPECT_EQ(none.dropped_context_ids, (std::vector<std::string>{"c#0", "b#0", "a#0"}));
  try {
    build_prompt("q", ctx, PromptStyle::kPlain, system);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kContextOverflow);
  }
  EXPECT_THROW(build_prompt("  ", ctx, PromptStyle::kPlain, 1000), Error);
}

TEST(PipelineConfig, ValidationAndJson) {
  PipelineConfig c;
  c.top_k_rerank = 30;
  EXPECT_THROW(c.validate(), Error);
  c = PipelineConfig{};
  c.prompt_style = PromptStyle::kCot;
  c.hyce_enabled = false;
  c.execution.max_commands_per_query = 3;
  const auto back = pipeline_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(pipeline_config_from_json(nlohmann::json::object()).top_k_retrieval, 20u);
  EXPECT_THROW(pipeline_config_from_json({{"prompt_style", "fancy"}}), Error);
}

TEST(Engine, HyceOnExecutesMatchingCommand) {
  auto s = testutil::offline_stack({testutil::contains("[CMD] cmd:", "live answer"), testutil::contains("QUESTION:", "doc answer")});
  const auto engine = RagEngine::build(docs(), registry(), s.gateway, testutil::memory_sandbox());
  const auto b = engine.answer_query("show current GPU availability", PipelineConfig{});
  EXPECT_EQ(b.answer, "live answer");
  ASSERT_FALSE(b.commands_executed.empty());
  EXPECT_EQ(b.commands_executed.front(), "gpu_availability");
  EXPECT_EQ(b.retrieved_ids.size(), 5u);
  EXPECT_EQ(b.reranked_ids.front(), "cmd:gpu_availability");
  const auto it = std::find_if(b.contexts.begin(), b.contexts.end(),
                               [](const ResolvedContext& c) { return c.chunk_id == "cmd:gpu_availability"; });
  ASSERT_NE(it, b.contexts.end());
  EXPECT_EQ(it->provenance, Provenance::kCommandExecution);
  EXPECT_NE(it->text.find("GPUS_FREE=3"), std::string::npos);
  const auto sent = s.chat->received();
  ASSERT_EQ(sent.size(), 1u);
  EXPECT_NE(sent[0].messages.back().content.find("GPUS_FREE=3"), std::string::npos);
  EXPECT_EQ(sent[0].temperature, 0.0);
  EXPECT_EQ(b.prompt_version, kAnswerPromptVersion);
  EXPECT_EQ(b.prompt_digest.size(), 64u);
}

TEST(Engine, HyceOffNeverSeesCommands) {
  auto s = testutil::offline_stack({testutil::contains("[CMD] cmd:", "live answer"), testutil::contains("QUESTION:", "doc answer")});
  const auto sb = testutil::memory_sandbox();
  const auto engine = RagEngine::build(docs(), registry(), s.gateway, sb);
  PipelineConfig off;
  off.hyce_enabled = false;
  const auto b = engine.answer_query("show current GPU availability", off);
  EXPECT_EQ(b.answer, "doc answer");
  EXPECT_TRUE(b.commands_executed.empty());
  EXPECT_EQ(b.retrieved_ids.size(), 3u);
  for (const auto& id : b.retrieved_ids) EXPECT_NE(id.rfind("cmd:", 0), 0u);
  EXPECT_TRUE(sb.audit->records().empty());
}

TEST(Engine, RerankCutsToTopKPrimeAndCapsCommands) {
  auto s = testutil::offline_stack({testutil::contains("QUESTION:", "ok")});
  const auto engine = RagEngine::build(docs(), registry(), s.gateway, testutil::memory_sandbox());
  PipelineConfig c;
  c.top_k_rerank = 2;
  c.execution.max_commands_per_query = 1;
  const auto b = engine.answer_query("list my running jobs and GPU availability", c);
  EXPECT_EQ(b.reranked_ids.size(), 2u);
  EXPECT_EQ(b.contexts.size(), 2u);
  EXPECT_EQ(b.commands_executed.size(), 1u);
}

TEST(Engine, EmptyQueryAndScriptMissPropagate) {
  auto s = testutil::offline_stack({});
  const auto engine = RagEngine::build(docs(), registry(), s.gateway, testutil::memory_sandbox());
  try {
    engine.answer_query("  ", PipelineConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
  try {
    engine.answer_query("anything", PipelineConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kScriptMiss);
  }
}

TEST(Engine, HistoryIsForwarded) {
  auto s = testutil::offline_stack({testutil::contains("QUESTION:", "ok")});
  const auto engine = RagEngine::build(docs(), registry(), s.gateway, testutil::memory_sandbox());
  const std::vector<ChatMessage> history = {{Role::kUser, "first"}, {Role::kAssistant, "second"}};
  engine.answer_query("storage quota", PipelineConfig{}, history);
  const auto sent = s.chat->received();
  ASSERT_EQ(sent[0].messages.size(), 4u);
  EXPECT_EQ(sent[0].messages[1].content, "first");
}

TEST(AnswerBundle, JsonRoundTrip) {
  auto s = testutil::offline_stack({testutil::contains("QUESTION:", "ok")});
  const auto engine = RagEngine::build(docs(), registry(), s.gateway, testutil::memory_sandbox());
  const auto b = engine.answer_query("show current GPU availability", PipelineConfig{});
  const auto j = to_json(b);
  EXPECT_EQ(to_json(answer_bundle_from_json(nlohmann::json::parse(j.dump()))), j);
}
