#include <gtest/gtest.h>

#include <thread>

#include <httplib.h>

#include "hpcrag/error.hpp"
#include "hpcrag/service.hpp"
#include "support/helpers.hpp"

using namespace hpcrag;

namespace {

std::vector<Chunk> docs() {
  return {testutil::doc_chunk("docs/storage.md#0", "Home directories have a 50 GB storage quota per user."),
          testutil::doc_chunk("docs/login.md#0", "Connect to the login node with ssh.")};
}

CommandRegistry registry() {
  return CommandRegistry({testutil::printf_spec("gpu_availability", "GPUS_FREE=3\\n",
                                                "show current GPU availability and free GPUs")});
}

std::shared_ptr<const RagEngine> engine_with(std::function<std::string(const std::string&)> fn) {
  return std::make_shared<RagEngine>(
      RagEngine::build(docs(), registry(), testutil::fn_gateway(std::move(fn)), testutil::memory_sandbox()));
}

std::string echo(const std::string& prompt) {
  return "echo: " + testutil::field_after(prompt, "QUESTION: ");
}

std::string chat_body(const std::string& message, const std::string& session = {}) {
  nlohmann::json j = {{"message", message}};
  if (!session.empty()) j["session_id"] = session;
  return j.dump();
}

}  // namespace

TEST(Service, HealthAndConfig) {
  ChatService svc(engine_with(echo), PipelineConfig{}, {{"profile", {{"api_key_env", "MY_KEY"}}}});
  const auto h = svc.handle_health();
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(h.body["status"], "ok");
  EXPECT_EQ(h.body["corpus_chunks"], 3);
  EXPECT_EQ(h.body["registry_size"], 1);
  EXPECT_EQ(svc.handle_config().body["profile"]["api_key_env"], "MY_KEY");
}

TEST(Service, ChatReturnsAnswerContextsAndSession) {
  ChatService svc(engine_with(echo), PipelineConfig{}, {});
  const auto r = svc.handle_chat(chat_body("show current GPU availability"));
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body["answer"], "echo: show current GPU availability");
  EXPECT_EQ(r.body["commands_executed"], nlohmann::json({"gpu_availability"}));
  const std::string sid = r.body["session_id"];
  EXPECT_EQ(sid.size(), 18u);
  EXPECT_EQ(sid.rfind("s-", 0), 0u);
  bool saw_cmd = false;
  for (const auto& c : r.body["contexts"]) {
    for (const char* k : {"chunk_id", "kind", "provenance", "text"}) EXPECT_TRUE(c.contains(k));
    if (c["provenance"] == "command_execution") {
      saw_cmd = true;
      EXPECT_NE(c["text"].get<std::string>().find("GPUS_FREE=3"), std::string::npos);
    }
  }
  EXPECT_TRUE(saw_cmd);
  EXPECT_NE(svc.handle_chat(chat_body("again")).body["session_id"], sid);
}

TEST(Service, HistoryIsCappedAndForwarded) {
  std::vector<std::size_t> sizes;
  std::mutex mu;
  ChatService svc(engine_with([&](const std::string& p) {
                    std::lock_guard lock(mu);
                    sizes.push_back(std::count(p.begin(), p.end(), '\n'));
                    return echo(p);
                  }),
                  PipelineConfig{}, {}, 2);
  const std::string sid = svc.handle_chat(chat_body("one")).body["session_id"];
  svc.handle_chat(chat_body("two", sid));
  svc.handle_chat(chat_body("three", sid));
  const auto t = svc.transcript(sid);
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[0].content, "two");
  EXPECT_EQ(t[1].content, "echo: two");
  EXPECT_EQ(t[3].content, "echo: three");
  EXPECT_TRUE(svc.transcript("s-unknown").empty());
}

TEST(Service, SessionsAreIsolated) {
  ChatService svc(engine_with(echo), PipelineConfig{}, {});
  const std::string a = svc.handle_chat(chat_body("alpha")).body["session_id"];
  const std::string b = svc.handle_chat(chat_body("beta")).body["session_id"];
  svc.handle_chat(chat_body("alpha two", a));
  EXPECT_EQ(svc.transcript(a).size(), 4u);
  ASSERT_EQ(svc.transcript(b).size(), 2u);
  EXPECT_EQ(svc.transcript(b)[0].content, "beta");
}

TEST(Service, ConcurrentSessionsKeepOrder) {
  ChatService svc(engine_with(echo), PipelineConfig{}, {});
  std::vector<std::thread> threads;
  for (int t = 0; t < 6; ++t) {
    threads.emplace_back([&svc, t] {
      const std::string sid = "s-t" + std::to_string(t);
      for (int i = 0; i < 3; ++i) svc.handle_chat(chat_body("m" + std::to_string(t) + "-" + std::to_string(i), sid));
    });
  }
  for (auto& th : threads) th.join();
  for (int t = 0; t < 6; ++t) {
    const auto tr = svc.transcript("s-t" + std::to_string(t));
    ASSERT_EQ(tr.size(), 6u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(tr[2 * i].content, "m" + std::to_string(t) + "-" + std::to_string(i));
  }
}

TEST(Service, BadRequests) {
  ChatService svc(engine_with(echo), PipelineConfig{}, {});
  EXPECT_EQ(svc.handle_chat("not json").status, 400);
  EXPECT_EQ(svc.handle_chat("[]").status, 400);
  EXPECT_EQ(svc.handle_chat(R"({"msg": "x"})").status, 400);
  EXPECT_EQ(svc.handle_chat(R"({"message": 3})").status, 400);
  EXPECT_EQ(svc.handle_chat(R"({"message": "x", "session_id": 7})").status, 400);
  const auto r = svc.handle_chat(R"({"message": "   "})");
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(r.body["error"], "EmptyInput");
}

TEST(Service, BackendErrorsMapToStatus) {
  const std::pair<ErrorCode, int> cases[] = {{ErrorCode::kBackendError, 502},
                                             {ErrorCode::kTransportError, 503},
                                             {ErrorCode::kScriptMiss, 500}};
  for (const auto& [code, status] : cases) {
    ChatService svc(engine_with([code = code](const std::string&) -> std::string { throw Error(code, "failed"); }),
                    PipelineConfig{}, {});
    const auto r = svc.handle_chat(chat_body("hello"));
    EXPECT_EQ(r.status, status);
    EXPECT_EQ(r.body["error"], std::string(error_code_name(code)));
  }
  PipelineConfig tiny;
  tiny.context_token_budget = 5;
  ChatService svc(engine_with(echo), tiny, {});
  EXPECT_EQ(svc.handle_chat(chat_body("hello")).status, 413);
}

TEST(Service, RealHttpRoundTrip) {
  ChatService svc(engine_with(echo), PipelineConfig{}, {{"service", "test"}});
  const int port = svc.bind_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread server([&] { svc.listen_after_bind(); });
  svc.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/api/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(nlohmann::json::parse(res->body)["status"], "ok");
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");

  res = client.Get("/api/config");
  ASSERT_TRUE(res);
  EXPECT_EQ(nlohmann::json::parse(res->body)["service"], "test");

  res = client.Post("/api/chat", chat_body("storage quota"), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto body = nlohmann::json::parse(res->body);
  EXPECT_EQ(body["answer"], "echo: storage quota");

  res = client.Post("/api/chat", "{", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  res = client.Options("/api/chat");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);

  res = client.Get("/api/nothing");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);

  svc.stop();
  server.join();
}
