#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "hpcrag/commands.hpp"
#include "hpcrag/gateway.hpp"
#include "hpcrag/offline_backends.hpp"
#include "hpcrag/pipeline.hpp"

namespace testutil {

inline std::filesystem::path data_dir() { return HPCRAG_DATA_DIR; }

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hpcrag-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

  std::filesystem::path write(const std::string& rel, const std::string& content) const {
    const auto p = path_ / rel;
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << content;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

using Script = std::vector<hpcrag::ScriptedChatBackend::Entry>;

inline hpcrag::ScriptedChatBackend::Entry contains(std::string pattern, std::string reply) {
  return {hpcrag::ScriptedChatBackend::Match::kContains, std::move(pattern), std::move(reply)};
}

struct OfflineStack {
  std::shared_ptr<hpcrag::ScriptedChatBackend> chat;
  std::shared_ptr<hpcrag::AuditLog> audit;
  std::shared_ptr<hpcrag::ModelGateway> gateway;
};

inline OfflineStack offline_stack(Script script, hpcrag::GatewayOptions options = {}) {
  OfflineStack s;
  s.chat = std::make_shared<hpcrag::ScriptedChatBackend>(std::move(script));
  s.audit = std::make_shared<hpcrag::AuditLog>(std::filesystem::path{}, true);
  s.gateway = std::make_shared<hpcrag::ModelGateway>(std::make_shared<hpcrag::HashEmbeddingBackend>(),
                                                     std::make_shared<hpcrag::TokenOverlapReranker>(), s.chat,
                                                     options, s.audit);
  return s;
}

// Chat backend whose reply is computed from the joined prompt text.
class FnChat final : public hpcrag::ChatBackend {
 public:
  explicit FnChat(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}
  std::string model_id() const override { return "test-fn"; }
  std::string complete(const hpcrag::ChatRequest& request) const override {
    return fn_(hpcrag::ScriptedChatBackend::prompt_text(request));
  }

 private:
  std::function<std::string(const std::string&)> fn_;
};

inline std::shared_ptr<hpcrag::ModelGateway> fn_gateway(std::function<std::string(const std::string&)> fn,
                                                        hpcrag::GatewayOptions options = {}) {
  return std::make_shared<hpcrag::ModelGateway>(std::make_shared<hpcrag::HashEmbeddingBackend>(),
                                                std::make_shared<hpcrag::TokenOverlapReranker>(),
                                                std::make_shared<FnChat>(std::move(fn)), options);
}

// Text between `after` and the next newline (or end of text).
inline std::string field_after(const std::string& text, const std::string& after) {
  const auto p = text.find(after);
  if (p == std::string::npos) return {};
  const auto start = p + after.size();
  const auto end = text.find('\n', start);
  return text.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

inline hpcrag::CommandSpec printf_spec(std::string name, std::string output, std::string description) {
  hpcrag::CommandSpec s;
  s.name = std::move(name);
  s.argv = {"printf", std::move(output)};
  s.description = std::move(description);
  s.timeout_ms = 5000;
  return s;
}

inline hpcrag::SandboxPolicy memory_sandbox() {
  hpcrag::SandboxPolicy s;
  s.audit = std::make_shared<hpcrag::AuditLog>(std::filesystem::path{}, true);
  return s;
}

inline hpcrag::Chunk doc_chunk(std::string id, std::string text) {
  hpcrag::Chunk c;
  c.doc_id = id.substr(0, id.find('#'));
  c.id = std::move(id);
  c.text = std::move(text);
  return c;
}

}  // namespace testutil
