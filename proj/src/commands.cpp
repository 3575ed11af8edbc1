#include "hpcrag/commands.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <regex>
#include <set>
#include <tuple>

#include <yaml-cpp/yaml.h>

#include "hpcrag/text.hpp"

#ifndef CLOSE_RANGE_CLOEXEC
#define CLOSE_RANGE_CLOEXEC (1U << 2)
#endif

extern char** environ;

namespace hpcrag {

namespace fs = std::filesystem;

std::string CommandSpec::raw_command() const {
  std::string out;
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += argv[i];
  }
  return out;
}

bool has_placeholder(std::string_view token) {
  static const std::regex kPattern(R"(\{[^{}]*\}|\$[A-Za-z_{(]|`)");
  return std::regex_search(token.begin(), token.end(), kPattern);
}

void CommandSpec::validate() const {
  const auto fail = [this](const std::string& why) {
    throw Error(ErrorCode::kInvalidSpec, "command '" + name + "': " + why);
  };
  if (trim(name).empty()) throw Error(ErrorCode::kInvalidSpec, "command with an empty name");
  if (argv.empty() || argv.front().empty()) fail("argv is empty");
  for (const auto& tok : argv) {
    if (has_placeholder(tok)) fail("argv token '" + tok + "' contains placeholder syntax");
    if (tok.find('\0') != std::string::npos) fail("argv token contains a NUL byte");
  }
  if (trim(description).empty()) fail("description is empty");
  if (trim(description) == trim(raw_command())) fail("description must explain the command, not repeat it");
  if (timeout_ms <= 0) fail("timeout_ms must be positive");
  if (max_output_bytes == 0) fail("max_output_bytes must be positive");
}

CommandRegistry::CommandRegistry(std::vector<CommandSpec> specs) : specs_(std::move(specs)) {
  std::set<std::string> names;
  for (const auto& s : specs_) {
    s.validate();
    if (!names.insert(s.name).second) {
      throw Error(ErrorCode::kDuplicateName, "command name '" + s.name + "' is registered twice");
    }
  }
}

CommandRegistry CommandRegistry::from_json(const nlohmann::json& list) {
  if (!list.is_array()) throw Error(ErrorCode::kParseError, "command registry must be a list");
  std::vector<CommandSpec> specs;
  for (const auto& item : list) {
    try {
      CommandSpec s;
      s.name = item.at("name").get<std::string>();
      s.argv = item.at("argv").get<std::vector<std::string>>();
      s.description = item.at("description").get<std::string>();
      s.timeout_ms = item.value("timeout_ms", s.timeout_ms);
      s.max_output_bytes = item.value("max_output_bytes", s.max_output_bytes);
      s.enabled = item.value("enabled", s.enabled);
      specs.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError, std::string("malformed command entry: ") + e.what());
    }
  }
  return CommandRegistry(std::move(specs));
}

namespace {

nlohmann::json yaml_registry_to_json(const YAML::Node& root) {
  if (!root.IsSequence()) throw Error(ErrorCode::kParseError, "command registry must be a list");
  nlohmann::json out = nlohmann::json::array();
  for (const auto& item : root) {
    if (!item.IsMap()) throw Error(ErrorCode::kParseError, "command entry must be a mapping");
    nlohmann::json j = nlohmann::json::object();
    for (const auto& kv : item) {
      const auto key = kv.first.as<std::string>();
      const auto& v = kv.second;
      if (key == "argv") {
        if (!v.IsSequence()) throw Error(ErrorCode::kParseError, "argv must be a list");
        nlohmann::json argv = nlohmann::json::array();
        for (const auto& tok : v) argv.push_back(tok.as<std::string>());
        j[key] = std::move(argv);
      } else if (key == "timeout_ms") {
        j[key] = v.as<int>();
      } else if (key == "max_output_bytes") {
        j[key] = v.as<std::size_t>();
      } else if (key == "enabled") {
        j[key] = v.as<bool>();
      } else {
        j[key] = v.as<std::string>();
      }
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace

CommandRegistry CommandRegistry::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kPathNotFound, "command registry not found: " + path.string());
  const auto ext = to_lower_ascii(path.extension().string());
  try {
    if (ext == ".yaml" || ext == ".yml") return from_json(yaml_registry_to_json(YAML::Load(in)));
    return from_json(nlohmann::json::parse(in));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::kParseError, "registry " + path.string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, "registry " + path.string() + ": " + e.what());
  }
}

const CommandSpec* CommandRegistry::find(std::string_view name) const {
  for (const auto& s : specs_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::size_t CommandRegistry::enabled_count() const {
  std::size_t n = 0;
  for (const auto& s : specs_) n += s.enabled ? 1 : 0;
  return n;
}

std::vector<Chunk> command_chunks(const CommandRegistry& registry) {
  std::vector<Chunk> out;
  for (const auto& s : registry.specs()) {
    if (!s.enabled) continue;
    Chunk c;
    c.id = std::string(kCommandChunkPrefix) + s.name;
    c.doc_id = c.id;
    c.ordinal = 0;
    c.kind = ChunkKind::kCommand;
    c.text = s.description;
    out.push_back(std::move(c));
  }
  return out;
}

std::optional<std::string> command_name_from_chunk_id(std::string_view chunk_id) {
  if (chunk_id.substr(0, kCommandChunkPrefix.size()) != kCommandChunkPrefix) return std::nullopt;
  return std::string(chunk_id.substr(kCommandChunkPrefix.size()));
}

namespace {

class SlotLease {
 public:
  explicit SlotLease(ProcessSlots* slots) : slots_(slots) {
    if (slots_) slots_->acquire();
  }
  ~SlotLease() {
    if (slots_) slots_->release();
  }
  SlotLease(const SlotLease&) = delete;
  SlotLease& operator=(const SlotLease&) = delete;

 private:
  ProcessSlots* slots_;
};

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  int get() const noexcept { return fd_; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

std::pair<Fd, Fd> make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) {
    throw Error(ErrorCode::kSpawnError, std::string("pipe2 failed: ") + std::strerror(errno));
  }
  return {Fd(fds[0]), Fd(fds[1])};
}

std::string getenv_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : fallback;
}

std::vector<std::string> filtered_environment(const std::vector<std::string>& allow) {
  std::vector<std::string> env;
  for (const auto& name : allow) {
    if (const char* v = std::getenv(name.c_str())) env.push_back(name + "=" + v);
  }
  return env;
}

std::string resolve_program(const std::string& program, const std::vector<std::string>& allow) {
  if (program.find('/') != std::string::npos) return program;
  std::string path = "/usr/local/bin:/usr/bin:/bin";
  for (const auto& n : allow) {
    if (n == "PATH") path = getenv_or("PATH", path);
  }
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto end = path.find(':', start);
    const std::string dir = path.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!dir.empty()) {
      const std::string candidate = dir + "/" + program;
      if (::access(candidate.c_str(), X_OK) == 0) return candidate;
    }
    if (end == std::string::npos) break;
    start = end + 1;
  }
  throw Error(ErrorCode::kSpawnError, "program '" + program + "' not found on PATH");
}

[[noreturn]] void child_fail(int err_fd, int stage) {
  const int payload[2] = {stage, errno};
  [[maybe_unused]] auto n = ::write(err_fd, payload, sizeof(payload));
  ::_exit(127);
}

// Appends incoming bytes while the shared budget lasts.
struct CaptureBuffer {
  std::string out, err;
  std::size_t limit;
  bool overflow = false;
  bool overflow_in_stderr = false;

  void take(std::string& dst, const char* data, std::size_t n, bool is_stderr) {
    const std::size_t used = out.size() + err.size();
    const std::size_t room = used < limit ? limit - used : 0;
    const std::size_t keep = std::min(room, n);
    dst.append(data, keep);
    if (keep < n && !overflow) {
      overflow = true;
      overflow_in_stderr = is_stderr;
    }
  }
};

std::int64_t ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

CommandOutput execute_command(const CommandRegistry& registry, std::string_view name, const SandboxPolicy& sandbox,
                              std::string_view query_digest) {
  const CommandSpec* spec = registry.find(name);
  if (!spec) throw Error(ErrorCode::kNotInRegistry, "command '" + std::string(name) + "' is not registered");
  if (!spec->enabled) throw Error(ErrorCode::kDisabled, "command '" + spec->name + "' is disabled");

  const std::string program = resolve_program(spec->argv.front(), sandbox.env_allowlist);
  const std::vector<std::string> env = filtered_environment(sandbox.env_allowlist);
  const std::string cwd = sandbox.working_dir.string();

  // Everything the child touches is prepared before fork().
  std::vector<char*> argv_ptrs;
  for (const auto& a : spec->argv) argv_ptrs.push_back(const_cast<char*>(a.c_str()));
  argv_ptrs.push_back(nullptr);
  std::vector<char*> env_ptrs;
  for (const auto& e : env) env_ptrs.push_back(const_cast<char*>(e.c_str()));
  env_ptrs.push_back(nullptr);

  SlotLease lease(sandbox.slots.get());

  auto [out_r, out_w] = make_pipe();
  auto [err_r, err_w] = make_pipe();
  auto [status_r, status_w] = make_pipe();
  Fd devnull(::open("/dev/null", O_RDONLY | O_CLOEXEC));
  if (devnull.get() < 0) throw Error(ErrorCode::kSpawnError, "cannot open /dev/null");

  const auto start = std::chrono::steady_clock::now();
  const pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorCode::kSpawnError, std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    const int efd = status_w.get();
    ::setpgid(0, 0);
    sigset_t none;
    sigemptyset(&none);
    ::sigprocmask(SIG_SETMASK, &none, nullptr);
    ::signal(SIGPIPE, SIG_DFL);
    if (::dup2(devnull.get(), STDIN_FILENO) < 0 || ::dup2(out_w.get(), STDOUT_FILENO) < 0 ||
        ::dup2(err_w.get(), STDERR_FILENO) < 0) {
      child_fail(efd, 1);
    }
    if (::syscall(SYS_close_range, 3U, ~0U, CLOSE_RANGE_CLOEXEC) != 0) {
      for (int fd = 3; fd < 4096; ++fd) {
        if (fd != efd) ::fcntl(fd, F_SETFD, FD_CLOEXEC);
      }
    }
    if (::chdir(cwd.c_str()) != 0) child_fail(efd, 2);
    ::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0);
    const rlimit no_core{0, 0};
    ::setrlimit(RLIMIT_CORE, &no_core);
    ::umask(077);
    ::execve(program.c_str(), argv_ptrs.data(), env_ptrs.data());
    child_fail(efd, 3);
  }
  ::setpgid(pid, pid);
  out_w.reset();
  err_w.reset();
  status_w.reset();
  devnull.reset();

  // exec succeeded iff the CLOEXEC status pipe closes without data.
  int failure[2] = {0, 0};
  ssize_t got;
  do {
    got = ::read(status_r.get(), failure, sizeof(failure));
  } while (got < 0 && errno == EINTR);
  if (got == static_cast<ssize_t>(sizeof(failure))) {
    int st = 0;
    ::waitpid(pid, &st, 0);
    static constexpr const char* kStage[] = {"", "redirect stdio", "chdir to sandbox dir", "execve"};
    throw Error(ErrorCode::kSpawnError, "command '" + spec->name + "': " + kStage[failure[0] % 4] +
                                            " failed: " + std::strerror(failure[1]));
  }

  CaptureBuffer cap;
  cap.limit = spec->max_output_bytes;
  const auto deadline = start + std::chrono::milliseconds(spec->timeout_ms);
  bool out_open = true, err_open = true, reaped = false, timed_out = false, group_killed = false;
  int status = 0;
  char buf[8192];

  while (out_open || err_open || !reaped) {
    if (!reaped) {
      const pid_t r = ::waitpid(pid, &status, WNOHANG);
      if (r == pid) reaped = true;
    }
    if (reaped && (out_open || err_open) && !group_killed) {
      // Leader exited but something in its group still holds the pipes.
      ::kill(-pid, SIGKILL);
      group_killed = true;
    }
    if (!out_open && !err_open && reaped) break;

    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      // A detached descendant outside the group may hold the pipes forever.
      if (reaped) break;
      timed_out = true;
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      reaped = true;
      group_killed = true;
      continue;
    }
    if (!out_open && !err_open) {
      // Only waiting for the exit status now.
      ::usleep(1000);
      continue;
    }
    pollfd fds[2];
    nfds_t n = 0;
    if (out_open) fds[n++] = {out_r.get(), POLLIN, 0};
    if (err_open) fds[n++] = {err_r.get(), POLLIN, 0};
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    const int wait_ms = static_cast<int>(std::clamp<long long>(remaining, 1, 20));
    const int pr = ::poll(fds, n, wait_ms);
    if (pr < 0 && errno != EINTR) break;
    for (nfds_t i = 0; i < n && pr > 0; ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      const bool is_err = fds[i].fd == err_r.get();
      const ssize_t k = ::read(fds[i].fd, buf, sizeof(buf));
      if (k > 0) {
        cap.take(is_err ? cap.err : cap.out, buf, static_cast<std::size_t>(k), is_err);
      } else if (k == 0 || (errno != EINTR && errno != EAGAIN)) {
        (is_err ? err_open : out_open) = false;
      }
    }
  }
  for (auto [fd, open, is_err] : {std::tuple{out_r.get(), out_open, false}, std::tuple{err_r.get(), err_open, true}}) {
    while (open) {
      pollfd p{fd, POLLIN, 0};
      if (::poll(&p, 1, 0) <= 0) break;
      const ssize_t k = ::read(fd, buf, sizeof(buf));
      if (k <= 0) break;
      cap.take(is_err ? cap.err : cap.out, buf, static_cast<std::size_t>(k), is_err);
    }
  }

  CommandOutput result;
  result.spec_name = spec->name;
  result.duration_ms = ms_since(start);
  result.timed_out = timed_out;
  if (timed_out) {
    result.exit_code = -1;
  } else if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  bool bad_out = false, bad_err = false;
  result.stdout_text = sanitize_utf8(cap.out, &bad_out);
  result.stderr_text = sanitize_utf8(cap.err, &bad_err);
  result.decode_replaced = bad_out || bad_err;
  result.truncated = cap.overflow;
  if (cap.overflow) (cap.overflow_in_stderr ? result.stderr_text : result.stdout_text) += kTruncationMarker;

  if (sandbox.audit) {
    sandbox.audit->append({{"timestamp", iso_timestamp()},
                           {"query_digest", std::string(query_digest)},
                           {"spec_name", spec->name},
                           {"argv", spec->argv},
                           {"exit_code", result.exit_code},
                           {"duration_ms", result.duration_ms},
                           {"truncated", result.truncated},
                           {"timed_out", result.timed_out}});
  }
  if (timed_out) {
    throw CommandTimeout("command '" + spec->name + "' exceeded " + std::to_string(spec->timeout_ms) + " ms",
                         std::move(result));
  }
  return result;
}

std::string_view provenance_name(Provenance p) noexcept {
  return p == Provenance::kCommandExecution ? "command_execution" : "document";
}

namespace {

std::string fence_for(std::string_view content) {
  std::size_t longest = 0, run = 0;
  for (char c : content) {
    run = c == '`' ? run + 1 : 0;
    longest = std::max(longest, run);
  }
  return std::string(std::max<std::size_t>(3, longest + 1), '`');
}

void append_block(std::string& out, std::string_view label, std::string_view content) {
  const std::string fence = fence_for(content);
  out += label;
  out += ":\n";
  out += fence;
  out += '\n';
  out += content;
  if (!content.empty() && content.back() != '\n') out += '\n';
  out += fence;
  out += '\n';
}

std::string render_unexecuted(const CommandSpec& spec, std::string_view reason) {
  return "Command: " + spec.name + "\nDescription: " + spec.description + "\nStatus: not executed (" +
         std::string(reason) + ")\n";
}

}  // namespace

std::string render_command_context(const CommandSpec& spec, const CommandOutput& output) {
  std::string out = "Command: " + spec.name + "\nDescription: " + spec.description + "\n";
  if (output.timed_out) {
    out += "Status: timed out after " + std::to_string(spec.timeout_ms) + " ms; output below is partial\n";
  } else if (output.exit_code != 0) {
    out += "Status: failed with exit code " + std::to_string(output.exit_code) + "\n";
  } else {
    out += "Status: succeeded (exit code 0)\n";
  }
  append_block(out, "Output", output.stdout_text);
  if (!output.stderr_text.empty()) append_block(out, "Stderr", output.stderr_text);
  return out;
}

std::vector<ResolvedContext> resolve_contexts(std::span<const ScoredChunk> ranked, const ChunkTable& chunks,
                                              const CommandRegistry& registry, const SandboxPolicy& sandbox,
                                              const ExecutionPolicy& policy, std::string_view query_digest) {
  std::vector<ResolvedContext> out;
  out.reserve(ranked.size());
  std::size_t executed = 0;
  for (const auto& item : ranked) {
    const Chunk& chunk = chunks.at(item.chunk_id);
    ResolvedContext ctx;
    ctx.chunk_id = chunk.id;
    ctx.kind = chunk.kind;
    if (chunk.kind != ChunkKind::kCommand) {
      ctx.text = chunk.text;
      out.push_back(std::move(ctx));
      continue;
    }
    const auto name = command_name_from_chunk_id(chunk.id).value_or(chunk.id);
    const CommandSpec* spec = registry.find(name);
    if (!spec || !spec->enabled) {
      CommandSpec shown;
      shown.name = name;
      shown.description = chunk.text;
      ctx.text = render_unexecuted(shown, spec ? "command is disabled" : "command is not in the registry");
      out.push_back(std::move(ctx));
      continue;
    }
    if (executed >= policy.max_commands_per_query) {
      ctx.text = render_unexecuted(*spec, "per-query command limit reached");
      out.push_back(std::move(ctx));
      continue;
    }
    ++executed;
    ctx.provenance = Provenance::kCommandExecution;
    try {
      ctx.command_output = execute_command(registry, name, sandbox, query_digest);
    } catch (const CommandTimeout& e) {
      ctx.command_output = e.partial();
    } catch (const Error& e) {
      // The process never started; report it like a shell would.
      CommandOutput failed;
      failed.spec_name = spec->name;
      failed.exit_code = 127;
      failed.stderr_text = e.what();
      ctx.command_output = std::move(failed);
    }
    ctx.text = render_command_context(*spec, *ctx.command_output);
    out.push_back(std::move(ctx));
  }
  return out;
}

nlohmann::json to_json(const CommandOutput& o) {
  return {{"spec_name", o.spec_name},   {"exit_code", o.exit_code},     {"stdout", o.stdout_text},
          {"stderr", o.stderr_text},    {"truncated", o.truncated},     {"duration_ms", o.duration_ms},
          {"timed_out", o.timed_out},   {"decode_replaced", o.decode_replaced}};
}

CommandOutput command_output_from_json(const nlohmann::json& j) {
  CommandOutput o;
  o.spec_name = j.at("spec_name").get<std::string>();
  o.exit_code = j.at("exit_code").get<int>();
  o.stdout_text = j.at("stdout").get<std::string>();
  o.stderr_text = j.at("stderr").get<std::string>();
  o.truncated = j.at("truncated").get<bool>();
  o.duration_ms = j.at("duration_ms").get<std::int64_t>();
  o.timed_out = j.value("timed_out", false);
  o.decode_replaced = j.value("decode_replaced", false);
  return o;
}

nlohmann::json to_json(const ResolvedContext& c) {
  nlohmann::json j = {{"chunk_id", c.chunk_id},
                      {"kind", kind_name(c.kind)},
                      {"provenance", provenance_name(c.provenance)},
                      {"text", c.text}};
  j["command_output"] = c.command_output ? to_json(*c.command_output) : nlohmann::json(nullptr);
  return j;
}

ResolvedContext resolved_context_from_json(const nlohmann::json& j) {
  ResolvedContext c;
  c.chunk_id = j.at("chunk_id").get<std::string>();
  c.kind = parse_kind(j.at("kind").get<std::string>());
  c.provenance = j.at("provenance").get<std::string>() == "command_execution" ? Provenance::kCommandExecution
                                                                               : Provenance::kDocument;
  c.text = j.at("text").get<std::string>();
  if (j.contains("command_output") && !j["command_output"].is_null()) {
    c.command_output = command_output_from_json(j["command_output"]);
  }
  return c;
}

}  // namespace hpcrag
