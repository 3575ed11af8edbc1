#include "hpcrag/autoeval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>
#include <unordered_map>

#include "hpcrag/error.hpp"
#include "hpcrag/parallel.hpp"
#include "hpcrag/text.hpp"

namespace hpcrag {

namespace {

constexpr std::string_view kGenerationSystem =
    "You write evaluation data for an HPC cluster support assistant. Use only the context you are given.";

constexpr std::string_view kRaterSystem =
    "You are a strict reviewer. Follow the output format exactly and answer only with the requested lines.";

constexpr std::string_view kFilterLabels[] = {"groundedness", "relevance", "standalone"};
constexpr std::string_view kJudgeLabels[] = {"correctness", "faithfulness"};

std::string generation_prompt(QaOrigin origin, std::string_view context) {
  std::string p(kGenerationPromptHeader);
  p += origin == QaOrigin::kCommand ? " an HPC support assistant from the command output below."
                                    : " an HPC support assistant from the documentation excerpt below.";
  p +=
      " The question must be something a cluster user would ask, answerable from the context alone, and must "
      "make sense without seeing the context. The answer must be short and factual.\n"
      "Reply with exactly one fenced block in this form:\n"
      "```qa\nquestion: <the question>\nanswer: <the answer>\n```\n\n"
      "Context:\n";
  p += context;
  return p;
}

std::string filter_prompt(const QAPair& pair, std::string_view context) {
  std::string p(kFilterPromptHeader);
  p +=
      ". Score each criterion 1 for success or 0 for failure.\n"
      "- groundedness: the question can be answered unambiguously using the context.\n"
      "- relevance: the question is relevant to users of an HPC cluster.\n"
      "- standalone: the question is understandable without seeing the context.\n"
      "Reply with exactly three lines in this form:\n"
      "groundedness: <0 or 1>\nrelevance: <0 or 1>\nstandalone: <0 or 1>\n\n"
      "Context:\n";
  p += context;
  p += "\n\nQuestion: ";
  p += pair.question;
  p += "\nAnswer: ";
  p += pair.reference_answer;
  return p;
}

std::string judge_prompt(const PredictionRecord& record, const QAPair& pair, std::string_view context) {
  std::string p(kJudgePromptHeader);
  p +=
      " against the reference answer. Score each criterion 1 for success or 0 for failure.\n"
      "- correctness: the predicted answer accurately matches the reference answer.\n"
      "- faithfulness: the predicted answer is free from errors and does not hallucinate beyond the context.\n"
      "Reply with exactly two lines in this form:\n"
      "correctness: <0 or 1>\nfaithfulness: <0 or 1>\n\n"
      "Context:\n";
  p += context;
  p += "\n\nQuestion: ";
  p += pair.question;
  p += "\nReference answer: ";
  p += pair.reference_answer;
  p += "\nPredicted answer: ";
  p += record.predicted_answer;
  return p;
}

std::string ask(const ModelGateway& gateway, std::string_view system, std::string user) {
  ChatRequest req;
  req.messages.push_back({Role::kSystem, std::string(system)});
  req.messages.push_back({Role::kUser, std::move(user)});
  return gateway.complete_chat(std::move(req));
}

std::string_view source_context(const QAPair& pair, const ChunkTable& chunks) {
  if (!pair.context.empty()) return pair.context;
  const Chunk* c = chunks.find(pair.source_chunk_id);
  if (!c) throw Error(ErrorCode::kInvalidArgument, "source chunk not found: " + pair.source_chunk_id);
  return c->text;
}

// Uniform integer in [0, bound) by rejection on raw 64-bit draws.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  for (;;) {
    const std::uint64_t x = rng();
    if (x < limit) return x % bound;
  }
}

std::string slot_id(std::size_t slot) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "qa-%04zu", slot + 1);
  return buf;
}

std::string regex_escape(std::string_view s) {
  static const std::string special = R"(\^$.|?*+()[]{})";
  std::string out;
  for (char c : s) {
    if (special.find(c) != std::string::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace

std::string_view origin_name(QaOrigin origin) noexcept {
  return origin == QaOrigin::kCommand ? "command" : "documentation";
}

std::optional<std::pair<std::string, std::string>> parse_qa_block(std::string_view reply) {
  const std::string lower = to_lower_ascii(reply);
  const auto open = lower.find("```qa");
  if (open == std::string::npos) return std::nullopt;
  auto body_start = reply.find('\n', open);
  if (body_start == std::string_view::npos) return std::nullopt;
  ++body_start;
  auto close = reply.find("```", body_start);
  std::string_view body = reply.substr(body_start, close == std::string_view::npos ? reply.npos : close - body_start);

  std::string question, answer;
  std::string* field = nullptr;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto nl = body.find('\n', pos);
    std::string_view line = body.substr(pos, nl == std::string_view::npos ? body.npos : nl - pos);
    const std::string_view t = trim(line);
    if (starts_with_icase(t, "question:")) {
      field = &question;
      field->assign(trim(t.substr(9)));
    } else if (starts_with_icase(t, "answer:")) {
      field = &answer;
      field->assign(trim(t.substr(7)));
    } else if (field) {
      field->push_back('\n');
      field->append(line);
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  question = std::string(trim(question));
  answer = std::string(trim(answer));
  if (question.empty() || answer.empty()) return std::nullopt;
  return std::make_pair(std::move(question), std::move(answer));
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t wanted, std::uint64_t seed) {
  std::vector<std::size_t> out;
  if (n == 0 || wanted == 0) return out;
  out.reserve(wanted);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> perm(n);
  while (out.size() < wanted) {
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[bounded(rng, i + 1)]);
    for (std::size_t i = 0; i < n && out.size() < wanted; ++i) out.push_back(perm[i]);
  }
  return out;
}

GenerationResult generate_qa(const ChunkTable& chunks, const CommandRegistry& registry, const SandboxPolicy& sandbox,
                             const ModelGateway& gateway, const GenerationOptions& options) {
  std::vector<const Chunk*> docs;
  for (const auto& c : chunks.chunks()) {
    if (c.kind == ChunkKind::kDocumentation) docs.push_back(&c);
  }
  std::vector<const CommandSpec*> cmds;
  for (const auto& s : registry.specs()) {
    if (s.enabled) cmds.push_back(&s);
  }
  if (options.n_doc > 0 && docs.empty()) {
    throw Error(ErrorCode::kInsufficientChunks, "no documentation chunks to generate from");
  }
  if (options.n_cmd > 0 && cmds.empty()) {
    throw Error(ErrorCode::kInsufficientChunks, "no enabled commands to generate from");
  }

  struct Slot {
    QaOrigin origin;
    std::size_t index;
  };
  std::vector<Slot> slots;
  for (auto i : sample_indices(docs.size(), options.n_doc, options.seed)) slots.push_back({QaOrigin::kDocumentation, i});
  for (auto i : sample_indices(cmds.size(), options.n_cmd, options.seed ^ 0x9e3779b97f4a7c15ULL)) {
    slots.push_back({QaOrigin::kCommand, i});
  }

  std::vector<std::optional<QAPair>> made(slots.size());
  std::vector<std::optional<GenerationDeficit>> missed(slots.size());

  parallel_for(slots.size(), options.max_parallel, [&](std::size_t s) {
    QAPair pair;
    pair.id = slot_id(s);
    pair.origin = slots[s].origin;
    if (pair.origin == QaOrigin::kDocumentation) {
      const Chunk& c = *docs[slots[s].index];
      pair.source_chunk_id = c.id;
      pair.context = c.text;
    } else {
      const CommandSpec& spec = *cmds[slots[s].index];
      pair.source_chunk_id = std::string(kCommandChunkPrefix) + spec.name;
      CommandOutput out;
      try {
        out = execute_command(registry, spec.name, sandbox, sha256_hex("autoeval:" + pair.id));
      } catch (const CommandTimeout& e) {
        out = e.partial();
      } catch (const Error& e) {
        missed[s] = GenerationDeficit{pair.id, pair.source_chunk_id, e.what()};
        return;
      }
      pair.context = render_command_context(spec, out);
      pair.command_output_digest = sha256_hex(pair.context);
    }

    const std::string prompt = generation_prompt(pair.origin, pair.context);
    auto parsed = parse_qa_block(ask(gateway, kGenerationSystem, prompt));
    if (!parsed) {
      parsed = parse_qa_block(ask(gateway, kGenerationSystem, prompt + "\n\n" + std::string(kGenerationRetryNote)));
    }
    if (!parsed) {
      missed[s] = GenerationDeficit{pair.id, pair.source_chunk_id, "unparseable generation after one retry"};
      return;
    }
    pair.question = std::move(parsed->first);
    pair.reference_answer = std::move(parsed->second);
    made[s] = std::move(pair);
  });

  GenerationResult result;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (made[s]) result.pairs.push_back(std::move(*made[s]));
    if (missed[s]) result.deficits.push_back(std::move(*missed[s]));
  }
  return result;
}

std::optional<std::map<std::string, int>> parse_binary_labels(std::string_view reply,
                                                              std::span<const std::string_view> labels) {
  std::map<std::string, int> found;
  std::vector<std::pair<std::string, std::regex>> patterns;
  for (auto label : labels) {
    patterns.emplace_back(std::string(label),
                          std::regex(R"(^\s*(?:[-*+]\s+)?[*_]*)" + regex_escape(label) +
                                         R"([*_]*\s*[:=]\s*[*_]*([01])[*_]*(?![0-9A-Za-z_]|\.[0-9]))",
                                     std::regex::ECMAScript | std::regex::icase));
  }
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    auto nl = reply.find('\n', pos);
    const std::string line(reply.substr(pos, nl == std::string_view::npos ? reply.npos : nl - pos));
    for (const auto& [label, re] : patterns) {
      std::smatch m;
      if (!std::regex_search(line, m, re)) continue;
      const int v = m[1].str() == "1" ? 1 : 0;
      auto [it, inserted] = found.emplace(label, v);
      if (!inserted && it->second != v) return std::nullopt;
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  if (found.size() != labels.size()) return std::nullopt;
  return found;
}

FilterResult filter_qa(std::span<const QAPair> pairs, const ChunkTable& chunks, const ModelGateway& gateway,
                       std::size_t max_parallel) {
  std::vector<FilterVerdict> verdicts(pairs.size());
  parallel_for(pairs.size(), max_parallel, [&](std::size_t i) {
    const QAPair& pair = pairs[i];
    FilterVerdict v;
    v.qa_id = pair.id;
    v.rater_raw = ask(gateway, kRaterSystem, filter_prompt(pair, source_context(pair, chunks)));
    if (auto scores = parse_binary_labels(v.rater_raw, kFilterLabels)) {
      v.groundedness = scores->at("groundedness");
      v.relevance = scores->at("relevance");
      v.standalone = scores->at("standalone");
    }
    verdicts[i] = std::move(v);
  });
  FilterResult result;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (verdicts[i].passed()) result.kept.push_back(pairs[i]);
  }
  result.verdicts = std::move(verdicts);
  return result;
}

std::vector<PredictionRecord> run_rag_on_set(std::span<const QAPair> kept, std::span<const LabeledConfig> configs,
                                             const RagEngine& engine, std::size_t max_parallel) {
  std::vector<PredictionRecord> out(kept.size() * configs.size());
  parallel_for(out.size(), max_parallel, [&](std::size_t n) {
    const LabeledConfig& cfg = configs[n / kept.size()];
    const QAPair& pair = kept[n % kept.size()];
    PredictionRecord r;
    r.qa_id = pair.id;
    r.config_label = cfg.label;
    r.question = pair.question;
    try {
      AnswerBundle b = engine.answer_query(pair.question, cfg.config);
      r.predicted_answer = std::move(b.answer);
      for (const auto& c : b.contexts) r.context_ids.push_back(c.chunk_id);
      r.commands_executed = std::move(b.commands_executed);
    } catch (const std::exception& e) {
      r.predicted_answer.clear();
      r.error = e.what();
    }
    out[n] = std::move(r);
  });
  return out;
}

std::vector<JudgedRecord> judge(std::span<const PredictionRecord> records, std::span<const QAPair> references,
                                const ChunkTable& chunks, const ModelGateway& gateway, std::size_t max_parallel) {
  std::unordered_map<std::string, const QAPair*> by_id;
  for (const auto& p : references) by_id.emplace(p.id, &p);
  for (const auto& r : records) {
    if (!by_id.count(r.qa_id)) throw Error(ErrorCode::kInvalidArgument, "no reference pair for " + r.qa_id);
  }
  std::vector<JudgedRecord> out(records.size());
  parallel_for(records.size(), max_parallel, [&](std::size_t i) {
    const PredictionRecord& rec = records[i];
    const QAPair& pair = *by_id.at(rec.qa_id);
    JudgedRecord j;
    j.qa_id = rec.qa_id;
    j.config_label = rec.config_label;
    j.predicted_answer = rec.predicted_answer;
    if (!trim(rec.predicted_answer).empty()) {
      j.judge_raw = ask(gateway, kRaterSystem, judge_prompt(rec, pair, source_context(pair, chunks)));
      if (auto scores = parse_binary_labels(j.judge_raw, kJudgeLabels)) {
        j.correctness = scores->at("correctness");
        j.faithfulness = scores->at("faithfulness");
      }
    }
    out[i] = std::move(j);
  });
  return out;
}

std::string_view score_mode_name(ScoreMode mode) noexcept {
  return mode == ScoreMode::kCorrectnessOnly ? "correctness_only" : "both_criteria";
}

ScoreMode parse_score_mode(std::string_view name) {
  if (name == "both_criteria") return ScoreMode::kBothCriteria;
  if (name == "correctness_only") return ScoreMode::kCorrectnessOnly;
  throw Error(ErrorCode::kConfigError, "unknown score mode: " + std::string(name));
}

std::int64_t percent_hundredths(std::int64_t numerator, std::int64_t denominator) {
  if (denominator <= 0 || numerator < 0) {
    throw Error(ErrorCode::kInvalidArgument, "bad fraction " + std::to_string(numerator) + "/" +
                                                 std::to_string(denominator));
  }
  return (numerator * 20000 + denominator) / (2 * denominator);
}

std::string format_hundredths(std::int64_t hundredths) {
  const bool neg = hundredths < 0;
  const std::int64_t a = neg ? -hundredths : hundredths;
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%lld.%02lld", neg ? "-" : "", static_cast<long long>(a / 100),
                static_cast<long long>(a % 100));
  return buf;
}

std::string EvalScore::percent_text() const { return format_hundredths(percent_hundredths); }

EvalScore score(std::span<const JudgedRecord> judged, ScoreMode mode) {
  if (judged.empty()) throw Error(ErrorCode::kEmptySet, "no judged records to score");
  EvalScore s;
  s.config_label = judged.front().config_label;
  std::int64_t correct = 0, faithful = 0, both = 0;
  for (const auto& r : judged) {
    if (r.config_label != s.config_label) {
      throw Error(ErrorCode::kInvalidArgument, "mixed config labels: " + s.config_label + ", " + r.config_label);
    }
    correct += r.correctness == 1;
    faithful += r.faithfulness == 1;
    both += r.correctness == 1 && r.faithfulness == 1;
  }
  s.denominator = static_cast<std::int64_t>(judged.size());
  s.numerator = mode == ScoreMode::kBothCriteria ? both : correct;
  s.percent_hundredths = percent_hundredths(s.numerator, s.denominator);
  s.correctness_fraction = static_cast<double>(correct) / static_cast<double>(s.denominator);
  s.faithfulness_fraction = static_cast<double>(faithful) / static_cast<double>(s.denominator);
  return s;
}

IncrementalReport incremental_report(std::span<const EvalScore> scores, ScoreMode mode) {
  if (scores.empty()) throw Error(ErrorCode::kEmptySet, "no scores to report");
  IncrementalReport rep;
  rep.json = {{"mode", score_mode_name(mode)}, {"rows", nlohmann::json::array()}};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    ReportRow row;
    row.config_label = scores[i].config_label;
    row.score = scores[i];
    row.eval_score = scores[i].percent_text() + "%";
    nlohmann::json delta = nullptr;
    if (i == 0) {
      row.delta = "-";
    } else {
      const std::int64_t d = scores[i].percent_hundredths - scores[i - 1].percent_hundredths;
      row.delta = format_hundredths(d) + "%";
      delta = static_cast<double>(d) / 100.0;
    }
    rep.json["rows"].push_back({{"config_label", row.config_label},
                                {"eval_score", row.eval_score},
                                {"percent", scores[i].percent()},
                                {"delta", row.delta},
                                {"delta_percent", delta},
                                {"numerator", scores[i].numerator},
                                {"denominator", scores[i].denominator},
                                {"correctness_fraction", scores[i].correctness_fraction},
                                {"faithfulness_fraction", scores[i].faithfulness_fraction}});
    rep.rows.push_back(std::move(row));
  }

  const std::vector<std::string> head = {"Configuration", "Eval Score", "Delta", "Passed", "Correct", "Faithful"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rep.rows) {
    char c[32], f[32];
    std::snprintf(c, sizeof c, "%.4f", r.score.correctness_fraction);
    std::snprintf(f, sizeof f, "%.4f", r.score.faithfulness_fraction);
    cells.push_back({r.config_label, r.eval_score, r.delta,
                     std::to_string(r.score.numerator) + "/" + std::to_string(r.score.denominator), c, f});
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t k = 0; k < head.size(); ++k) {
    width[k] = head[k].size();
    for (const auto& row : cells) width[k] = std::max(width[k], row[k].size());
  }
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k > 0) os << "  ";
      if (k == 0) {
        os << row[k] << std::string(width[k] - row[k].size(), ' ');
      } else {
        os << std::string(width[k] - row[k].size(), ' ') << row[k];
      }
    }
    os << '\n';
  };
  emit(head);
  std::size_t total = 0;
  for (auto w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : cells) emit(row);
  os << "score mode: " << score_mode_name(mode) << '\n';
  rep.text = os.str();
  return rep;
}

// --- serialization ---------------------------------------------------------

nlohmann::json to_json(const QAPair& p) {
  nlohmann::json j = {{"id", p.id},
                      {"question", p.question},
                      {"reference_answer", p.reference_answer},
                      {"source_chunk_id", p.source_chunk_id},
                      {"origin", origin_name(p.origin)},
                      {"context", p.context}};
  j["command_output_digest"] = p.command_output_digest ? nlohmann::json(*p.command_output_digest) : nlohmann::json(nullptr);
  return j;
}

QAPair qa_pair_from_json(const nlohmann::json& j) {
  QAPair p;
  p.id = j.at("id").get<std::string>();
  p.question = j.at("question").get<std::string>();
  p.reference_answer = j.at("reference_answer").get<std::string>();
  p.source_chunk_id = j.at("source_chunk_id").get<std::string>();
  p.origin = j.at("origin").get<std::string>() == "command" ? QaOrigin::kCommand : QaOrigin::kDocumentation;
  p.context = j.value("context", "");
  if (j.contains("command_output_digest") && j["command_output_digest"].is_string()) {
    p.command_output_digest = j["command_output_digest"].get<std::string>();
  }
  return p;
}

nlohmann::json to_json(const FilterVerdict& v) {
  return {{"qa_id", v.qa_id},         {"groundedness", v.groundedness}, {"relevance", v.relevance},
          {"standalone", v.standalone}, {"passed", v.passed()},          {"rater_raw", v.rater_raw}};
}

FilterVerdict filter_verdict_from_json(const nlohmann::json& j) {
  FilterVerdict v;
  v.qa_id = j.at("qa_id").get<std::string>();
  v.groundedness = j.at("groundedness").get<int>();
  v.relevance = j.at("relevance").get<int>();
  v.standalone = j.at("standalone").get<int>();
  v.rater_raw = j.value("rater_raw", "");
  return v;
}

nlohmann::json to_json(const PredictionRecord& r) {
  return {{"qa_id", r.qa_id},
          {"config_label", r.config_label},
          {"question", r.question},
          {"predicted_answer", r.predicted_answer},
          {"error", r.error},
          {"context_ids", r.context_ids},
          {"commands_executed", r.commands_executed}};
}

PredictionRecord prediction_from_json(const nlohmann::json& j) {
  PredictionRecord r;
  r.qa_id = j.at("qa_id").get<std::string>();
  r.config_label = j.at("config_label").get<std::string>();
  r.question = j.value("question", "");
  r.predicted_answer = j.at("predicted_answer").get<std::string>();
  r.error = j.value("error", "");
  r.context_ids = j.value("context_ids", std::vector<std::string>{});
  r.commands_executed = j.value("commands_executed", std::vector<std::string>{});
  return r;
}

nlohmann::json to_json(const JudgedRecord& r) {
  return {{"qa_id", r.qa_id},
          {"config_label", r.config_label},
          {"predicted_answer", r.predicted_answer},
          {"correctness", r.correctness},
          {"faithfulness", r.faithfulness},
          {"judge_raw", r.judge_raw}};
}

JudgedRecord judged_from_json(const nlohmann::json& j) {
  JudgedRecord r;
  r.qa_id = j.at("qa_id").get<std::string>();
  r.config_label = j.at("config_label").get<std::string>();
  r.predicted_answer = j.at("predicted_answer").get<std::string>();
  r.correctness = j.at("correctness").get<int>();
  r.faithfulness = j.at("faithfulness").get<int>();
  r.judge_raw = j.value("judge_raw", "");
  return r;
}

nlohmann::json to_json(const EvalScore& s) {
  return {{"config_label", s.config_label},
          {"numerator", s.numerator},
          {"denominator", s.denominator},
          {"percent", s.percent()},
          {"percent_text", s.percent_text()},
          {"correctness_fraction", s.correctness_fraction},
          {"faithfulness_fraction", s.faithfulness_fraction}};
}

// --- artifacts -------------------------------------------------------------

namespace {

nlohmann::json header_json(const ArtifactHeader& h) {
  return {{"schema_version", kArtifactSchemaVersion},
          {"stage", h.stage},
          {"seed", h.seed},
          {"config_label", h.config_label},
          {"timestamp", h.timestamp.empty() ? iso_timestamp() : h.timestamp}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
}

template <typename T, typename Fn>
std::vector<T> records_as(const Artifact& a, Fn&& fn, const std::filesystem::path& path) {
  std::vector<T> out;
  out.reserve(a.records.size());
  try {
    for (const auto& r : a.records) out.push_back(fn(r));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIoError, "malformed record in " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace

void write_artifact(const std::filesystem::path& path, ArtifactHeader header, std::span<const nlohmann::json> records) {
  std::string text = header_json(header).dump() + "\n";
  for (const auto& r : records) text += r.dump() + "\n";
  write_text(path, text);
}

Artifact read_artifact(const std::filesystem::path& path, std::string_view producing_stage) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kMissingArtifact, path.string() + " does not exist; run the '" +
                                                 std::string(producing_stage) + "' stage first");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  Artifact a;
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kIoError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (first) {
      first = false;
      if (!j.is_object() || j.value("schema_version", 0) != kArtifactSchemaVersion) {
        throw Error(ErrorCode::kSchemaVersionMismatch, path.string() + " has an unsupported header");
      }
      a.header.stage = j.value("stage", "");
      a.header.seed = j.value("seed", std::uint64_t{0});
      a.header.config_label = j.value("config_label", "");
      a.header.timestamp = j.value("timestamp", "");
      continue;
    }
    a.records.push_back(std::move(j));
  }
  if (first) throw Error(ErrorCode::kIoError, path.string() + " is empty");
  return a;
}

GenerationResult run_generate_stage(const std::filesystem::path& pairs_out, const RagEngine& engine,
                                    const GenerationOptions& options) {
  GenerationResult r = generate_qa(engine.chunks(), engine.registry(), engine.sandbox(), engine.gateway(), options);
  std::vector<nlohmann::json> rows;
  for (const auto& p : r.pairs) rows.push_back(to_json(p));
  write_artifact(pairs_out, {"generate", options.seed, "", ""}, rows);
  return r;
}

FilterResult run_filter_stage(const std::filesystem::path& pairs_in, const std::filesystem::path& verdicts_out,
                              const RagEngine& engine, std::size_t max_parallel) {
  const Artifact a = read_artifact(pairs_in, "generate");
  const auto pairs = records_as<QAPair>(a, qa_pair_from_json, pairs_in);
  FilterResult r = filter_qa(pairs, engine.chunks(), engine.gateway(), max_parallel);
  std::vector<nlohmann::json> rows;
  for (const auto& v : r.verdicts) rows.push_back(to_json(v));
  write_artifact(verdicts_out, {"filter", a.header.seed, "", ""}, rows);
  return r;
}

std::vector<PredictionRecord> run_answer_stage(const std::filesystem::path& pairs_in,
                                               const std::filesystem::path& verdicts_in,
                                               const std::filesystem::path& predictions_out,
                                               const LabeledConfig& config, const RagEngine& engine,
                                               std::size_t max_parallel) {
  const Artifact pa = read_artifact(pairs_in, "generate");
  const Artifact va = read_artifact(verdicts_in, "filter");
  const auto pairs = records_as<QAPair>(pa, qa_pair_from_json, pairs_in);
  const auto verdicts = records_as<FilterVerdict>(va, filter_verdict_from_json, verdicts_in);
  std::unordered_map<std::string, bool> passed;
  for (const auto& v : verdicts) passed[v.qa_id] = v.passed();
  std::vector<QAPair> kept;
  for (const auto& p : pairs) {
    auto it = passed.find(p.id);
    if (it != passed.end() && it->second) kept.push_back(p);
  }
  const LabeledConfig configs[] = {config};
  auto records = run_rag_on_set(kept, configs, engine, max_parallel);
  std::vector<nlohmann::json> rows;
  for (const auto& r : records) rows.push_back(to_json(r));
  write_artifact(predictions_out, {"answer", pa.header.seed, config.label, ""}, rows);
  return records;
}

std::vector<JudgedRecord> run_judge_stage(const std::filesystem::path& pairs_in,
                                          const std::filesystem::path& predictions_in,
                                          const std::filesystem::path& judged_out, const RagEngine& engine,
                                          std::size_t max_parallel) {
  const Artifact pa = read_artifact(pairs_in, "generate");
  const Artifact ra = read_artifact(predictions_in, "answer");
  const auto pairs = records_as<QAPair>(pa, qa_pair_from_json, pairs_in);
  const auto preds = records_as<PredictionRecord>(ra, prediction_from_json, predictions_in);
  auto judged = judge(preds, pairs, engine.chunks(), engine.gateway(), max_parallel);
  std::vector<nlohmann::json> rows;
  for (const auto& j : judged) rows.push_back(to_json(j));
  write_artifact(judged_out, {"judge", ra.header.seed, ra.header.config_label, ""}, rows);
  return judged;
}

IncrementalReport run_report_stage(std::span<const std::filesystem::path> judged_files,
                                   const std::filesystem::path& out_dir, ScoreMode mode) {
  if (judged_files.empty()) throw Error(ErrorCode::kEmptySet, "no judged files given");
  std::vector<EvalScore> scores;
  std::uint64_t seed = 0;
  for (std::size_t i = 0; i < judged_files.size(); ++i) {
    const Artifact a = read_artifact(judged_files[i], "judge");
    if (i == 0) seed = a.header.seed;
    const auto judged = records_as<JudgedRecord>(a, judged_from_json, judged_files[i]);
    EvalScore s = score(judged, mode);
    if (s.config_label.empty()) s.config_label = a.header.config_label;
    scores.push_back(std::move(s));
  }
  IncrementalReport rep = incremental_report(scores, mode);
  const std::string ts = iso_timestamp();
  nlohmann::json doc = {{"header", header_json({"report", seed, "", ts})}, {"report", rep.json}};
  write_text(out_dir / EvalFiles::kReportJson, doc.dump(2) + "\n");
  write_text(out_dir / EvalFiles::kReportText, "# schema_version=" + std::to_string(kArtifactSchemaVersion) +
                                                   " seed=" + std::to_string(seed) + " timestamp=" + ts + "\n" +
                                                   rep.text);
  return rep;
}

}  // namespace hpcrag
