#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpcrag/commands.hpp"
#include "hpcrag/gateway.hpp"
#include "hpcrag/pipeline.hpp"
#include "hpcrag/retrieval.hpp"

namespace hpcrag {

// ---------------------------------------------------------------------------
// Synthetic Q&A generation
// ---------------------------------------------------------------------------

enum class QaOrigin { kDocumentation, kCommand };

std::string_view origin_name(QaOrigin origin) noexcept;

struct QAPair {
  std::string id;
  std::string question;
  std::string reference_answer;
  std::string source_chunk_id;
  QaOrigin origin = QaOrigin::kDocumentation;
  /// Digest of the command output the pair was generated from.
  std::optional<std::string> command_output_digest;
  /// Exactly the context the generator saw: the chunk text, or for commands
  /// the description plus the captured output.
  std::string context;

  bool operator==(const QAPair&) const = default;
};

struct GenerationOptions {
  std::size_t n_doc = 90;
  std::size_t n_cmd = 10;
  std::uint64_t seed = 0;
  std::size_t max_parallel = 4;
};

struct GenerationDeficit {
  std::string slot_id;
  std::string source_chunk_id;
  std::string reason;
};

struct GenerationResult {
  std::vector<QAPair> pairs;
  std::vector<GenerationDeficit> deficits;
};

inline constexpr std::string_view kGenerationPromptHeader = "Write one question-answer pair for evaluating";
inline constexpr std::string_view kGenerationRetryNote =
    "Your previous reply could not be parsed. Reply with exactly one ```qa block.";

/// Extracts question and answer from a fenced block:
///   ```qa
///   question: ...
///   answer: ...
///   ```
/// Labels are case-insensitive; a field runs until the next label or the
/// closing fence. Returns nullopt unless both fields are non-empty.
std::optional<std::pair<std::string, std::string>> parse_qa_block(std::string_view reply);

/// Deterministic sample of `wanted` indices from [0, n): successive seeded
/// Fisher-Yates permutations, concatenated. Uses only raw mt19937_64 output so
/// the result is identical across standard libraries.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t wanted, std::uint64_t seed);

/// Generates n_doc pairs from sampled documentation chunks and n_cmd pairs
/// from sampled enabled commands (each executed fresh). Pair ids are
/// "qa-NNNN" by slot, documentation slots first. Unparseable replies are
/// retried once, then reported as deficits.
///
/// Errors: kInsufficientChunks when a requested kind has nothing to sample.
GenerationResult generate_qa(const ChunkTable& chunks, const CommandRegistry& registry, const SandboxPolicy& sandbox,
                             const ModelGateway& gateway, const GenerationOptions& options);

// ---------------------------------------------------------------------------
// Filtering and judging
// ---------------------------------------------------------------------------

/// Reads binary scores from labeled lines such as "groundedness: 1". A line
/// counts when, after optional list markers ("- ", "* ") and markdown
/// emphasis, it starts with the label (case-insensitive), then ':' or '=',
/// then a lone 0 or 1. Every label must be present; conflicting repeats make
/// the reply malformed. Returns nullopt for malformed replies.
std::optional<std::map<std::string, int>> parse_binary_labels(std::string_view reply,
                                                              std::span<const std::string_view> labels);

struct FilterVerdict {
  std::string qa_id;
  int groundedness = 0;
  int relevance = 0;
  int standalone = 0;
  std::string rater_raw;

  bool passed() const noexcept { return groundedness == 1 && relevance == 1 && standalone == 1; }
  bool operator==(const FilterVerdict&) const = default;
};

struct FilterResult {
  std::vector<QAPair> kept;
  std::vector<FilterVerdict> verdicts;
};

inline constexpr std::string_view kFilterPromptHeader = "Rate the question-answer pair below";

/// Keeps exactly the pairs rated 1 on groundedness, relevance and standalone.
/// Malformed rater replies count as all zeros.
FilterResult filter_qa(std::span<const QAPair> pairs, const ChunkTable& chunks, const ModelGateway& gateway,
                       std::size_t max_parallel = 4);

struct LabeledConfig {
  std::string label;
  PipelineConfig config;
};

struct PredictionRecord {
  std::string qa_id;
  std::string config_label;
  std::string question;
  std::string predicted_answer;
  std::string error;
  std::vector<std::string> context_ids;
  std::vector<std::string> commands_executed;

  bool operator==(const PredictionRecord&) const = default;
};

/// One record per (config, pair), config-major. Failures leave an empty
/// answer and an error note instead of aborting.
std::vector<PredictionRecord> run_rag_on_set(std::span<const QAPair> kept, std::span<const LabeledConfig> configs,
                                             const RagEngine& engine, std::size_t max_parallel = 4);

struct JudgedRecord {
  std::string qa_id;
  std::string config_label;
  std::string predicted_answer;
  int correctness = 0;
  int faithfulness = 0;
  std::string judge_raw;

  bool operator==(const JudgedRecord&) const = default;
};

inline constexpr std::string_view kJudgePromptHeader = "Grade the predicted answer below";

/// Reference-based grading. Empty predictions score (0, 0) without a model
/// call; malformed judge replies score (0, 0) with the raw text kept.
std::vector<JudgedRecord> judge(std::span<const PredictionRecord> records, std::span<const QAPair> references,
                                const ChunkTable& chunks, const ModelGateway& gateway, std::size_t max_parallel = 4);

// ---------------------------------------------------------------------------
// Scoring and reports
// ---------------------------------------------------------------------------

enum class ScoreMode { kBothCriteria, kCorrectnessOnly };

std::string_view score_mode_name(ScoreMode mode) noexcept;
ScoreMode parse_score_mode(std::string_view name);

struct EvalScore {
  std::string config_label;
  std::int64_t numerator = 0;
  std::int64_t denominator = 0;
  /// Percent in hundredths, rounded half up: 233/300 -> 7767.
  std::int64_t percent_hundredths = 0;
  double correctness_fraction = 0.0;
  double faithfulness_fraction = 0.0;

  double percent() const noexcept { return static_cast<double>(percent_hundredths) / 100.0; }
  /// "77.67"
  std::string percent_text() const;
};

/// Formats hundredths with two decimals: 466 -> "4.66", -50 -> "-0.50".
std::string format_hundredths(std::int64_t hundredths);

/// Half-up rounding of 100 * numerator / denominator to hundredths.
std::int64_t percent_hundredths(std::int64_t numerator, std::int64_t denominator);

/// Errors: kEmptySet for no records, kInvalidArgument for mixed labels.
EvalScore score(std::span<const JudgedRecord> judged, ScoreMode mode = ScoreMode::kBothCriteria);

struct ReportRow {
  std::string config_label;
  std::string eval_score;  // "77.67%"
  std::string delta;       // "-" or "4.66%"
  EvalScore score;
};

struct IncrementalReport {
  std::vector<ReportRow> rows;
  std::string text;
  nlohmann::json json;
};

/// Rows in the given order; each delta is this row minus the previous one,
/// computed on the rounded percentages.
IncrementalReport incremental_report(std::span<const EvalScore> scores, ScoreMode mode = ScoreMode::kBothCriteria);

// ---------------------------------------------------------------------------
// Artifacts: JSON-lines files whose first line is a header record
//   {schema_version, stage, seed, config_label, timestamp}
// ---------------------------------------------------------------------------

inline constexpr int kArtifactSchemaVersion = 1;

struct ArtifactHeader {
  std::string stage;
  std::uint64_t seed = 0;
  std::string config_label;
  std::string timestamp;
};

struct Artifact {
  ArtifactHeader header;
  std::vector<nlohmann::json> records;
};

void write_artifact(const std::filesystem::path& path, ArtifactHeader header, std::span<const nlohmann::json> records);
/// kMissingArtifact names `producing_stage` when the file does not exist.
Artifact read_artifact(const std::filesystem::path& path, std::string_view producing_stage);

nlohmann::json to_json(const QAPair& p);
QAPair qa_pair_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FilterVerdict& v);
FilterVerdict filter_verdict_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PredictionRecord& r);
PredictionRecord prediction_from_json(const nlohmann::json& j);
nlohmann::json to_json(const JudgedRecord& r);
JudgedRecord judged_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalScore& s);

/// File names used inside an evaluation directory.
struct EvalFiles {
  static constexpr std::string_view kPairs = "pairs.jsonl";
  static constexpr std::string_view kVerdicts = "verdicts.jsonl";
  static constexpr std::string_view kPredictions = "predictions.jsonl";
  static constexpr std::string_view kJudged = "judged.jsonl";
  static constexpr std::string_view kReportJson = "report.json";
  static constexpr std::string_view kReportText = "report.txt";
};

/// Stage runners over artifact files; each runs exactly one evaluation step.
GenerationResult run_generate_stage(const std::filesystem::path& pairs_out, const RagEngine& engine,
                                    const GenerationOptions& options);
FilterResult run_filter_stage(const std::filesystem::path& pairs_in, const std::filesystem::path& verdicts_out,
                              const RagEngine& engine, std::size_t max_parallel = 4);
std::vector<PredictionRecord> run_answer_stage(const std::filesystem::path& pairs_in,
                                               const std::filesystem::path& verdicts_in,
                                               const std::filesystem::path& predictions_out,
                                               const LabeledConfig& config, const RagEngine& engine,
                                               std::size_t max_parallel = 4);
std::vector<JudgedRecord> run_judge_stage(const std::filesystem::path& pairs_in,
                                          const std::filesystem::path& predictions_in,
                                          const std::filesystem::path& judged_out, const RagEngine& engine,
                                          std::size_t max_parallel = 4);
IncrementalReport run_report_stage(std::span<const std::filesystem::path> judged_files,
                                   const std::filesystem::path& out_dir, ScoreMode mode = ScoreMode::kBothCriteria);

}  // namespace hpcrag
