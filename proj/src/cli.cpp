#include "hpcrag/cli.hpp"

#include <algorithm>
#include <csignal>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "hpcrag/autoeval.hpp"
#include "hpcrag/config.hpp"
#include "hpcrag/error.hpp"
#include "hpcrag/service.hpp"
#include "hpcrag/similarity_bench.hpp"

namespace hpcrag {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;

  std::string query;
  bool no_hyce = false;
  bool cot = false;
  bool json = false;

  std::string eval_dir;
  std::size_t parallel = 4;
  std::uint64_t seed = 0;
  std::size_t n_doc = 90;
  std::size_t n_cmd = 10;
  std::string label;
  std::string run;
  std::vector<std::string> runs;
  std::vector<std::string> judged_files;
  std::string mode = "both_criteria";

  std::string host;
  int port = 0;

  std::string fixtures;
  std::string scorer = "overlap";
};

std::string slug(std::string_view label) {
  std::string out;
  for (char c : label) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      out.push_back(static_cast<char>(std::tolower(u)));
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out.empty() ? "run" : out;
}

AppConfig require_config(const Options& o) {
  std::string path = o.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("HPCRAG_CONFIG"); env && *env) path = env;
  }
  if (path.empty()) throw Error(ErrorCode::kConfigError, "no config file; pass --config or set HPCRAG_CONFIG");
  AppConfig c = load_app_config(path);
  c.validate();
  return c;
}

std::shared_ptr<AuditLog> audit_for(const AppConfig& c) {
  return c.audit_log.empty() ? nullptr : std::make_shared<AuditLog>(c.audit_log);
}

struct Runtime {
  AppConfig config;
  std::shared_ptr<ModelGateway> gateway;
  std::shared_ptr<const RagEngine> engine;
};

Runtime open_runtime(const Options& o) {
  Runtime rt;
  rt.config = require_config(o);
  auto audit = audit_for(rt.config);
  rt.gateway = make_gateway(rt.config, audit);
  rt.engine = std::make_shared<const RagEngine>(load_engine(rt.config, rt.gateway, make_sandbox(rt.config, audit)));
  return rt;
}

fs::path eval_dir(const Options& o, const AppConfig& c) {
  return o.eval_dir.empty() ? c.artifact_dir / "eval" : fs::path(o.eval_dir);
}

PipelineConfig variant(PipelineConfig p, const Options& o) {
  if (o.no_hyce) p.hyce_enabled = false;
  if (o.cot) p.prompt_style = PromptStyle::kCot;
  return p;
}

std::string default_label(const PipelineConfig& p) {
  std::string label = p.hyce_enabled ? "RAG + HyCE" : "RAG baseline";
  if (p.prompt_style == PromptStyle::kCot) label += " + CoT";
  return label;
}

int cmd_ingest(const Options& o, std::ostream& out, std::ostream& err) {
  const AppConfig c = require_config(o);
  auto gateway = make_gateway(c, audit_for(c));
  const IngestSummary s = ingest_to_artifacts(c, *gateway);
  for (const auto& w : s.warnings) err << "warning: skipped " << w.path << ": " << w.reason << '\n';
  out << "documents: " << s.documents << '\n'
      << "doc_chunks: " << s.doc_chunks << '\n'
      << "command_chunks: " << s.command_chunks << '\n'
      << "corpus: " << s.corpus_path.string() << '\n'
      << "index: " << s.index_path.string() << '\n';
  return kExitOk;
}

int cmd_ask(const Options& o, std::ostream& out) {
  const Runtime rt = open_runtime(o);
  if (!rt.gateway->has_chat()) throw Error(ErrorCode::kConfigError, "no chat backend configured");
  const AnswerBundle b = rt.engine->answer_query(o.query, variant(rt.config.pipeline, o));
  if (o.json) {
    out << to_json(b).dump(2) << '\n';
    return kExitOk;
  }
  out << b.answer << "\n\nSources:\n";
  if (b.contexts.empty()) out << "  (none)\n";
  for (const auto& c : b.contexts) {
    out << "  " << (c.kind == ChunkKind::kCommand ? "[CMD] " : "[DOC] ") << c.chunk_id;
    if (c.command_output) {
      out << " (executed, " << (c.command_output->timed_out ? "timed out" : "exit " + std::to_string(c.command_output->exit_code))
          << ")";
    }
    out << '\n';
  }
  out << "Commands executed: ";
  if (b.commands_executed.empty()) out << "none";
  for (std::size_t i = 0; i < b.commands_executed.size(); ++i) out << (i ? ", " : "") << b.commands_executed[i];
  out << '\n';
  return kExitOk;
}

int cmd_eval_generate(const Options& o, std::ostream& out, std::ostream& err) {
  const Runtime rt = open_runtime(o);
  const fs::path dir = eval_dir(o, rt.config);
  GenerationOptions g;
  g.seed = o.seed;
  g.n_doc = o.n_doc;
  g.n_cmd = o.n_cmd;
  g.max_parallel = o.parallel;
  const auto r = run_generate_stage(dir / EvalFiles::kPairs, *rt.engine, g);
  for (const auto& d : r.deficits) err << "deficit: " << d.slot_id << " (" << d.source_chunk_id << "): " << d.reason << '\n';
  std::size_t cmd = std::count_if(r.pairs.begin(), r.pairs.end(), [](const QAPair& p) { return p.origin == QaOrigin::kCommand; });
  out << "pairs: " << r.pairs.size() << " (documentation " << r.pairs.size() - cmd << ", command " << cmd << ")\n"
      << "deficits: " << r.deficits.size() << '\n'
      << "wrote " << (dir / EvalFiles::kPairs).string() << '\n';
  return kExitOk;
}

int cmd_eval_filter(const Options& o, std::ostream& out) {
  const Runtime rt = open_runtime(o);
  const fs::path dir = eval_dir(o, rt.config);
  const auto r = run_filter_stage(dir / EvalFiles::kPairs, dir / EvalFiles::kVerdicts, *rt.engine, o.parallel);
  out << "kept: " << r.kept.size() << " of " << r.verdicts.size() << '\n'
      << "wrote " << (dir / EvalFiles::kVerdicts).string() << '\n';
  return kExitOk;
}

int cmd_eval_answer(const Options& o, std::ostream& out) {
  const Runtime rt = open_runtime(o);
  const fs::path dir = eval_dir(o, rt.config);
  LabeledConfig cfg{o.label, variant(rt.config.pipeline, o)};
  if (cfg.label.empty()) cfg.label = default_label(cfg.config);
  const fs::path run_dir = dir / "runs" / (o.run.empty() ? slug(cfg.label) : o.run);
  const auto recs = run_answer_stage(dir / EvalFiles::kPairs, dir / EvalFiles::kVerdicts,
                                     run_dir / EvalFiles::kPredictions, cfg, *rt.engine, o.parallel);
  const auto failed = std::count_if(recs.begin(), recs.end(), [](const PredictionRecord& r) { return !r.error.empty(); });
  out << "config: " << cfg.label << '\n'
      << "predictions: " << recs.size() << " (errors " << failed << ")\n"
      << "wrote " << (run_dir / EvalFiles::kPredictions).string() << '\n';
  return kExitOk;
}

int cmd_eval_judge(const Options& o, std::ostream& out) {
  const Runtime rt = open_runtime(o);
  const fs::path dir = eval_dir(o, rt.config);
  std::string run = o.run;
  if (run.empty()) {
    run = slug(o.label.empty() ? default_label(variant(rt.config.pipeline, o)) : o.label);
  }
  const fs::path run_dir = dir / "runs" / run;
  const auto judged = run_judge_stage(dir / EvalFiles::kPairs, run_dir / EvalFiles::kPredictions,
                                      run_dir / EvalFiles::kJudged, *rt.engine, o.parallel);
  out << "judged: " << judged.size() << '\n' << "wrote " << (run_dir / EvalFiles::kJudged).string() << '\n';
  return kExitOk;
}

int cmd_eval_report(const Options& o, std::ostream& out) {
  std::vector<fs::path> files(o.judged_files.begin(), o.judged_files.end());
  fs::path dir = o.eval_dir;
  if (!o.runs.empty() || dir.empty()) {
    if (dir.empty()) dir = eval_dir(o, require_config(o));
    for (const auto& r : o.runs) files.push_back(dir / "runs" / r / EvalFiles::kJudged);
  }
  if (files.empty()) throw Error(ErrorCode::kConfigError, "report needs judged files or --run names");
  const auto rep = run_report_stage(files, dir, parse_score_mode(o.mode));
  out << rep.text;
  return kExitOk;
}

int cmd_serve(const Options& o, std::ostream& out, std::ostream& err) {
  const Runtime rt = open_runtime(o);
  ChatService service(rt.engine, rt.config.pipeline, sanitized_config(rt.config), rt.config.session_turns);
  const std::string host = o.host.empty() ? rt.config.bind_host : o.host;
  const int port = o.port > 0 ? o.port : rt.config.bind_port;
  if (!service.bind(host, port)) {
    err << "cannot bind " << host << ":" << port << '\n';
    return kExitRuntime;
  }

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    service.stop();
  });
  out << "listening on http://" << host << ":" << port << std::endl;
  service.listen_after_bind();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  pthread_sigmask(SIG_UNBLOCK, &set, nullptr);
  return kExitOk;
}

int cmd_bench(const Options& o, std::ostream& out) {
  if (o.fixtures.empty()) throw Error(ErrorCode::kConfigError, "bench needs --fixtures");
  const auto fixtures = load_fixtures(o.fixtures);
  std::vector<ArmComparison> rows;
  if (o.scorer == "overlap") {
    rows.push_back(compare_arms(fixtures, token_overlap_scorer(), "token-overlap"));
  } else if (o.scorer == "gateway") {
    const AppConfig c = require_config(o);
    auto gateway = make_gateway(c, audit_for(c));
    rows.push_back(compare_arms(fixtures, gateway_scorer(*gateway), "gateway-rerank"));
  } else {
    throw Error(ErrorCode::kConfigError, "unknown scorer: " + o.scorer);
  }
  out << "fixtures: " << fixtures.size() << '\n' << render_bench_report(rows);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Question answering over HPC documentation and live cluster commands", "hpcrag"};
  app.require_subcommand(1);
  Options o;
  app.add_option("-c,--config", o.config_path, "Config file (JSON); defaults to $HPCRAG_CONFIG");

  auto* ingest = app.add_subcommand("ingest", "Chunk and index documentation and command descriptions");

  auto* ask = app.add_subcommand("ask", "Answer one question");
  ask->add_option("query", o.query, "Question text")->required();
  ask->add_flag("--no-hyce", o.no_hyce, "Search documentation only; never run commands");
  ask->add_flag("--cot", o.cot, "Ask the model to reason step by step");
  ask->add_flag("--json", o.json, "Print the full answer bundle as JSON");

  auto* eval = app.add_subcommand("eval", "Automatic evaluation, one stage at a time");
  eval->require_subcommand(1);
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--dir", o.eval_dir, "Evaluation directory (default <artifact_dir>/eval)");
    sub->add_option("--parallel", o.parallel, "Concurrent model calls")->check(CLI::PositiveNumber);
  };
  auto* gen = eval->add_subcommand("generate", "Generate synthetic question-answer pairs");
  add_common(gen);
  gen->add_option("--seed", o.seed, "Sampling seed");
  gen->add_option("--n-doc", o.n_doc, "Pairs from documentation chunks");
  gen->add_option("--n-cmd", o.n_cmd, "Pairs from command output");
  auto* filt = eval->add_subcommand("filter", "Rate pairs and keep those passing every criterion");
  add_common(filt);
  auto* ans = eval->add_subcommand("answer", "Answer the kept pairs with one pipeline configuration");
  add_common(ans);
  ans->add_option("--label", o.label, "Configuration label shown in reports");
  ans->add_option("--run", o.run, "Run directory name (default derived from the label)");
  ans->add_flag("--no-hyce", o.no_hyce, "Baseline: documentation only");
  ans->add_flag("--cot", o.cot, "Step-by-step prompt");
  auto* jud = eval->add_subcommand("judge", "Grade predicted answers against the references");
  add_common(jud);
  jud->add_option("--label", o.label, "Configuration label used at the answer stage");
  jud->add_option("--run", o.run, "Run directory name");
  jud->add_flag("--no-hyce", o.no_hyce, "Use the baseline default label");
  jud->add_flag("--cot", o.cot, "Use the step-by-step default label");
  auto* rep = eval->add_subcommand("report", "Score judged runs and print the incremental table");
  rep->add_option("--dir", o.eval_dir, "Evaluation directory; report files are written here");
  rep->add_option("--run", o.runs, "Run names, in table order");
  rep->add_option("judged", o.judged_files, "Judged files, in table order");
  rep->add_option("--mode", o.mode, "both_criteria or correctness_only")
      ->check(CLI::IsMember({"both_criteria", "correctness_only"}));

  auto* serve = app.add_subcommand("serve", "Run the HTTP chat service");
  serve->add_option("--host", o.host, "Bind address");
  serve->add_option("--port", o.port, "Bind port");

  auto* bench = app.add_subcommand("bench", "Compare query similarity against raw commands and descriptions");
  bench->add_option("--fixtures", o.fixtures, "Fixture file: JSON list of {query, command_raw, description}");
  bench->add_option("--scorer", o.scorer, "overlap or gateway")->check(CLI::IsMember({"overlap", "gateway"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*ingest) return cmd_ingest(o, out, err);
    if (*ask) return cmd_ask(o, out);
    if (*gen) return cmd_eval_generate(o, out, err);
    if (*filt) return cmd_eval_filter(o, out);
    if (*ans) return cmd_eval_answer(o, out);
    if (*jud) return cmd_eval_judge(o, out);
    if (*rep) return cmd_eval_report(o, out);
    if (*serve) return cmd_serve(o, out, err);
    if (*bench) return cmd_bench(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::kConfigError ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  err << app.help();
  return kExitConfig;
}

}  // namespace hpcrag
