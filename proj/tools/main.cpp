// lookback command-line tool: memory pre-summarization, training-data
// curation, step-level evaluation, context-token accounting, and corpus
// validation. Every run writes a manifest with its effective configuration,
// seeds, and input hashes next to its outputs.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include "lookback/http_backend.hpp"
#include "lookback/lookback.hpp"

namespace fs = std::filesystem;
using namespace lookback;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;  // validation or metric-level failure
constexpr int kExitIoError = 2;  // I/O or schema problems

// --- backend assembly -----------------------------------------------------------

struct BackendSpec {
  std::string kind = "http";  // http | scripted
  std::string script_path;
  BackendConfig config;
  // which flags were set explicitly, for config-file precedence
  bool endpoint_set = false, model_set = false, timeout_set = false, retries_set = false,
       parallel_set = false, max_tokens_set = false, temperature_set = false;

  void add_flags(CLI::App* cmd, const std::string& prefix = "") {
    auto flag = [&](const std::string& name) { return "--" + prefix + name; };
    cmd->add_option(flag("backend"), kind, "Backend kind: http or scripted")
        ->check(CLI::IsMember({"http", "scripted"}));
    cmd->add_option(flag("endpoint"), config.endpoint, "Chat-completion endpoint URL")
        ->each([this](const std::string&) { endpoint_set = true; });
    cmd->add_option(flag("model"), config.model, "Model name sent in requests")
        ->each([this](const std::string&) { model_set = true; });
    cmd->add_option(flag("script"), script_path, "Scripted-backend program file (JSON)");
    cmd->add_option(flag("timeout-s"), config.timeout_s, "Request timeout in seconds")
        ->each([this](const std::string&) { timeout_set = true; });
    cmd->add_option(flag("retries"), config.retries, "Transport retry count")
        ->each([this](const std::string&) { retries_set = true; });
    cmd->add_option(flag("max-parallel"), config.max_parallel, "Max in-flight HTTP requests")
        ->each([this](const std::string&) { parallel_set = true; });
    cmd->add_option(flag("max-output-tokens"), config.max_output_tokens, "Completion token cap")
        ->each([this](const std::string&) { max_tokens_set = true; });
    cmd->add_option(flag("temperature"), config.temperature, "Sampling temperature")
        ->each([this](const std::string&) { temperature_set = true; });
  }

  // config-file values fill every slot the command line left untouched
  void apply_config_file(const json& file) {
    if (!endpoint_set && file.contains("endpoint")) config.endpoint = file["endpoint"];
    if (!model_set && file.contains("model")) config.model = file["model"];
    if (!timeout_set && file.contains("timeout_s")) config.timeout_s = file["timeout_s"];
    if (!retries_set && file.contains("retries")) config.retries = file["retries"];
    if (!parallel_set && file.contains("max_parallel")) config.max_parallel = file["max_parallel"];
    if (!max_tokens_set && file.contains("max_output_tokens")) {
      config.max_output_tokens = file["max_output_tokens"];
    }
    if (!temperature_set && file.contains("temperature")) config.temperature = file["temperature"];
  }

  json effective_config() const {
    return json{{"kind", kind},
                {"endpoint", config.endpoint},
                {"model", config.model},
                {"script", script_path},
                {"timeout_s", config.timeout_s},
                {"retries", config.retries},
                {"max_parallel", config.max_parallel},
                {"max_output_tokens", config.max_output_tokens},
                {"temperature", config.temperature}};
  }

  std::unique_ptr<Backend> make() const {
    if (kind == "scripted") {
      if (script_path.empty()) {
        throw Error(Errc::config_error, "scripted backend needs --script FILE");
      }
      return std::make_unique<ScriptedBackend>(load_script(script_path));
    }
    if (config.endpoint.empty()) {
      throw Error(Errc::config_error, "http backend needs --endpoint URL");
    }
    return std::make_unique<HttpBackend>();
  }

  static ScriptedBackend load_script(const fs::path& path) {
    json j = json::parse(read_file_bytes(path), nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("mode")) {
      throw Error(Errc::schema_error, "script file must be {\"mode\": ..., ...}: " + path.string());
    }
    std::string mode = j["mode"].get<std::string>();
    if (mode == "queue") {
      std::vector<std::string> responses;
      for (const auto& r : j.value("responses", json::array())) {
        responses.push_back(r.get<std::string>());
      }
      return ScriptedBackend::queue(std::move(responses));
    }
    if (mode == "rules") {
      std::vector<ScriptedBackend::Rule> rules;
      for (const auto& r : j.value("rules", json::array())) {
        ScriptedBackend::Rule rule;
        if (r.contains("contains")) {
          if (r["contains"].is_array()) {
            for (const auto& n : r["contains"]) rule.needles.push_back(n.get<std::string>());
          } else {
            rule.needles.push_back(r["contains"].get<std::string>());
          }
        }
        rule.response = r.value("response", std::string());
        rules.push_back(std::move(rule));
      }
      std::optional<std::string> fallback;
      if (j.contains("default")) fallback = j["default"].get<std::string>();
      return ScriptedBackend::rules(std::move(rules), std::move(fallback));
    }
    if (mode == "replay") {
      std::unordered_map<std::string, std::string> log;
      for (const auto& [key, value] : j.value("log", json::object()).items()) {
        log[key] = value.get<std::string>();
      }
      return ScriptedBackend::replay(std::move(log));
    }
    throw Error(Errc::schema_error, "unknown script mode \"" + mode + "\"");
  }
};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  json j = json::parse(read_file_bytes(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(Errc::schema_error, "config file is not a JSON object: " + path);
  }
  return j;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case Errc::io_error:
    case Errc::schema_error:
    case Errc::config_error:
    case Errc::trajectory_malformed:
    case Errc::missing_memory_cache:
      return kExitIoError;
    default:
      return kExitFailure;
  }
}

RunManifest start_manifest(const std::string& command, const json& config) {
  RunManifest m;
  m.command = command;
  m.config = config;
  m.started_at = iso8601_utc_now();
  return m;
}

// --- subcommand state -------------------------------------------------------------

struct SummarizeArgs {
  std::string input, cache, config_file;
  BackendSpec backend;
};

struct DatagenArgs {
  std::string input, cache, out, config_file;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int parallel = 1;
  std::string rebalance = "uniform";
  double alpha = 1.0;
  BackendSpec teacher, synth;
};

struct EvalArgs {
  std::string benchmark, cache, report, transcripts, config_file;
  int max_retrievals = 1;
  int parallel = 1;
  double threshold = 0.14;
  std::uint64_t seed = 0;
  BackendSpec backend;
};

struct TokensArgs {
  std::string input, cache, strategy = "all", trace, report;
  std::int64_t image_tokens = 1400;
  double pixels_per_token = 0.0;
};

struct StatsArgs {
  std::string transcripts, report;
};

struct ValidateArgs {
  std::string path, kind = "auto";
  bool no_check_images = false;
};

// --- command bodies ----------------------------------------------------------------

int cmd_summarize(SummarizeArgs& args) {
  args.backend.apply_config_file(load_config_file(args.config_file));
  auto manifest = start_manifest("summarize", args.backend.effective_config());
  manifest.add_input(args.input);

  auto trajectories = load_trajectories_jsonl(args.input);
  MemoryCache cache = MemoryCache::load(args.cache);
  std::size_t existing = cache.entry_count();

  auto backend = args.backend.make();
  std::size_t added = 0;
  for (const auto& traj : trajectories) {
    added += summarize_trajectory(*backend, args.backend.config, traj, cache);
  }
  cache.save(args.cache);

  manifest.finished_at = iso8601_utc_now();
  manifest.write(manifest_path_for(args.cache));
  std::cout << "summarize: " << trajectories.size() << " trajectories, " << existing
            << " cached entries, " << added << " new entries -> " << args.cache << "\n";
  return kExitOk;
}

int cmd_datagen(DatagenArgs& args) {
  json config_file = load_config_file(args.config_file);
  args.teacher.apply_config_file(config_file);
  args.synth.apply_config_file(config_file);
  if (!args.seed_set) {
    throw Error(Errc::config_error, "datagen requires an explicit --seed for reproducibility");
  }

  DatagenOptions options;
  options.seed = args.seed;
  options.parallel = args.parallel;
  options.curate.teacher_config = args.teacher.config;
  options.synth_config = args.synth.config;
  if (args.rebalance == "uniform") {
    options.scheme.mode = RebalanceScheme::Mode::uniform_buckets;
  } else if (args.rebalance == "power") {
    options.scheme.mode = RebalanceScheme::Mode::distance_power;
    options.scheme.alpha = args.alpha;
  } else {
    throw Error(Errc::config_error, "unknown rebalance scheme \"" + args.rebalance + "\"");
  }

  json config{{"teacher", args.teacher.effective_config()},
              {"synth", args.synth.effective_config()},
              {"seed", args.seed},
              {"parallel", args.parallel},
              {"rebalance", args.rebalance},
              {"alpha", args.alpha}};
  auto manifest = start_manifest("datagen run", config);
  manifest.seeds["datagen"] = args.seed;
  manifest.add_input(args.input);
  manifest.add_input(args.cache);

  auto trajectories = load_trajectories_jsonl(args.input);
  if (!fs::exists(args.cache)) {
    throw Error(Errc::missing_memory_cache,
                "memory cache not found: " + args.cache + " (run summarize first)");
  }
  MemoryCache cache = MemoryCache::load(args.cache);

  auto teacher = args.teacher.make();
  auto synth = args.synth.make();
  DatagenResult result = run_datagen(*teacher, *synth, trajectories, cache, options);

  const auto& s = result.stats;
  std::cout << "curated " << s.curated << "/" << s.steps_total << " steps ("
            << s.curation_errors << " errors)\n"
            << "filter: dropped " << s.dropped_wrong_action << " wrong-action samples, kept "
            << s.tool_correct << " tool + " << s.notool_correct << " non-tool\n";
  std::cout << "rebalanced distance buckets:";
  for (const auto& [d, n] : s.buckets_after) std::cout << " " << d << ":" << n;
  std::cout << "\nfinal dataset: " << s.final_total << " samples (" << s.final_tool << " tool, "
            << s.final_notool << " non-tool)\n";
  for (const auto& err : result.step_errors) std::cerr << "  step error: " << err << "\n";

  save_sft_jsonl(args.out, result.dataset);
  json stats_json = s.to_json();
  manifest.config["stats"] = stats_json;
  manifest.finished_at = iso8601_utc_now();
  manifest.write(manifest_path_for(args.out));

  if (result.dataset.empty()) {
    std::cerr << "datagen: final dataset is empty\n";
    return kExitFailure;
  }
  std::cout << "wrote " << args.out << "\n";
  return kExitOk;
}

int cmd_eval(EvalArgs& args) {
  args.backend.apply_config_file(load_config_file(args.config_file));

  EvalOptions options;
  options.planner.max_retrievals = args.max_retrievals;
  options.planner.backend = args.backend.config;
  options.policy.grounding_threshold = args.threshold;
  options.parallel = args.parallel;
  options.seed = args.seed;

  json config{{"backend", args.backend.effective_config()},
              {"max_retrievals", args.max_retrievals},
              {"parallel", args.parallel},
              {"grounding_threshold", args.threshold},
              {"seed", args.seed},
              {"system_prompt_hash", hex64(fnv1a64(options.planner.system_prompt))}};
  auto manifest = start_manifest("eval run", config);
  manifest.seeds["eval"] = args.seed;
  manifest.add_input(args.benchmark);
  manifest.add_input(args.cache);

  auto tasks = step_tasks_from_file(args.benchmark);
  MemoryCache cache = MemoryCache::load(args.cache);
  auto backend = args.backend.make();
  EvalResult result = evaluate(*backend, tasks, cache, options);

  json report{{"metrics", result.report.to_json()}, {"retrieval", result.stats.to_json()}};
  write_file_bytes(args.report, report.dump(2) + "\n");
  fs::path text_path = fs::path(args.report).replace_extension(".txt");
  write_file_bytes(text_path, result.report.to_text_table());
  fs::path transcripts_path = args.transcripts.empty()
                                  ? fs::path(args.report + ".transcripts.jsonl")
                                  : fs::path(args.transcripts);
  std::string lines;
  for (const auto& r : result.transcripts) {
    lines += transcript_record_to_json(r).dump();
    lines += "\n";
  }
  write_file_bytes(transcripts_path, lines);
  manifest.finished_at = iso8601_utc_now();
  manifest.write(manifest_path_for(args.report));

  std::cout << result.report.to_text_table();
  std::cout << "retrieval rate " << result.stats.retrieval_rate << ", max distance "
            << result.stats.max_distance << "\n";
  return kExitOk;
}

int cmd_tokens(TokensArgs& args) {
  auto trajectories = load_trajectories_jsonl(args.input);
  if (trajectories.empty()) throw Error(Errc::empty_input, "no trajectories in " + args.input);

  CostModel model = args.pixels_per_token > 0.0
                        ? CostModel::pixel_proportional(args.pixels_per_token)
                        : CostModel::flat_image(args.image_tokens);
  MemoryCache cache;
  bool have_cache = !args.cache.empty() && fs::exists(args.cache);
  if (have_cache) cache = MemoryCache::load(args.cache);

  RetrievalTrace trace;
  if (!args.trace.empty()) {
    std::ifstream in(args.trace);
    if (!in.good()) throw Error(Errc::io_error, "cannot open trace file: " + args.trace);
    std::string line;
    std::vector<TranscriptRecord> records;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      records.push_back(transcript_record_from_json(json::parse(line)));
    }
    trace = RetrievalTrace::from_transcripts(records);
  }

  std::vector<MemoryStrategy> strategies;
  if (args.strategy == "all") {
    strategies = {MemoryStrategy::none,      MemoryStrategy::past_actions,
                  MemoryStrategy::recent5_obs, MemoryStrategy::all_obs,
                  MemoryStrategy::summaries, MemoryStrategy::summaries_lookback};
  } else {
    auto s = strategy_from_name(args.strategy);
    if (!s) throw Error(Errc::config_error, "unknown strategy \"" + args.strategy + "\"");
    strategies = {*s};
  }

  json rows = json::array();
  std::printf("%-8s %14s %8s\n", "strategy", "mean tokens", "steps");
  for (MemoryStrategy s : strategies) {
    double token_sum = 0;
    std::size_t steps = 0;
    std::string model_desc;
    for (const auto& traj : trajectories) {
      auto report = token_budget(traj, s, model, have_cache ? &cache : nullptr, &trace);
      token_sum += report.mean_input_tokens * static_cast<double>(report.steps);
      steps += report.steps;
      model_desc = report.cost_model;
    }
    double mean = steps == 0 ? 0.0 : token_sum / static_cast<double>(steps);
    std::printf("%-8s %14.1f %8zu\n", strategy_label(s), mean, steps);
    rows.push_back(json{{"strategy", strategy_label(s)},
                        {"mean_input_tokens", mean},
                        {"steps", steps},
                        {"cost_model", model_desc}});
  }
  if (!args.report.empty()) {
    write_file_bytes(args.report, rows.dump(2) + "\n");
    auto manifest = start_manifest("tokens", json{{"strategy", args.strategy},
                                                  {"image_tokens", args.image_tokens},
                                                  {"pixels_per_token", args.pixels_per_token}});
    manifest.add_input(args.input);
    if (have_cache) manifest.add_input(args.cache);
    manifest.finished_at = iso8601_utc_now();
    manifest.write(manifest_path_for(args.report));
  }
  return kExitOk;
}

int cmd_retrieval_stats(StatsArgs& args) {
  RetrievalStats stats = retrieval_stats_from_jsonl(args.transcripts);
  std::cout << "steps " << stats.total_steps << ", retrievals " << stats.total_retrievals
            << ", rate " << stats.retrieval_rate << ", max distance " << stats.max_distance
            << "\n";
  for (const auto& [d, n] : stats.histogram) {
    std::cout << "  distance " << d << ": " << n << "\n";
  }
  if (!args.report.empty()) {
    write_file_bytes(args.report, stats.to_json().dump(2) + "\n");
    auto manifest = start_manifest("retrieval-stats", json::object());
    manifest.add_input(args.transcripts);
    manifest.finished_at = iso8601_utc_now();
    manifest.write(manifest_path_for(args.report));
  }
  return kExitOk;
}

int cmd_validate(ValidateArgs& args) {
  if (!fs::exists(args.path)) {
    std::cerr << "validate: cannot open " << args.path << "\n";
    return kExitIoError;
  }
  CorpusKind kind = CorpusKind::auto_detect;
  if (args.kind == "trajectories") kind = CorpusKind::trajectories;
  if (args.kind == "sft") kind = CorpusKind::sft;
  ValidationReport report = validate_corpus(args.path, kind, !args.no_check_images);
  std::cout << report.to_text();
  return report.ok() ? kExitOk : kExitFailure;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Screenshot-agent toolkit: compressed step memory, on-demand look-back retrieval, "
               "teacher-curated training data, and step-level benchmark metrics"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SummarizeArgs summarize_args;
  auto* summarize = app.add_subcommand(
      "summarize", "Build the dual-level memory cache (captions + action outcomes)");
  summarize->add_option("--input", summarize_args.input, "Trajectory JSONL")->required();
  summarize->add_option("--cache", summarize_args.cache, "Memory cache JSONL to create/extend")
      ->required();
  summarize->add_option("--config", summarize_args.config_file, "Config file (JSON)");
  summarize_args.backend.add_flags(summarize);

  DatagenArgs datagen_args;
  auto* datagen = app.add_subcommand("datagen", "Training-data curation");
  auto* datagen_run = datagen->add_subcommand(
      "run", "Curate, filter, rebalance, balance, and format the step-level dataset");
  datagen_run->add_option("--input", datagen_args.input, "Trajectory JSONL")->required();
  datagen_run->add_option("--cache", datagen_args.cache, "Memory cache JSONL")->required();
  datagen_run->add_option("--out", datagen_args.out, "Output dataset JSONL")->required();
  datagen_run->add_option("--seed", datagen_args.seed, "Sampling seed (recorded in the manifest)")
      ->each([&datagen_args](const std::string&) { datagen_args.seed_set = true; });
  datagen_run->add_option("--parallel", datagen_args.parallel, "Curation worker count");
  datagen_run->add_option("--rebalance", datagen_args.rebalance, "uniform | power")
      ->check(CLI::IsMember({"uniform", "power"}));
  datagen_run->add_option("--alpha", datagen_args.alpha, "Exponent for the power scheme");
  datagen_run->add_option("--config", datagen_args.config_file, "Config file (JSON)");
  datagen_args.teacher.add_flags(datagen_run, "teacher-");
  datagen_args.synth.add_flags(datagen_run, "synth-");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Step-level benchmark evaluation");
  auto* eval_run = eval_cmd->add_subcommand("run", "Run the planner over a benchmark file");
  eval_run->add_option("--benchmark", eval_args.benchmark, "Benchmark trajectory JSONL")
      ->required();
  eval_run->add_option("--cache", eval_args.cache, "Memory cache JSONL")->required();
  eval_run->add_option("--report", eval_args.report, "Report JSON path")->required();
  eval_run->add_option("--transcripts", eval_args.transcripts, "Transcript JSONL path");
  eval_run->add_option("--max-retrievals", eval_args.max_retrievals,
                       "Look-back budget per step (0 disables retrieval)");
  eval_run->add_option("--parallel", eval_args.parallel, "Worker count");
  eval_run->add_option("--grounding-threshold", eval_args.threshold,
                       "Normalized distance threshold when no bbox exists");
  eval_run->add_option("--seed", eval_args.seed, "Recorded into the config hash");
  eval_run->add_option("--config", eval_args.config_file, "Config file (JSON)");
  eval_args.backend.add_flags(eval_run);

  TokensArgs tokens_args;
  auto add_tokens_flags = [&tokens_args](CLI::App* cmd) {
    cmd->add_option("--input", tokens_args.input, "Trajectory JSONL")->required();
    cmd->add_option("--strategy", tokens_args.strategy,
                    "none | +A | +5O | +AO | +SA | +PAL | all");
    cmd->add_option("--cache", tokens_args.cache, "Memory cache JSONL (needed for +SA/+PAL)");
    cmd->add_option("--trace", tokens_args.trace, "Transcript JSONL giving the look-back trace");
    cmd->add_option("--image-tokens", tokens_args.image_tokens, "Flat cost per image");
    cmd->add_option("--pixels-per-token", tokens_args.pixels_per_token,
                    "Use a resolution-proportional image cost instead");
    cmd->add_option("--report", tokens_args.report, "Report JSON path");
  };
  auto* tokens_cmd =
      app.add_subcommand("tokens", "Context-token accounting across memory strategies");
  add_tokens_flags(tokens_cmd);
  auto* eval_tokens = eval_cmd->add_subcommand("tokens", "Alias of the top-level tokens command");
  add_tokens_flags(eval_tokens);

  StatsArgs stats_args;
  auto add_stats_flags = [&stats_args](CLI::App* cmd) {
    cmd->add_option("--transcripts", stats_args.transcripts, "Transcript JSONL")->required();
    cmd->add_option("--report", stats_args.report, "Report JSON path");
  };
  auto* stats_cmd =
      app.add_subcommand("retrieval-stats", "Look-back distance histogram from transcripts");
  add_stats_flags(stats_cmd);
  auto* eval_stats =
      eval_cmd->add_subcommand("retrieval-stats", "Alias of the top-level retrieval-stats");
  add_stats_flags(eval_stats);

  ValidateArgs validate_args;
  auto* validate_cmd =
      app.add_subcommand("validate", "Schema-validate a trajectory or dataset file");
  validate_cmd->add_option("path", validate_args.path, "JSONL file to validate")->required();
  validate_cmd->add_option("--kind", validate_args.kind, "auto | trajectories | sft")
      ->check(CLI::IsMember({"auto", "trajectories", "sft"}));
  validate_cmd->add_flag("--no-check-images", validate_args.no_check_images,
                         "Skip screenshot existence/dimension checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*summarize) return cmd_summarize(summarize_args);
    if (*datagen_run) return cmd_datagen(datagen_args);
    if (*eval_run) return cmd_eval(eval_args);
    if (*tokens_cmd || *eval_tokens) return cmd_tokens(tokens_args);
    if (*stats_cmd || *eval_stats) return cmd_retrieval_stats(stats_args);
    if (*validate_cmd) return cmd_validate(validate_args);
    if (*datagen) {
      std::cerr << "datagen needs a subcommand, try: datagen run --help\n";
      return kExitIoError;
    }
    if (*eval_cmd) {
      std::cerr << "eval needs a subcommand, try: eval run --help\n";
      return kExitIoError;
    }
  } catch (const Error& e) {
    std::cerr << argv[0] << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << argv[0] << ": " << e.what() << "\n";
    return kExitIoError;
  }
  return kExitOk;
}
