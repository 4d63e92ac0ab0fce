#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lookback/matching.hpp"
#include "lookback/memory.hpp"
#include "lookback/planner.hpp"
#include "lookback/trajectory.hpp"

namespace lookback {

/// One benchmark unit: predict the action taken at `step` given the
/// ground-truth prefix.
struct StepTask {
  std::string trajectory_id;
  std::int64_t step = 0;
  Goal goal;
  Platform platform = Platform::mobile;
  Observation current;
  Action gt_action;
  std::optional<BBox> gt_bbox;
  std::vector<Observation> history;  // observations 0..step-1
};

inline std::vector<StepTask> step_tasks_from_trajectory(const Trajectory& traj) {
  traj.check();
  std::vector<StepTask> tasks;
  for (std::size_t i = 0; i < traj.step_count(); ++i) {
    StepTask t;
    t.trajectory_id = traj.id;
    t.step = static_cast<std::int64_t>(i);
    t.goal = traj.goal;
    t.platform = traj.platform;
    t.current = traj.observations[i];
    t.gt_action = traj.actions[i];
    if (i < traj.gt_bboxes.size()) t.gt_bbox = traj.gt_bboxes[i];
    t.history.assign(traj.observations.begin(), traj.observations.begin() + i);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

inline std::vector<StepTask> step_tasks_from_file(const std::filesystem::path& path) {
  std::vector<StepTask> tasks;
  for (const auto& traj : load_trajectories_jsonl(path)) {
    auto t = step_tasks_from_trajectory(traj);
    tasks.insert(tasks.end(), t.begin(), t.end());
  }
  return tasks;
}

// --- the three step-level metrics --------------------------------------------------

/// Type match: action kinds equal, parameters ignored.
inline bool match_type(const Action& pred, const Action& gt) {
  if (pred.is_retrieve() || gt.is_retrieve()) {
    throw Error(Errc::invalid_argument, "retrieve has no metric semantics");
  }
  return pred.kind() == gt.kind();
}

/// Grounding: only defined where the ground truth is a point action; such
/// steps form GR's denominator. nullopt = not applicable.
inline std::optional<bool> match_grounding(const Action& pred, const StepTask& task,
                                           const MatchPolicy& policy = {}) {
  if (!task.gt_action.is_point_action()) return std::nullopt;
  auto pred_point = pred.point();
  if (!pred_point) return false;
  return point_hits(*pred_point, *task.gt_action.point(), task.gt_bbox, policy);
}

/// Step success: type match plus every parameter correct. Single shared
/// implementation with the data pipeline's filter.
inline bool match_step_success(const Action& pred, const StepTask& task,
                               const MatchPolicy& policy = {}) {
  return matches_ground_truth(pred, task.gt_action, task.gt_bbox, policy);
}

// --- reports ------------------------------------------------------------------------

struct MetricsReport {
  double type_match_rate = 0.0;     // percent, 1 decimal, half-up
  double grounding_rate = 0.0;
  double step_success_rate = 0.0;
  std::size_t sample_count = 0;
  std::size_t grounding_applicable = 0;
  std::map<std::string, std::map<std::string, std::size_t>> confusion;  // gt kind -> pred kind
  std::string config_hash;

  json to_json() const {
    json conf = json::object();
    for (const auto& [gt, preds] : confusion) {
      json row = json::object();
      for (const auto& [pred, n] : preds) row[pred] = n;
      conf[gt] = row;
    }
    return json{{"type_match_rate", type_match_rate},
                {"grounding_rate", grounding_rate},
                {"step_success_rate", step_success_rate},
                {"sample_count", sample_count},
                {"grounding_applicable", grounding_applicable},
                {"confusion", conf},
                {"config_hash", config_hash}};
  }

  std::string to_text_table() const {
    std::string out;
    out += "metric                value\n";
    out += "--------------------  ------\n";
    out += "type match rate       " + format_pct1(type_match_rate) + "\n";
    out += "grounding rate        " + format_pct1(grounding_rate) + "\n";
    out += "step success rate     " + format_pct1(step_success_rate) + "\n";
    out += "samples               " + std::to_string(sample_count) + "\n";
    out += "grounding applicable  " + std::to_string(grounding_applicable) + "\n";
    out += "config hash           " + config_hash + "\n";
    return out;
  }
};

struct RetrievalStats {
  std::map<std::int64_t, std::size_t> histogram;  // distance -> count
  std::int64_t max_distance = 0;
  double retrieval_rate = 0.0;  // fraction of steps with at least one look-back
  std::size_t total_steps = 0;
  std::size_t total_retrievals = 0;

  json to_json() const {
    json hist = json::object();
    for (const auto& [d, n] : histogram) hist[std::to_string(d)] = n;
    return json{{"histogram", hist},
                {"max_distance", max_distance},
                {"retrieval_rate", retrieval_rate},
                {"total_steps", total_steps},
                {"total_retrievals", total_retrievals}};
  }
};

/// Distance histogram over executed look-backs in a transcript set.
inline RetrievalStats retrieval_stats(const std::vector<TranscriptRecord>& transcripts) {
  RetrievalStats stats;
  std::map<std::pair<std::string, std::int64_t>, bool> steps;  // -> retrieved?
  for (const auto& r : transcripts) {
    auto key = std::make_pair(r.trajectory_id, r.step);
    steps.emplace(key, false);
    if (r.is_retrieve && r.retrieve_executed) {
      std::int64_t d = r.step - r.retrieve_step;
      ++stats.histogram[d];
      ++stats.total_retrievals;
      stats.max_distance = std::max(stats.max_distance, d);
      steps[key] = true;
    }
  }
  stats.total_steps = steps.size();
  std::size_t with_retrieval = 0;
  for (const auto& [_, used] : steps) {
    if (used) ++with_retrieval;
  }
  stats.retrieval_rate =
      stats.total_steps == 0 ? 0.0
                             : static_cast<double>(with_retrieval) /
                                   static_cast<double>(stats.total_steps);
  return stats;
}

inline RetrievalStats retrieval_stats_from_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw Error(Errc::io_error, "cannot open transcript file: " + path.string());
  std::vector<TranscriptRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw Error(Errc::schema_error,
                  path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
    }
    records.push_back(transcript_record_from_json(j));
  }
  return retrieval_stats(records);
}

// --- evaluation ------------------------------------------------------------------------

struct EvalOptions {
  PlannerConfig planner;
  MatchPolicy policy;
  int parallel = 1;
  std::uint64_t seed = 0;  // recorded into the config hash for auditability
};

struct StepResultRow {
  std::string trajectory_id;
  std::int64_t step = 0;
  bool ok = false;
  std::string error;
  std::string pred_kind;  // "(error)" when the step failed
  bool type_match = false;
  std::optional<bool> grounding;
  bool success = false;
  std::vector<std::int64_t> retrieved_steps;
};

struct EvalResult {
  MetricsReport report;
  RetrievalStats stats;
  std::vector<StepResultRow> rows;
  std::vector<TranscriptRecord> transcripts;
};

inline std::string eval_config_hash(const EvalOptions& options) {
  json snapshot{{"system_prompt", options.planner.system_prompt},
                {"max_retrievals", options.planner.max_retrievals},
                {"caption_chars", options.planner.render_limits.caption_chars},
                {"outcome_chars", options.planner.render_limits.outcome_chars},
                {"grounding_threshold", options.policy.grounding_threshold},
                {"seed", options.seed}};
  return hex64(fnv1a64(snapshot.dump()));
}

/// Runs the planner on every task under teacher forcing and folds the results
/// into one report. Parse and transport failures score as wrong on all three
/// metrics. Tasks are processed on a bounded worker pool; results and
/// transcripts are ordered by (trajectory id, step) regardless of completion
/// order.
inline EvalResult evaluate(Backend& backend, std::vector<StepTask> tasks,
                           const MemoryCache& cache, const EvalOptions& options) {
  if (tasks.empty()) throw Error(Errc::empty_input, "no tasks to evaluate");
  std::stable_sort(tasks.begin(), tasks.end(), [](const StepTask& a, const StepTask& b) {
    if (a.trajectory_id != b.trajectory_id) return a.trajectory_id < b.trajectory_id;
    return a.step < b.step;
  });

  struct Slot {
    StepResultRow row;
    std::vector<TranscriptRecord> transcripts;
  };
  std::vector<Slot> slots(tasks.size());

  auto run_one = [&](std::size_t i) {
    const StepTask& task = tasks[i];
    Slot& slot = slots[i];
    slot.row.trajectory_id = task.trajectory_id;
    slot.row.step = task.step;
    TranscriptSink sink = [&slot](const TranscriptRecord& r) { slot.transcripts.push_back(r); };
    try {
      PlanContext ctx;
      ctx.goal = task.goal;
      ctx.platform = task.platform;
      ctx.current = task.current;
      ctx.history = task.history;
      ctx.memory = cache.memory_for(task.trajectory_id, task.step);
      PlanStep plan = plan_step(backend, ctx, options.planner, sink, task.trajectory_id);
      slot.row.ok = true;
      slot.row.pred_kind = kind_name(plan.action.kind());
      slot.row.type_match = match_type(plan.action, task.gt_action);
      slot.row.grounding = match_grounding(plan.action, task, options.policy);
      slot.row.success = match_step_success(plan.action, task, options.policy);
      slot.row.retrieved_steps = plan.retrieved_steps;
    } catch (const Error& e) {
      slot.row.ok = false;
      slot.row.error = e.what();
      slot.row.pred_kind = "(error)";
      slot.row.type_match = false;
      slot.row.grounding =
          task.gt_action.is_point_action() ? std::optional<bool>(false) : std::nullopt;
      slot.row.success = false;
    }
  };

  int workers = options.parallel < 1 ? 1 : options.parallel;
  if (workers == 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t i = next.fetch_add(1);
          if (i >= tasks.size()) return;
          run_one(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  EvalResult result;
  std::size_t type_hits = 0, gr_hits = 0, gr_den = 0, sr_hits = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    Slot& slot = slots[i];
    if (slot.row.type_match) ++type_hits;
    if (slot.row.grounding.has_value()) {
      ++gr_den;
      if (*slot.row.grounding) ++gr_hits;
    }
    if (slot.row.success) ++sr_hits;
    ++result.report.confusion[kind_name(tasks[i].gt_action.kind())][slot.row.pred_kind];
    result.rows.push_back(std::move(slot.row));
    for (auto& t : slot.transcripts) result.transcripts.push_back(std::move(t));
  }
  const double n = static_cast<double>(tasks.size());
  result.report.sample_count = tasks.size();
  result.report.grounding_applicable = gr_den;
  result.report.type_match_rate = round1_half_up(100.0 * static_cast<double>(type_hits) / n);
  result.report.step_success_rate = round1_half_up(100.0 * static_cast<double>(sr_hits) / n);
  result.report.grounding_rate =
      gr_den == 0 ? 0.0
                  : round1_half_up(100.0 * static_cast<double>(gr_hits) /
                                   static_cast<double>(gr_den));
  result.report.config_hash = eval_config_hash(options);
  result.stats = retrieval_stats(result.transcripts);
  return result;
}

// --- context token accounting ---------------------------------------------------------

/// Memory paradigms whose per-step input cost the harness accounts.
enum class MemoryStrategy {
  none,                // system + goal + current screenshot
  past_actions,        // adds the list of past actions as text
  recent5_obs,         // adds up to 5 most recent past screenshots
  all_obs,             // adds every past screenshot
  summaries,           // adds the rendered compressed memory
  summaries_lookback,  // summaries plus retrieved screenshots per observed trace
};

inline const char* strategy_label(MemoryStrategy s) {
  switch (s) {
    case MemoryStrategy::none: return "none";
    case MemoryStrategy::past_actions: return "+A";
    case MemoryStrategy::recent5_obs: return "+5O";
    case MemoryStrategy::all_obs: return "+AO";
    case MemoryStrategy::summaries: return "+SA";
    case MemoryStrategy::summaries_lookback: return "+PAL";
  }
  return "none";
}

inline std::optional<MemoryStrategy> strategy_from_name(std::string_view name) {
  std::string n = to_lower_ascii(trim(name));
  if (n == "none") return MemoryStrategy::none;
  if (n == "+a" || n == "actions") return MemoryStrategy::past_actions;
  if (n == "+5o" || n == "recent5") return MemoryStrategy::recent5_obs;
  if (n == "+ao" || n == "all") return MemoryStrategy::all_obs;
  if (n == "+sa" || n == "summaries") return MemoryStrategy::summaries;
  if (n == "+pal" || n == "lookback") return MemoryStrategy::summaries_lookback;
  return std::nullopt;
}

/// Pluggable token cost model. The default charges a flat constant per image
/// and ceil(chars/4) per string; a resolution-proportional image model is
/// available for endpoints that scale with pixels.
struct CostModel {
  std::function<std::int64_t(int, int)> image_tokens;
  std::function<std::int64_t(const std::string&)> text_tokens;
  std::string description;

  static CostModel default_model() { return flat_image(1400); }

  static CostModel flat_image(std::int64_t tokens_per_image) {
    CostModel m;
    m.image_tokens = [tokens_per_image](int, int) { return tokens_per_image; };
    m.text_tokens = [](const std::string& s) {
      return static_cast<std::int64_t>((s.size() + 3) / 4);
    };
    m.description = "image=" + std::to_string(tokens_per_image) + " flat, text=ceil(chars/4)";
    return m;
  }

  static CostModel pixel_proportional(double pixels_per_token) {
    CostModel m;
    m.image_tokens = [pixels_per_token](int w, int h) {
      double px = static_cast<double>(w) * static_cast<double>(h);
      return static_cast<std::int64_t>(px / pixels_per_token + 0.999999);
    };
    m.text_tokens = [](const std::string& s) {
      return static_cast<std::int64_t>((s.size() + 3) / 4);
    };
    m.description = "image=pixels/" + std::to_string(pixels_per_token) + ", text=ceil(chars/4)";
    return m;
  }
};

/// Observed look-back trace: which past steps were retrieved at each decision
/// step. Used to price the lookback strategy.
struct RetrievalTrace {
  std::map<std::pair<std::string, std::int64_t>, std::vector<std::int64_t>> retrieved;

  static RetrievalTrace from_transcripts(const std::vector<TranscriptRecord>& transcripts) {
    RetrievalTrace trace;
    for (const auto& r : transcripts) {
      if (r.is_retrieve && r.retrieve_executed) {
        trace.retrieved[{r.trajectory_id, r.step}].push_back(r.retrieve_step);
      }
    }
    return trace;
  }

  const std::vector<std::int64_t>* at(const std::string& traj, std::int64_t step) const {
    auto it = retrieved.find({traj, step});
    return it == retrieved.end() ? nullptr : &it->second;
  }
};

struct TokenBudgetReport {
  MemoryStrategy strategy = MemoryStrategy::none;
  double mean_input_tokens = 0.0;
  std::size_t steps = 0;
  std::string cost_model;

  json to_json() const {
    return json{{"strategy", strategy_label(strategy)},
                {"mean_input_tokens", mean_input_tokens},
                {"steps", steps},
                {"cost_model", cost_model}};
  }
};

/// Message list a planner following `strategy` would send at `step`, used only
/// for accounting. The summaries strategies reuse the real planner builders so
/// the accounting matches what plan_step actually sends.
inline std::vector<ChatMessage> strategy_messages(const Trajectory& traj, std::int64_t step,
                                                  MemoryStrategy strategy,
                                                  const MemoryCache* cache,
                                                  const RetrievalTrace* trace,
                                                  const RenderLimits& limits = {}) {
  const auto idx = static_cast<std::size_t>(step);
  std::vector<ChatMessage> messages;
  messages.push_back(ChatMessage::text(Role::system, prompts::planner_system()));

  std::string memory_text;
  switch (strategy) {
    case MemoryStrategy::none:
      memory_text = kEmptyMemorySentinel;
      break;
    case MemoryStrategy::past_actions: {
      if (step == 0) {
        memory_text = kEmptyMemorySentinel;
      } else {
        for (std::int64_t s = 0; s < step; ++s) {
          if (s) memory_text += "\n";
          memory_text += "Step " + std::to_string(s) + ": " +
                         describe_action(traj.actions[static_cast<std::size_t>(s)]);
        }
      }
      break;
    }
    case MemoryStrategy::recent5_obs:
    case MemoryStrategy::all_obs:
      memory_text = step == 0 ? kEmptyMemorySentinel : "(shown as screenshots below)";
      break;
    case MemoryStrategy::summaries:
    case MemoryStrategy::summaries_lookback: {
      if (cache == nullptr) {
        throw Error(Errc::missing_memory_cache,
                    "summary strategies need the memory cache to price their context");
      }
      memory_text = render_memory(cache->memory_for(traj.id, step), limits);
      break;
    }
  }
  messages.push_back(prompts::planner_user_message(traj.goal, memory_text, traj.observations[idx]));

  if (strategy == MemoryStrategy::recent5_obs || strategy == MemoryStrategy::all_obs) {
    std::int64_t first = strategy == MemoryStrategy::recent5_obs ? std::max<std::int64_t>(0, step - 5) : 0;
    for (std::int64_t s = first; s < step; ++s) {
      messages.push_back(
          prompts::retrieved_observation_message(traj.observations[static_cast<std::size_t>(s)]));
    }
  }
  if (strategy == MemoryStrategy::summaries_lookback && trace != nullptr) {
    if (const auto* steps = trace->at(traj.id, step)) {
      for (std::int64_t j : *steps) {
        messages.push_back(
            prompts::retrieved_observation_message(traj.observations[static_cast<std::size_t>(j)]));
      }
    }
  }
  return messages;
}

inline std::int64_t message_cost(const std::vector<ChatMessage>& messages, const CostModel& model,
                                 const Trajectory& traj) {
  // Image dimensions come from the trajectory's observation records, keyed by
  // reference; unknown references cost as a default-size image.
  std::map<std::string, std::pair<int, int>> dims;
  for (const auto& o : traj.observations) dims[o.image_ref] = {o.width_px, o.height_px};
  std::int64_t total = 0;
  for (const auto& m : messages) {
    for (const auto& p : m.parts) {
      if (const auto* t = std::get_if<TextPart>(&p)) {
        total += model.text_tokens(t->text);
      } else {
        const auto& ref = std::get<ImagePart>(p).image_ref;
        auto it = dims.find(ref);
        int w = it == dims.end() ? 1000 : it->second.first;
        int h = it == dims.end() ? 1000 : it->second.second;
        total += model.image_tokens(w, h);
      }
    }
  }
  return total;
}

/// Mean per-step input length for one trajectory under one memory paradigm.
inline TokenBudgetReport token_budget(const Trajectory& traj, MemoryStrategy strategy,
                                      const CostModel& model, const MemoryCache* cache = nullptr,
                                      const RetrievalTrace* trace = nullptr,
                                      const RenderLimits& limits = {}) {
  traj.check();
  if ((strategy == MemoryStrategy::summaries || strategy == MemoryStrategy::summaries_lookback) &&
      cache == nullptr) {
    throw Error(Errc::missing_memory_cache,
                "summary strategies need the memory cache to price their context");
  }
  TokenBudgetReport report;
  report.strategy = strategy;
  report.cost_model = model.description;
  report.steps = traj.step_count();
  if (report.steps == 0) return report;
  std::int64_t total = 0;
  for (std::size_t i = 0; i < traj.step_count(); ++i) {
    auto messages = strategy_messages(traj, static_cast<std::int64_t>(i), strategy, cache, trace,
                                      limits);
    total += message_cost(messages, model, traj);
  }
  report.mean_input_tokens = static_cast<double>(total) / static_cast<double>(report.steps);
  return report;
}

} // namespace lookback
