#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lookback/backend.hpp"
#include "lookback/memory.hpp"
#include "lookback/prompts.hpp"
#include "lookback/trajectory.hpp"
#include "lookback/turn.hpp"

namespace lookback {

struct PlannerConfig {
  int max_retrievals = 1;
  RenderLimits render_limits;
  std::string system_prompt = prompts::planner_system();
  BackendConfig backend;
};

/// Everything one planning decision sees: the goal, the compressed memory and
/// raw screenshots of steps 0..i-1, and the current observation o_i.
struct PlanContext {
  Goal goal;
  Platform platform = Platform::mobile;
  CompressedMemory memory;
  Observation current;
  std::vector<Observation> history;

  void check() const {
    auto i = current.step_index;
    if (i < 0) throw Error(Errc::invalid_argument, "current step index is negative");
    if (static_cast<std::int64_t>(memory.size()) != i) {
      throw Error(Errc::invalid_argument,
                  "memory must cover exactly steps 0.." + std::to_string(i - 1) + ", has " +
                      std::to_string(memory.size()) + " entries");
    }
    if (static_cast<std::int64_t>(history.size()) != i) {
      throw Error(Errc::invalid_argument,
                  "history must cover exactly steps 0.." + std::to_string(i - 1));
    }
  }
};

/// Outcome of one planning decision. `retrieved_steps` empty means the model
/// answered with a GUI action directly; otherwise it looked back first.
struct PlanStep {
  std::vector<std::int64_t> retrieved_steps;
  Action action;
  std::vector<AgentTurn> turns;
  std::vector<std::string> think_texts;

  bool used_retrieval() const { return !retrieved_steps.empty(); }
};

/// One record per backend call, suitable for JSONL transcript logs and for
/// retrieval statistics. Message snapshots keep image references, not bytes.
struct TranscriptRecord {
  std::string trajectory_id;
  std::int64_t step = 0;        // current observation index of the plan step
  int call_index = 0;           // 0-based within the plan step
  std::vector<ChatMessage> messages;
  std::string raw_output;
  bool parse_ok = false;
  std::string error;            // error code name + message when something failed
  std::string action_json;      // canonical form when parse_ok
  bool is_retrieve = false;
  bool retrieve_executed = false;
  std::int64_t retrieve_step = -1;
};

using TranscriptSink = std::function<void(const TranscriptRecord&)>;

inline json transcript_record_to_json(const TranscriptRecord& r) {
  json msgs = json::array();
  for (const auto& m : r.messages) msgs.push_back(message_to_json(m));
  json j{{"trajectory_id", r.trajectory_id},
         {"step", r.step},
         {"call_index", r.call_index},
         {"messages", msgs},
         {"raw_output", r.raw_output},
         {"parse_ok", r.parse_ok},
         {"is_retrieve", r.is_retrieve},
         {"retrieve_executed", r.retrieve_executed}};
  if (!r.error.empty()) j["error"] = r.error;
  if (!r.action_json.empty()) j["action"] = json::parse(r.action_json);
  if (r.retrieve_step >= 0) j["retrieve_step"] = r.retrieve_step;
  return j;
}

inline TranscriptRecord transcript_record_from_json(const json& j) {
  TranscriptRecord r;
  r.trajectory_id = j.value("trajectory_id", std::string());
  r.step = j.value("step", std::int64_t{0});
  r.call_index = j.value("call_index", 0);
  if (j.contains("messages")) {
    for (const auto& m : j["messages"]) r.messages.push_back(message_from_json(m));
  }
  r.raw_output = j.value("raw_output", std::string());
  r.parse_ok = j.value("parse_ok", false);
  r.error = j.value("error", std::string());
  if (j.contains("action")) r.action_json = j["action"].dump();
  r.is_retrieve = j.value("is_retrieve", false);
  r.retrieve_executed = j.value("retrieve_executed", false);
  r.retrieve_step = j.value("retrieve_step", std::int64_t{-1});
  return r;
}

/// One planning decision with active look-back.
///
/// The message list only ever grows: each retrieval appends the model's own
/// turn and a tool message carrying the requested screenshot, then queries
/// again. When the retrieval budget is spent and the model still asks to look
/// back, one recovery query demands a GUI action; if the model retrieves yet
/// again the step fails with BudgetExhausted.
inline PlanStep plan_step(Backend& backend, const PlanContext& ctx, const PlannerConfig& config,
                          const TranscriptSink& sink = {}, const std::string& trajectory_id = "") {
  ctx.check();
  if (config.max_retrievals < 0) {
    throw Error(Errc::config_error, "max_retrievals must be >= 0");
  }
  const std::int64_t current = ctx.current.step_index;

  std::vector<ChatMessage> messages;
  messages.push_back(ChatMessage::text(Role::system, config.system_prompt));
  messages.push_back(prompts::planner_user_message(
      ctx.goal, render_memory(ctx.memory, config.render_limits), ctx.current));

  PlanStep step;
  bool forced_final = false;
  int call_index = 0;

  while (true) {
    TranscriptRecord rec;
    rec.trajectory_id = trajectory_id;
    rec.step = current;
    rec.call_index = call_index++;
    rec.messages = messages;

    std::string raw;
    try {
      raw = backend.complete(messages, config.backend);
    } catch (const Error& e) {
      rec.error = e.what();
      if (sink) sink(rec);
      throw;
    }
    rec.raw_output = raw;

    AgentTurn turn;
    try {
      turn = parse_turn(raw);
    } catch (const Error& e) {
      rec.error = e.what();
      if (sink) sink(rec);
      throw;
    }
    rec.parse_ok = true;
    rec.action_json = canonical_action_json(turn.call);
    step.turns.push_back(turn);
    step.think_texts.push_back(turn.think);

    if (!turn.call.is_retrieve()) {
      try {
        validate_for_platform(turn.call, ctx.platform);
      } catch (const Error& e) {
        rec.error = e.what();
        if (sink) sink(rec);
        throw;
      }
      if (sink) sink(rec);
      step.action = turn.call;
      return step;
    }

    // retrieval branch
    const std::int64_t j = turn.call.get<Retrieve>().step;
    rec.is_retrieve = true;
    rec.retrieve_step = j;
    if (j < 0 || j >= current) {
      auto err = Error(Errc::invalid_retrieve_index,
                       "retrieve step " + std::to_string(j) + " is not in [0, " +
                           std::to_string(current) + ")")
                     .with_index(j)
                     .with_bound(current);
      rec.error = err.what();
      if (sink) sink(rec);
      throw err;
    }
    for (std::int64_t seen : step.retrieved_steps) {
      if (seen == j) {
        auto err = Error(Errc::invalid_retrieve_index,
                         "step " + std::to_string(j) + " was already retrieved in this decision")
                       .with_index(j)
                       .with_bound(current);
        rec.error = err.what();
        if (sink) sink(rec);
        throw err;
      }
    }

    if (static_cast<int>(step.retrieved_steps.size()) < config.max_retrievals) {
      rec.retrieve_executed = true;
      if (sink) sink(rec);
      step.retrieved_steps.push_back(j);
      messages.push_back(ChatMessage::text(Role::assistant, turn.raw));
      messages.push_back(
          prompts::retrieved_observation_message(ctx.history[static_cast<std::size_t>(j)]));
      continue;
    }

    // budget spent: one forced-final recovery, then a hard error
    if (forced_final) {
      auto err = Error(Errc::budget_exhausted,
                       "model kept retrieving after the budget of " +
                           std::to_string(config.max_retrievals) + " was exhausted");
      rec.error = err.what();
      if (sink) sink(rec);
      throw err;
    }
    forced_final = true;
    if (sink) sink(rec);
    messages.push_back(ChatMessage::text(Role::assistant, turn.raw));
    messages.push_back(prompts::budget_exhausted_message());
  }
}

// --- offline episode evaluation ------------------------------------------------------

/// Per-step result of an offline run; failures are captured, never thrown, so
/// one bad step cannot abort an episode.
struct StepOutcome {
  std::string trajectory_id;
  std::int64_t step = 0;
  std::optional<PlanStep> plan;
  std::string error_code;
  std::string error_message;

  bool ok() const { return plan.has_value(); }
};

inline PlanContext make_plan_context(const Trajectory& traj, std::int64_t step,
                                     const MemoryCache& cache) {
  PlanContext ctx;
  ctx.goal = traj.goal;
  ctx.platform = traj.platform;
  ctx.current = traj.observations[static_cast<std::size_t>(step)];
  ctx.history.assign(traj.observations.begin(), traj.observations.begin() + step);
  ctx.memory = cache.memory_for(traj.id, step);
  return ctx;
}

/// Runs every step of one trajectory under teacher forcing: each decision is
/// conditioned on the ground-truth prefix, never on earlier predictions.
inline std::vector<StepOutcome> run_episode_offline(Backend& backend, const Trajectory& traj,
                                                    const PlannerConfig& config,
                                                    const MemoryCache& cache,
                                                    const TranscriptSink& sink = {},
                                                    bool teacher_forcing = true) {
  traj.check();
  if (!teacher_forcing) {
    throw Error(Errc::invalid_argument,
                "offline episodes are step-level and require teacher forcing; closed-loop "
                "execution is out of scope");
  }
  std::vector<StepOutcome> outcomes;
  for (std::size_t i = 0; i < traj.step_count(); ++i) {
    StepOutcome out;
    out.trajectory_id = traj.id;
    out.step = static_cast<std::int64_t>(i);
    try {
      PlanContext ctx = make_plan_context(traj, out.step, cache);
      out.plan = plan_step(backend, ctx, config, sink, traj.id);
    } catch (const Error& e) {
      out.error_code = errc_name(e.code());
      out.error_message = e.what();
    }
    outcomes.push_back(std::move(out));
  }
  return outcomes;
}

} // namespace lookback
