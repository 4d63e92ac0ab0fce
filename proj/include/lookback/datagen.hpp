#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "lookback/backend.hpp"
#include "lookback/matching.hpp"
#include "lookback/memory.hpp"
#include "lookback/planner.hpp"
#include "lookback/prompts.hpp"
#include "lookback/trajectory.hpp"
#include "lookback/turn.hpp"

namespace lookback {

/// Raw text of the four teacher stages, in order.
struct StageOutputs {
  std::string history_revision;
  std::string candidate_proposals;
  std::string confidence_evaluation;
  std::string action_prediction;

  bool all_nonempty() const {
    return !trim(history_revision).empty() && !trim(candidate_proposals).empty() &&
           !trim(confidence_evaluation).empty() && !trim(action_prediction).empty();
  }
};

/// One teacher-curated decision step, before filtering.
struct CuratedSample {
  std::string trajectory_id;
  std::int64_t step = 0;
  StageOutputs stage_outputs;
  bool used_retrieval = false;
  std::optional<std::int64_t> retrieved_step;
  Action predicted_action;
  bool matches_gt = false;
  std::optional<std::int64_t> retrieval_distance;  // step - retrieved_step, >= 1

  // context carried along for SFT formatting
  Goal goal;
  Platform platform = Platform::mobile;
  Observation current;
  std::optional<Observation> retrieved_obs;
};

/// One step-level training dialogue.
struct SFTSample {
  std::string trajectory_id;
  std::int64_t step = 0;
  bool used_retrieval = false;
  std::optional<std::int64_t> retrieval_distance;
  std::vector<ChatMessage> messages;
};

inline json sft_sample_to_json(const SFTSample& s) {
  json labels{{"used_retrieval", s.used_retrieval}};
  if (s.retrieval_distance) labels["retrieval_distance"] = *s.retrieval_distance;
  json msgs = json::array();
  for (const auto& m : s.messages) msgs.push_back(message_to_json(m));
  return json{{"trajectory_id", s.trajectory_id},
              {"step", s.step},
              {"labels", labels},
              {"messages", msgs}};
}

inline SFTSample sft_sample_from_json(const json& j) {
  if (!j.is_object() || !j.contains("messages") || !j["messages"].is_array() ||
      !j.contains("labels") || !j["labels"].is_object()) {
    throw Error(Errc::schema_error, "sft record must have \"labels\" and \"messages\"");
  }
  SFTSample s;
  s.trajectory_id = j.value("trajectory_id", std::string());
  s.step = j.value("step", std::int64_t{0});
  s.used_retrieval = j["labels"].value("used_retrieval", false);
  if (j["labels"].contains("retrieval_distance")) {
    s.retrieval_distance = j["labels"]["retrieval_distance"].get<std::int64_t>();
  }
  for (const auto& m : j["messages"]) s.messages.push_back(message_from_json(m));
  return s;
}

// --- stage 3 parsing ----------------------------------------------------------------

/// The teacher's look-back decision is machine-parsed from the final nonempty
/// line of the stage-3 reply: `RETRIEVE <j>` or `NO RETRIEVAL`.
inline std::optional<std::int64_t> parse_stage3_decision(const std::string& reply) {
  std::string last_line;
  std::size_t end = reply.size();
  while (end > 0) {
    std::size_t start = reply.rfind('\n', end - 1);
    std::size_t line_begin = (start == std::string::npos) ? 0 : start + 1;
    last_line = trim(reply.substr(line_begin, end - line_begin));
    if (!last_line.empty()) break;
    if (start == std::string::npos) break;
    end = start;
  }
  if (last_line == "NO RETRIEVAL") return std::nullopt;
  const std::string prefix = "RETRIEVE ";
  if (last_line.rfind(prefix, 0) == 0) {
    std::string digits = trim(last_line.substr(prefix.size()));
    if (!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos) {
      return std::stoll(digits);
    }
  }
  throw Error(Errc::stage_parse_failure,
              "stage 3 must end with `RETRIEVE <step>` or `NO RETRIEVAL`, got \"" + last_line +
                  "\"")
      .with_index(3);
}

// --- curation ------------------------------------------------------------------------

struct CurateOptions {
  BackendConfig teacher_config;
  MatchPolicy policy;
  RenderLimits render_limits;
};

/// Runs the four deliberation stages for one decision step. Each stage is
/// conditioned on every earlier stage's reply; a stage-3 look-back request
/// makes the requested screenshot part of the stage-4 prompt.
inline CuratedSample curate_step(Backend& teacher, const Trajectory& traj, std::int64_t step,
                                 const CompressedMemory& memory, const CurateOptions& options) {
  if (step < 0 || step >= static_cast<std::int64_t>(traj.step_count())) {
    throw Error(Errc::invalid_argument,
                "step " + std::to_string(step) + " outside trajectory of " +
                    std::to_string(traj.step_count()) + " steps");
  }
  if (static_cast<std::int64_t>(memory.size()) != step) {
    throw Error(Errc::invalid_argument, "memory must cover exactly steps 0..step-1");
  }

  CuratedSample sample;
  sample.trajectory_id = traj.id;
  sample.step = step;
  sample.goal = traj.goal;
  sample.platform = traj.platform;
  sample.current = traj.observations[static_cast<std::size_t>(step)];

  std::vector<ChatMessage> messages;
  messages.push_back(ChatMessage::text(Role::system, prompts::teacher_system()));
  messages.push_back(prompts::teacher_stage1_message(
      traj.goal, render_memory(memory, options.render_limits), sample.current));
  sample.stage_outputs.history_revision = teacher.complete(messages, options.teacher_config);
  messages.push_back(ChatMessage::text(Role::assistant, sample.stage_outputs.history_revision));

  messages.push_back(prompts::teacher_stage2_message());
  sample.stage_outputs.candidate_proposals = teacher.complete(messages, options.teacher_config);
  messages.push_back(ChatMessage::text(Role::assistant, sample.stage_outputs.candidate_proposals));

  messages.push_back(prompts::teacher_stage3_message());
  sample.stage_outputs.confidence_evaluation = teacher.complete(messages, options.teacher_config);
  messages.push_back(
      ChatMessage::text(Role::assistant, sample.stage_outputs.confidence_evaluation));

  auto retrieved = parse_stage3_decision(sample.stage_outputs.confidence_evaluation);
  const Observation* retrieved_obs = nullptr;
  if (retrieved) {
    if (*retrieved < 0 || *retrieved >= step) {
      throw Error(Errc::invalid_retrieve_index,
                  "teacher asked to retrieve step " + std::to_string(*retrieved) +
                      ", valid range is [0, " + std::to_string(step) + ")")
          .with_index(*retrieved)
          .with_bound(step);
    }
    sample.used_retrieval = true;
    sample.retrieved_step = *retrieved;
    sample.retrieval_distance = step - *retrieved;
    sample.retrieved_obs = traj.observations[static_cast<std::size_t>(*retrieved)];
    retrieved_obs = &*sample.retrieved_obs;
  }

  messages.push_back(prompts::teacher_stage4_message(retrieved_obs));
  sample.stage_outputs.action_prediction = teacher.complete(messages, options.teacher_config);

  AgentTurn turn;
  try {
    turn = parse_turn(sample.stage_outputs.action_prediction);
  } catch (const Error& e) {
    throw Error(Errc::stage_parse_failure, std::string("stage 4 is not a valid turn: ") + e.what())
        .with_index(4);
  }
  if (turn.call.is_retrieve()) {
    throw Error(Errc::stage_parse_failure, "stage 4 must commit to a GUI action, not retrieve")
        .with_index(4);
  }
  sample.predicted_action = turn.call;

  const auto idx = static_cast<std::size_t>(step);
  std::optional<BBox> bbox;
  if (idx < traj.gt_bboxes.size()) bbox = traj.gt_bboxes[idx];
  sample.matches_gt =
      matches_ground_truth(sample.predicted_action, traj.actions[idx], bbox, options.policy);
  return sample;
}

// --- filtering and balancing ------------------------------------------------------------

struct FilterSplit {
  std::vector<CuratedSample> tool_correct;
  std::vector<CuratedSample> notool_correct;
  std::size_t dropped = 0;
};

/// Drops wrong-action samples and partitions survivors by tool use.
inline FilterSplit filter_and_split(const std::vector<CuratedSample>& samples) {
  FilterSplit out;
  for (const auto& s : samples) {
    if (!s.matches_gt) {
      ++out.dropped;
      continue;
    }
    if (s.used_retrieval) {
      out.tool_correct.push_back(s);
    } else {
      out.notool_correct.push_back(s);
    }
  }
  return out;
}

struct RebalanceScheme {
  enum class Mode { uniform_buckets, distance_power };
  Mode mode = Mode::uniform_buckets;
  double alpha = 1.0;  // weight proportional to distance^alpha in distance_power mode
};

inline std::map<std::int64_t, std::size_t> distance_buckets(
    const std::vector<CuratedSample>& samples) {
  std::map<std::int64_t, std::size_t> buckets;
  for (const auto& s : samples) {
    if (!s.retrieval_distance || *s.retrieval_distance < 1) {
      throw Error(Errc::invalid_argument,
                  "recency rebalance needs retrieval_distance >= 1 on every sample");
    }
    ++buckets[*s.retrieval_distance];
  }
  return buckets;
}

/// Seeded resampling with replacement that counteracts the teacher's bias for
/// very recent look-backs. Default scheme targets a uniform distribution over
/// the occupied distance buckets; weight ∝ distance^alpha is available as an
/// override. Output size defaults to the input size.
inline std::vector<CuratedSample> rebalance_recency(const std::vector<CuratedSample>& tool_samples,
                                                    const RebalanceScheme& scheme,
                                                    std::uint64_t seed,
                                                    std::size_t output_size = 0) {
  if (tool_samples.empty()) {
    throw Error(Errc::empty_input, "no tool-use samples to rebalance");
  }
  auto buckets = distance_buckets(tool_samples);
  std::vector<double> weights(tool_samples.size());
  for (std::size_t i = 0; i < tool_samples.size(); ++i) {
    double d = static_cast<double>(*tool_samples[i].retrieval_distance);
    if (scheme.mode == RebalanceScheme::Mode::uniform_buckets) {
      weights[i] = 1.0 / static_cast<double>(buckets.at(*tool_samples[i].retrieval_distance));
    } else {
      weights[i] = std::pow(d, scheme.alpha);
    }
  }
  std::size_t n = output_size == 0 ? tool_samples.size() : output_size;
  std::mt19937_64 rng(seed);
  std::vector<CuratedSample> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back(tool_samples[weighted_pick(weights, rng)]);
  }
  return out;
}

/// 1:1 tool/non-tool mix: the larger side is downsampled (seeded, without
/// replacement) to the smaller side's size, then the union is shuffled
/// deterministically.
inline std::vector<CuratedSample> balance_tool_nontool(const std::vector<CuratedSample>& tool_list,
                                                       const std::vector<CuratedSample>& notool_list,
                                                       std::uint64_t seed) {
  if (tool_list.empty() || notool_list.empty()) {
    throw Error(Errc::empty_side, tool_list.empty() ? "no tool-use samples to balance"
                                                    : "no non-tool samples to balance");
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  auto take = [&rng](const std::vector<CuratedSample>& side, std::size_t k) {
    std::vector<std::size_t> order(side.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    deterministic_shuffle(order, rng);
    std::vector<CuratedSample> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(side[order[i]]);
    return out;
  };
  std::size_t k = std::min(tool_list.size(), notool_list.size());
  std::vector<CuratedSample> combined = take(tool_list, k);
  std::vector<CuratedSample> other = take(notool_list, k);
  combined.insert(combined.end(), other.begin(), other.end());
  deterministic_shuffle(combined, rng);
  return combined;
}

// --- reasoning synthesis -----------------------------------------------------------------

/// One model call that folds the four stage replies into the think text of the
/// training sample.
inline std::string synthesize_reasoning(Backend& synth, const BackendConfig& config,
                                        const CuratedSample& sample) {
  if (!sample.stage_outputs.all_nonempty()) {
    throw Error(Errc::empty_synthesis, "all four stage outputs must be nonempty");
  }
  auto messages = prompts::synthesizer_messages(
      sample.stage_outputs.history_revision, sample.stage_outputs.candidate_proposals,
      sample.stage_outputs.confidence_evaluation, sample.stage_outputs.action_prediction);
  std::string think = synth.complete(messages, config);
  if (trim(think).empty()) {
    throw Error(Errc::empty_synthesis, "synthesizer returned empty reasoning");
  }
  return think;
}

// --- SFT formatting -------------------------------------------------------------------------

/// Emits the standardized training dialogue. Non-retrieval samples are
/// system/user/assistant; retrieval samples add the tool turn carrying the
/// retrieved screenshot and a closing assistant turn with the final action.
inline SFTSample format_sft(const CuratedSample& sample, const std::string& think,
                            const std::string& memory_render) {
  if (!sample.matches_gt) {
    throw Error(Errc::invalid_argument, "only ground-truth-matching samples may be formatted");
  }
  if (trim(think).empty()) {
    throw Error(Errc::invalid_argument, "think text must be nonempty");
  }
  SFTSample out;
  out.trajectory_id = sample.trajectory_id;
  out.step = sample.step;
  out.used_retrieval = sample.used_retrieval;
  out.retrieval_distance = sample.retrieval_distance;

  out.messages.push_back(ChatMessage::text(Role::system, prompts::planner_system()));
  out.messages.push_back(prompts::planner_user_message(sample.goal, memory_render, sample.current));

  if (!sample.used_retrieval) {
    out.messages.push_back(ChatMessage::text(
        Role::assistant, serialize_turn(make_turn(think, sample.predicted_action))));
    return out;
  }

  out.messages.push_back(ChatMessage::text(
      Role::assistant, serialize_turn(make_turn(think, Retrieve{*sample.retrieved_step}))));
  out.messages.push_back(prompts::retrieved_observation_message(*sample.retrieved_obs));
  out.messages.push_back(ChatMessage::text(
      Role::assistant, serialize_turn(make_turn(prompts::post_retrieval_think(*sample.retrieved_step),
                                                sample.predicted_action))));
  return out;
}

// --- whole-pipeline driver --------------------------------------------------------------------

struct DatagenOptions {
  std::uint64_t seed = 0;
  CurateOptions curate;
  BackendConfig synth_config;
  RebalanceScheme scheme;
  int parallel = 1;
};

struct DatagenStats {
  std::size_t steps_total = 0;
  std::size_t curated = 0;
  std::size_t curation_errors = 0;
  std::size_t dropped_wrong_action = 0;
  std::size_t tool_correct = 0;
  std::size_t notool_correct = 0;
  std::map<std::int64_t, std::size_t> buckets_before;
  std::map<std::int64_t, std::size_t> buckets_after;
  std::size_t final_tool = 0;
  std::size_t final_notool = 0;
  std::size_t final_total = 0;

  json to_json() const {
    auto bucket_json = [](const std::map<std::int64_t, std::size_t>& b) {
      json j = json::object();
      for (const auto& [d, n] : b) j[std::to_string(d)] = n;
      return j;
    };
    return json{{"steps_total", steps_total},
                {"curated", curated},
                {"curation_errors", curation_errors},
                {"dropped_wrong_action", dropped_wrong_action},
                {"tool_correct", tool_correct},
                {"notool_correct", notool_correct},
                {"distance_buckets_before", bucket_json(buckets_before)},
                {"distance_buckets_after", bucket_json(buckets_after)},
                {"final_tool", final_tool},
                {"final_notool", final_notool},
                {"final_total", final_total}};
  }
};

struct DatagenResult {
  std::vector<SFTSample> dataset;
  DatagenStats stats;
  std::vector<std::string> step_errors;  // "traj:step: message"
};

/// curate -> filter -> rebalance -> balance -> synthesize -> format.
/// Curation runs on a bounded worker pool; every later pass is a
/// single-threaded deterministic fold, so equal inputs and seed give a
/// byte-identical dataset.
inline DatagenResult run_datagen(Backend& teacher, Backend& synth,
                                 const std::vector<Trajectory>& trajectories,
                                 const MemoryCache& cache, const DatagenOptions& options) {
  struct Slot {
    const Trajectory* traj = nullptr;
    std::int64_t step = 0;
    std::optional<CuratedSample> sample;
    std::string error;
  };
  std::vector<Slot> slots;
  for (const auto& traj : trajectories) {
    traj.check();
    for (std::size_t i = 0; i < traj.step_count(); ++i) {
      slots.push_back(Slot{&traj, static_cast<std::int64_t>(i), std::nullopt, {}});
    }
  }

  auto curate_one = [&](Slot& slot) {
    try {
      CompressedMemory memory = cache.memory_for(slot.traj->id, slot.step);
      slot.sample = curate_step(teacher, *slot.traj, slot.step, memory, options.curate);
    } catch (const Error& e) {
      slot.error = e.what();
    }
  };

  int workers = options.parallel < 1 ? 1 : options.parallel;
  if (workers == 1) {
    for (auto& slot : slots) curate_one(slot);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t i = next.fetch_add(1);
          if (i >= slots.size()) return;
          curate_one(slots[i]);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  DatagenResult result;
  result.stats.steps_total = slots.size();
  std::vector<CuratedSample> curated;
  for (const auto& slot : slots) {
    if (slot.sample) {
      curated.push_back(*slot.sample);
    } else {
      ++result.stats.curation_errors;
      result.step_errors.push_back(slot.traj->id + ":" + std::to_string(slot.step) + ": " +
                                   slot.error);
    }
  }
  result.stats.curated = curated.size();

  FilterSplit split = filter_and_split(curated);
  result.stats.dropped_wrong_action = split.dropped;
  result.stats.tool_correct = split.tool_correct.size();
  result.stats.notool_correct = split.notool_correct.size();
  if (split.tool_correct.empty() && split.notool_correct.empty()) {
    return result;  // nothing survived filtering; caller decides how loud to be
  }

  std::vector<CuratedSample> balanced;
  if (split.tool_correct.empty() || split.notool_correct.empty()) {
    // an empty side makes 1:1 balancing impossible; surface it as a stats-only run
    return result;
  }
  result.stats.buckets_before = distance_buckets(split.tool_correct);
  auto rebalanced = rebalance_recency(split.tool_correct, options.scheme, options.seed);
  result.stats.buckets_after = distance_buckets(rebalanced);
  balanced = balance_tool_nontool(rebalanced, split.notool_correct, options.seed);

  for (const auto& sample : balanced) {
    std::string think = synthesize_reasoning(synth, options.synth_config, sample);
    CompressedMemory memory = cache.memory_for(sample.trajectory_id, sample.step);
    result.dataset.push_back(
        format_sft(sample, think, render_memory(memory, options.curate.render_limits)));
    if (sample.used_retrieval) {
      ++result.stats.final_tool;
    } else {
      ++result.stats.final_notool;
    }
  }
  result.stats.final_total = result.dataset.size();
  return result;
}

// --- SFT JSONL I/O ---------------------------------------------------------------------------

inline void save_sft_jsonl(const std::filesystem::path& path,
                           const std::vector<SFTSample>& dataset) {
  std::string out;
  for (const auto& s : dataset) {
    out += sft_sample_to_json(s).dump();
    out += "\n";
  }
  write_file_bytes(path, out);
}

inline std::vector<SFTSample> load_sft_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw Error(Errc::io_error, "cannot open sft file: " + path.string());
  std::vector<SFTSample> out;
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
    out.push_back(sft_sample_from_json(j));
  }
  return out;
}

} // namespace lookback
