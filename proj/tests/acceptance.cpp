// Acceptance suite: one line per criterion, nonzero exit if any fails.
// Runs entirely on scripted backends; no network, no model endpoints.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "lookback/lookback.hpp"
#include "support/fixtures.hpp"
#include "support/generators.hpp"

using namespace lookback;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string turn_text(const std::string& think, const Action& action) {
  return serialize_turn(make_turn(think, action));
}

struct Criterion {
  std::string name;
  std::function<std::string()> body;  // returns detail; throws on failure
};

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

// ---------------------------------------------------------------------------
// 1. Grammar round-trip: 10,000 generated turns, every action kind, < 10 s.
// ---------------------------------------------------------------------------
std::string grammar_round_trip() {
  auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240817);
  std::set<ActionKind> kinds;
  for (int i = 0; i < 10000; ++i) {
    AgentTurn t = gen::random_turn(rng);
    kinds.insert(t.call.kind());
    AgentTurn back = parse_turn(serialize_turn(t));
    require(back == t, "round-trip mismatch at turn " + std::to_string(i));
  }
  require(kinds.size() == 14, "generator failed to cover all 14 action kinds");
  double elapsed = seconds_since(start);
  require(elapsed < 10.0, "took " + std::to_string(elapsed) + "s, budget is 10s");
  char buf[96];
  std::snprintf(buf, sizeof(buf), "10000/10000 turns, 14 kinds, %.2fs", elapsed);
  return buf;
}

// ---------------------------------------------------------------------------
// 2. Planner state machine: branch shapes, retrieval legality, summaries-only
//    degeneration at budget 0.
// ---------------------------------------------------------------------------
PlanContext context_at(std::int64_t step, const std::string& goal = "scripted goal") {
  PlanContext ctx;
  ctx.goal = Goal{goal};
  ctx.platform = Platform::mobile;
  ctx.current = fixtures::make_obs(step, "img_" + std::to_string(step) + ".png");
  for (std::int64_t s = 0; s < step; ++s) {
    ctx.history.push_back(fixtures::make_obs(s, "img_" + std::to_string(s) + ".png"));
    ctx.memory = append_step(
        ctx.memory, MemoryEntry{s, "caption " + std::to_string(s), "action", "outcome"});
  }
  return ctx;
}

std::string planner_state_machine() {
  // (a) direct branch: one model turn, no retrieval, final GUI action
  {
    auto backend = ScriptedBackend::queue({turn_text("direct", Click{{0.3, 0.3}})});
    std::vector<TranscriptRecord> transcript;
    PlanStep step = plan_step(backend, context_at(4), PlannerConfig{},
                              [&](const TranscriptRecord& r) { transcript.push_back(r); });
    require(!step.used_retrieval() && step.turns.size() == 1 && transcript.size() == 1,
            "direct branch shape is wrong");
    require(transcript[0].messages.size() == 2, "direct branch context must be system+user");
    require(!step.action.is_retrieve(), "direct branch final action must be a GUI action");
  }
  // (a') retrieval branch: model turn, labeled tool injection, second turn, action
  {
    auto backend = ScriptedBackend::queue({
        turn_text("need the old screen", Retrieve{2}),
        turn_text("got it", Click{{0.4, 0.6}}),
    });
    std::vector<TranscriptRecord> transcript;
    PlanStep step = plan_step(backend, context_at(5), PlannerConfig{},
                              [&](const TranscriptRecord& r) { transcript.push_back(r); });
    require(step.retrieved_steps == std::vector<std::int64_t>{2}, "retrieved_steps mismatch");
    require(step.turns.size() == 2, "retrieval branch must have two model turns");
    require(transcript.size() == 2, "retrieval branch must make two backend calls");
    const auto& second = transcript[1].messages;
    require(second.size() == 4, "second call must extend the first by assistant+tool");
    require(second[2].role == Role::assistant && second[3].role == Role::tool,
            "injected roles are wrong");
    require(second[3].joined_text().find("Observation from step 2") != std::string::npos,
            "retrieved screenshot must be labeled with its step");
    require(second[3].image_refs() == std::vector<std::string>{"img_2.png"},
            "wrong screenshot injected");
    for (std::size_t i = 1; i < transcript.size(); ++i) {
      const auto& prev = transcript[i - 1].messages;
      const auto& next = transcript[i].messages;
      require(prev.size() < next.size() && std::equal(prev.begin(), prev.end(), next.begin()),
              "context must grow strictly by prefix extension");
    }
  }
  // (b) retrieval legality over randomized scripted episodes
  std::size_t checked = 0;
  {
    std::mt19937_64 rng(99);
    for (int episode = 0; episode < 50; ++episode) {
      std::int64_t current = 1 + static_cast<std::int64_t>(rng_below(rng, 9));
      std::int64_t j = static_cast<std::int64_t>(rng_below(rng, current));
      auto backend = ScriptedBackend::queue({
          turn_text("look", Retrieve{j}),
          turn_text("act", PressBack{}),
      });
      PlanStep step = plan_step(backend, context_at(current), PlannerConfig{});
      for (std::int64_t seen : step.retrieved_steps) {
        require(0 <= seen && seen < current, "retrieved index out of range");
        ++checked;
      }
    }
    // and an illegal index is rejected, never executed
    auto backend = ScriptedBackend::queue({turn_text("look", Retrieve{5})});
    bool rejected = false;
    try {
      plan_step(backend, context_at(5), PlannerConfig{});
    } catch (const Error& e) {
      rejected = e.code() == Errc::invalid_retrieve_index;
    }
    require(rejected, "retrieve of the current step must be InvalidRetrieveIndex");
  }
  // (c) budget 0 reproduces the summaries-only paradigm byte-for-byte
  {
    auto run = [&](int budget) {
      auto backend = ScriptedBackend::queue({turn_text("direct", TypeText{"hello"})});
      PlannerConfig config;
      config.max_retrievals = budget;
      std::string bytes;
      plan_step(backend, context_at(6), config, [&](const TranscriptRecord& r) {
        bytes += transcript_record_to_json(r).dump();
        bytes += "\n";
      });
      return bytes;
    };
    require(run(0) == run(1), "budget 0 must equal the summaries-only transcript byte-for-byte");
    // at budget 0 a retrieval attempt is never executed
    auto backend = ScriptedBackend::queue({
        turn_text("want to look", Retrieve{0}),
        turn_text("fine", PressBack{}),
    });
    PlannerConfig config;
    config.max_retrievals = 0;
    std::vector<TranscriptRecord> transcript;
    PlanStep step = plan_step(backend, context_at(3), config,
                              [&](const TranscriptRecord& r) { transcript.push_back(r); });
    require(step.retrieved_steps.empty(), "budget 0 must not execute retrievals");
    for (const auto& r : transcript) require(!r.retrieve_executed, "budget 0 executed a retrieval");
  }
  return "branch shapes, legality over " + std::to_string(checked) +
         " retrievals, budget-0 equivalence";
}

// ---------------------------------------------------------------------------
// 3. Datagen invariants on a 200-step fixture corpus with a scripted teacher.
// ---------------------------------------------------------------------------
struct TeacherPlan {
  // per (trajectory index, step): retrieve distance (0 = no retrieval) and
  // whether the final action deliberately misses the ground truth
  std::map<std::pair<std::size_t, std::int64_t>, std::pair<std::int64_t, bool>> plan;
};

std::string datagen_invariants() {
  fixtures::ScratchDir dir("accept_dg");
  const std::size_t n_traj = 20, steps_each = 10;  // 200 decision steps
  auto corpus = fixtures::make_corpus(dir.path(), {n_traj, steps_each, 48, 96, 404, true});
  MemoryCache cache;
  fixtures::fill_memory_cache(cache, corpus);

  // deterministic teacher plan: half the steps look back, distances cycle
  // through {1,2,3,5,8}, every 11th sample is deliberately wrong
  TeacherPlan plan;
  const std::int64_t distances[] = {1, 2, 3, 5, 8};
  std::size_t counter = 0;
  std::size_t planned_tool_correct = 0, planned_notool_correct = 0;
  for (std::size_t t = 0; t < corpus.size(); ++t) {
    for (std::size_t s = 0; s < corpus[t].step_count(); ++s) {
      auto step = static_cast<std::int64_t>(s);
      bool wrong = counter % 11 == 10;
      std::int64_t distance = 0;
      if (s % 2 == 1) {
        distance = distances[(t + s) % 5];
        if (distance > step) distance = step;  // clamp to a legal look-back
      }
      plan.plan[{t, step}] = {distance, wrong};
      if (!wrong) {
        if (distance > 0) ++planned_tool_correct;
        else ++planned_notool_correct;
      }
      ++counter;
    }
  }

  auto make_teacher = [&]() {
    return CallbackBackend([&](const std::vector<ChatMessage>& messages) -> std::string {
      // identify (trajectory, step) from the stage-1 user message; the goal is
      // matched with its trailing newline so "task 1" cannot shadow "task 10"
      const std::string opening = messages[1].joined_text();
      std::size_t traj_index = 0;
      for (std::size_t t = 0; t < corpus.size(); ++t) {
        if (opening.find(corpus[t].goal.text + "\n") != std::string::npos) {
          traj_index = t;
          break;
        }
      }
      std::int64_t step = 0;
      for (std::int64_t s = static_cast<std::int64_t>(steps_each) - 1; s >= 0; --s) {
        if (opening.find("(step " + std::to_string(s) + ")") != std::string::npos) {
          step = s;
          break;
        }
      }
      const auto [distance, wrong] = plan.plan.at({traj_index, step});
      const std::string last = messages.back().joined_text();
      if (last.find("Stage 2.") != std::string::npos) return "Candidates: A, B, C.";
      if (last.find("Stage 3.") != std::string::npos) {
        if (distance > 0) return "Need an earlier screen.\nRETRIEVE " + std::to_string(step - distance);
        return "Confident.\nNO RETRIEVAL";
      }
      if (last.find("Stage 4.") != std::string::npos) {
        Action action = wrong ? Action(Wait{}) : corpus[traj_index].actions[static_cast<std::size_t>(step)];
        return turn_text("committing", action);
      }
      return "Reviewed progress for step " + std::to_string(step) + ".";
    });
  };
  auto make_synth = [&]() {
    return CallbackBackend([](const std::vector<ChatMessage>&) {
      return std::string("I reviewed the memory, compared the candidates, and acted.");
    });
  };

  DatagenOptions options;
  options.seed = 4242;
  auto run_once = [&]() {
    auto teacher = make_teacher();
    auto synth = make_synth();
    return run_datagen(teacher, synth, corpus, cache, options);
  };
  DatagenResult result = run_once();

  require(result.stats.steps_total == 200, "fixture must have exactly 200 steps");
  require(result.stats.curation_errors == 0, "no curation errors expected");
  require(result.stats.tool_correct == planned_tool_correct &&
              result.stats.notool_correct == planned_notool_correct,
          "filter counts disagree with the teacher plan");
  require(result.stats.dropped_wrong_action == 200 - planned_tool_correct - planned_notool_correct,
          "dropped count disagrees with the planned wrong actions");

  // exact 1:1 balance
  std::size_t with_tool = 0;
  for (const auto& s : result.dataset) with_tool += s.used_retrieval ? 1 : 0;
  require(with_tool * 2 == result.dataset.size(),
          "dataset is not exactly half tool / half non-tool");

  // zero ground-truth violations among emitted samples, checked per sample
  std::map<std::string, const Trajectory*> by_id;
  for (const auto& t : corpus) by_id[t.id] = &t;
  for (const auto& sample : result.dataset) {
    const Trajectory& traj = *by_id.at(sample.trajectory_id);
    AgentTurn final_turn = parse_turn(sample.messages.back().joined_text());
    const auto idx = static_cast<std::size_t>(sample.step);
    std::optional<BBox> bbox = idx < traj.gt_bboxes.size() ? traj.gt_bboxes[idx] : std::nullopt;
    require(matches_ground_truth(final_turn.call, traj.actions[idx], bbox, MatchPolicy{}),
            "emitted sample violates matches_ground_truth at " + sample.trajectory_id + ":" +
                std::to_string(sample.step));
  }

  // rebalanced distance buckets uniform by chi-square at p > 0.01, n = 1000
  std::vector<CuratedSample> curated;
  {
    auto teacher = make_teacher();
    for (std::size_t t = 0; t < corpus.size(); ++t) {
      for (std::size_t s = 0; s < corpus[t].step_count(); ++s) {
        curated.push_back(curate_step(teacher, corpus[t], static_cast<std::int64_t>(s),
                                      cache.memory_for(corpus[t].id, static_cast<std::int64_t>(s)),
                                      options.curate));
      }
    }
  }
  FilterSplit split = filter_and_split(curated);
  auto resampled = rebalance_recency(split.tool_correct, options.scheme, options.seed, 1000);
  auto buckets = distance_buckets(resampled);
  double expected = 1000.0 / static_cast<double>(buckets.size());
  double stat = 0;
  for (const auto& [_, count] : buckets) {
    double d = static_cast<double>(count) - expected;
    stat += d * d / expected;
  }
  // chi-square 99th percentile for df = buckets-1 (occupied distances 1,2,3,5,8)
  const double crit[] = {0, 6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090};
  std::size_t df = buckets.size() - 1;
  require(df < sizeof(crit) / sizeof(crit[0]), "too many buckets for the critical table");
  require(stat < crit[df], "chi-square " + std::to_string(stat) + " exceeds the p=0.01 bound " +
                               std::to_string(crit[df]) + " (df " + std::to_string(df) + ")");

  // byte-identical reruns under the same seed
  DatagenResult rerun = run_once();
  std::string bytes_a, bytes_b;
  for (const auto& s : result.dataset) bytes_a += sft_sample_to_json(s).dump() + "\n";
  for (const auto& s : rerun.dataset) bytes_b += sft_sample_to_json(s).dump() + "\n";
  require(bytes_a == bytes_b, "rerun with the same seed is not byte-identical");

  std::ostringstream out;
  out << result.dataset.size() << " samples, " << with_tool << ":" << with_tool
      << " tool/non-tool, chi2 " << std::fixed << std::setprecision(2) << stat << " < "
      << crit[df] << " at df " << df << ", rerun identical";
  return out.str();
}

// ---------------------------------------------------------------------------
// 4. Metric oracle equivalence on 50 random prediction/ground-truth pairs.
// ---------------------------------------------------------------------------
namespace oracle {

// Brute-force re-implementation written straight from the metric definitions;
// shares nothing with lookback/matching.hpp.

bool is_point_kind(ActionKind k) {
  return k == ActionKind::click || k == ActionKind::long_press || k == ActionKind::left_double ||
         k == ActionKind::right_single;
}

Point point_of(const Action& a) {
  switch (a.kind()) {
    case ActionKind::click: return a.get<Click>().at;
    case ActionKind::long_press: return a.get<LongPress>().at;
    case ActionKind::left_double: return a.get<LeftDouble>().at;
    default: return a.get<RightSingle>().at;
  }
}

std::string fold(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out = s.substr(b, e - b);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 32);
  }
  return out;
}

bool type_match(const Action& pred, const Action& gt) { return pred.kind() == gt.kind(); }

// -1 = not applicable, 0 = miss, 1 = hit
int grounding(const Action& pred, const Action& gt, const std::optional<BBox>& bbox,
              double threshold) {
  if (!is_point_kind(gt.kind())) return -1;
  if (!is_point_kind(pred.kind())) return 0;
  Point p = point_of(pred), g = point_of(gt);
  if (bbox) {
    return (p.x >= bbox->x0 && p.x <= bbox->x1 && p.y >= bbox->y0 && p.y <= bbox->y1) ? 1 : 0;
  }
  double dx = p.x - g.x, dy = p.y - g.y;
  return std::sqrt(dx * dx + dy * dy) <= threshold ? 1 : 0;
}

bool step_success(const Action& pred, const Action& gt, const std::optional<BBox>& bbox,
                  double threshold) {
  if (pred.kind() != gt.kind()) return false;
  switch (gt.kind()) {
    case ActionKind::click:
    case ActionKind::long_press:
    case ActionKind::left_double:
    case ActionKind::right_single:
      return grounding(pred, gt, bbox, threshold) == 1;
    case ActionKind::type_text:
      return fold(pred.get<TypeText>().text) == fold(gt.get<TypeText>().text);
    case ActionKind::scroll:
      return pred.get<Scroll>().direction == gt.get<Scroll>().direction;
    case ActionKind::open_app:
      return fold(pred.get<OpenApp>().name) == fold(gt.get<OpenApp>().name);
    case ActionKind::drag: {
      auto dist = [](Point a, Point b) {
        double dx = a.x - b.x, dy = a.y - b.y;
        return std::sqrt(dx * dx + dy * dy);
      };
      const auto& p = pred.get<Drag>();
      const auto& g = gt.get<Drag>();
      return dist(p.from, g.from) <= threshold && dist(p.to, g.to) <= threshold;
    }
    case ActionKind::hotkey: {
      const auto& p = pred.get<Hotkey>().keys;
      const auto& g = gt.get<Hotkey>().keys;
      if (p.size() != g.size()) return false;
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (fold(p[i]) != fold(g[i])) return false;
      }
      return true;
    }
    default:
      return true;  // wait, finished, press_home, press_back
  }
}

} // namespace oracle

std::string metric_oracle_equivalence() {
  std::mt19937_64 rng(515151);
  MatchPolicy policy;
  int agreements = 0;
  for (int i = 0; i < 50; ++i) {
    Action gt = gen::random_action(rng, false);
    Action pred;
    switch (rng_below(rng, 3)) {
      case 0:
        pred = gen::random_action(rng, false);  // arbitrary
        break;
      case 1:
        pred = gt;  // exact copy
        break;
      default: {
        // same kind, perturbed parameters
        Action candidate = gen::random_action(rng, false);
        for (int guard = 0; guard < 200 && candidate.kind() != gt.kind(); ++guard) {
          candidate = gen::random_action(rng, false);
        }
        pred = candidate;
        break;
      }
    }
    StepTask task;
    task.trajectory_id = "oracle";
    task.step = 0;
    task.goal = Goal{"g"};
    task.current = fixtures::make_obs(0, "x.png");
    task.gt_action = gt;
    if (gt.is_point_action() && rng_below(rng, 2)) {
      Point p = *gt.point();
      task.gt_bbox = BBox{std::max(0.0, p.x - 0.06), std::max(0.0, p.y - 0.06),
                          std::min(1.0, p.x + 0.06), std::min(1.0, p.y + 0.06)};
    }

    bool lib_type = match_type(pred, gt);
    auto lib_gr = match_grounding(pred, task, policy);
    bool lib_sr = match_step_success(pred, task, policy);

    bool orc_type = oracle::type_match(pred, gt);
    int orc_gr = oracle::grounding(pred, gt, task.gt_bbox, policy.grounding_threshold);
    bool orc_sr = oracle::step_success(pred, gt, task.gt_bbox, policy.grounding_threshold);

    require(lib_type == orc_type, "type disagreement at pair " + std::to_string(i));
    int lib_gr_code = lib_gr.has_value() ? (*lib_gr ? 1 : 0) : -1;
    require(lib_gr_code == orc_gr, "grounding disagreement at pair " + std::to_string(i));
    require(lib_sr == orc_sr, "success disagreement at pair " + std::to_string(i));
    ++agreements;
  }

  // rounding check: 2/3 type matches, 1/3 successes -> 66.7 / 33.3
  std::vector<StepTask> tasks;
  const char* goals[] = {"g", "h", "k"};
  Action gts[] = {Action(TypeText{"alpha"}), Action(TypeText{"beta"}), Action(PressBack{})};
  for (int i = 0; i < 3; ++i) {
    StepTask t;
    t.trajectory_id = std::string("r") + std::to_string(i);
    t.step = 0;
    t.goal = Goal{goals[i]};
    t.platform = Platform::mobile;
    t.current = fixtures::make_obs(0, "x.png");
    t.gt_action = gts[i];
    tasks.push_back(t);
  }
  auto keyed = ScriptedBackend::rules(
      {
          {{"Goal: g"}, turn_text("x", TypeText{"alpha"})},
          {{"Goal: h"}, turn_text("x", TypeText{"off-target"})},
          {{"Goal: k"}, turn_text("x", Scroll{})},
      },
      std::nullopt);
  MemoryCache empty_cache;
  EvalResult r = evaluate(keyed, tasks, empty_cache, EvalOptions{});
  require(r.report.type_match_rate == 66.7, "type rounding must give 66.7");
  require(r.report.step_success_rate == 33.3, "success rounding must give 33.3");

  return std::to_string(agreements) + "/50 pairs agree on Type/GR/SR; rounding 66.7/33.3 exact";
}

// ---------------------------------------------------------------------------
// 5. Token-budget ordering over 100 generated trajectories, T in [5, 15].
// ---------------------------------------------------------------------------
std::string token_budget_ordering() {
  auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(606060);
  auto model = CostModel::default_model();
  int halved = 0;

  for (int round = 0; round < 100; ++round) {
    std::size_t steps = 5 + rng_below(rng, 11);  // T in [5, 15]
    Trajectory traj;
    traj.id = "gen" + std::to_string(round);
    traj.goal = Goal{"generated goal " + std::to_string(round)};
    traj.platform = Platform::mobile;
    for (std::size_t o = 0; o <= steps; ++o) {
      traj.observations.push_back(
          fixtures::make_obs(static_cast<std::int64_t>(o),
                             traj.id + "_" + std::to_string(o) + ".png", 1080, 1920));
    }
    for (std::size_t s = 0; s < steps; ++s) {
      switch (rng_below(rng, 3)) {
        case 0: traj.actions.push_back(Click{gen::grid_point(rng)}); break;
        case 1: traj.actions.push_back(TypeText{"text " + std::to_string(s)}); break;
        default: traj.actions.push_back(PressBack{}); break;
      }
    }
    traj.check();

    MemoryCache cache;
    for (std::size_t s = 0; s < steps; ++s) {
      MemoryEntry e;
      e.step = static_cast<std::int64_t>(s);
      e.observation_caption = std::string(30 + rng_below(rng, 200), 'c');
      e.action_description = describe_action(traj.actions[s]);
      e.action_outcome = std::string(30 + rng_below(rng, 200), 'o');
      cache.put(traj.id, std::move(e));
    }
    RetrievalTrace trace;
    for (std::size_t s = 1; s < steps; ++s) {
      if (rng_below(rng, 2)) {
        trace.retrieved[{traj.id, static_cast<std::int64_t>(s)}] = {
            static_cast<std::int64_t>(rng_below(rng, s))};
      }
    }

    auto mean = [&](MemoryStrategy s) {
      return token_budget(traj, s, model, &cache, &trace).mean_input_tokens;
    };
    double none = mean(MemoryStrategy::none);
    double actions = mean(MemoryStrategy::past_actions);
    double recent5 = mean(MemoryStrategy::recent5_obs);
    double all = mean(MemoryStrategy::all_obs);
    double summaries = mean(MemoryStrategy::summaries);
    double lookback = mean(MemoryStrategy::summaries_lookback);

    require(all >= recent5, "all-screenshots must cost at least recent-5");
    require(recent5 >= none && recent5 >= actions, "recent-5 must cost at least the baselines");
    require(lookback >= summaries, "lookback must cost at least summaries");
    require(summaries >= none, "summaries must cost at least the bare baseline");
    if (steps >= 8) {
      require(summaries <= 0.5 * all,
              "summaries must stay under half the all-screenshots cost at T >= 8 (T=" +
                  std::to_string(steps) + ")");
      ++halved;
    }
  }
  double elapsed = seconds_since(start);
  require(elapsed < 5.0, "took " + std::to_string(elapsed) + "s, budget is 5s");
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "100 trajectories ordered, %d satisfied the half-cost bound, %.2fs", halved,
                elapsed);
  return buf;
}

// ---------------------------------------------------------------------------
// 6. Retrieval statistics with planted distances {1, 2, 5, 8}.
// ---------------------------------------------------------------------------
std::string retrieval_statistics() {
  fixtures::ScratchDir dir("accept_rs");
  auto corpus = fixtures::make_corpus(dir.path(), {1, 10, 48, 96, 808, true});
  const Trajectory& traj = corpus[0];
  MemoryCache cache;
  fixtures::fill_memory_cache(cache, corpus);

  // plant look-backs at steps 1, 6, 7, 9 with distances 1, 2, 5, 8
  std::map<std::int64_t, std::int64_t> planted{{1, 0}, {6, 4}, {7, 2}, {9, 1}};
  auto backend = CallbackBackend([&](const std::vector<ChatMessage>& messages) -> std::string {
    const std::string opening = messages[1].joined_text();
    std::int64_t step = 0;
    for (std::int64_t s = 9; s >= 0; --s) {
      if (opening.find("(step " + std::to_string(s) + ")") != std::string::npos) {
        step = s;
        break;
      }
    }
    bool already = messages.size() > 2;
    auto it = planted.find(step);
    if (it != planted.end() && !already) return turn_text("look", Retrieve{it->second});
    return turn_text("act", traj.actions[static_cast<std::size_t>(step)]);
  });

  std::vector<TranscriptRecord> transcript;
  auto outcomes = run_episode_offline(backend, traj, PlannerConfig{}, cache,
                                      [&](const TranscriptRecord& r) { transcript.push_back(r); });
  for (const auto& o : outcomes) require(o.ok(), "planted episode must succeed on every step");

  RetrievalStats stats = retrieval_stats(transcript);
  std::map<std::int64_t, std::size_t> expected{{1, 1}, {2, 1}, {5, 1}, {8, 1}};
  require(stats.histogram == expected, "histogram must be exactly {1:1, 2:1, 5:1, 8:1}");
  require(stats.max_distance == 8, "max distance must be 8");
  require(stats.total_steps == 10, "the run has 10 decision steps");
  require(stats.total_retrievals == 4, "four look-backs were planted");
  require(std::abs(stats.retrieval_rate - 0.4) < 1e-12, "rate must be exactly 4/10");

  // independent recount straight off the transcript
  std::size_t recount = 0;
  for (const auto& r : transcript) recount += (r.is_retrieve && r.retrieve_executed) ? 1 : 0;
  std::size_t histogram_total = 0;
  for (const auto& [_, n] : stats.histogram) histogram_total += n;
  require(recount == histogram_total, "histogram total must equal the retrieve executions");

  return "histogram {1,2,5,8} exact, max 8, rate 0.40";
}

// ---------------------------------------------------------------------------
// 7. End-to-end smoke through the CLI binary: summarize -> datagen -> validate.
// ---------------------------------------------------------------------------
int shell(const std::string& command, std::string& output) {
  FILE* pipe = popen((command + " 2>&1").c_str(), "r");
  if (!pipe) return -1;
  char buffer[4096];
  while (std::fgets(buffer, sizeof(buffer), pipe)) output += buffer;
  int status = pclose(pipe);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string end_to_end_smoke() {
  auto start = std::chrono::steady_clock::now();
  fixtures::ScratchDir dir("accept_e2e");
  auto corpus = fixtures::make_corpus(dir.path(), {4, 6, 48, 96, 909, true});
  auto input = dir.file("corpus.jsonl");
  save_trajectories_jsonl(input, corpus);

  // scripted summary agent
  json summary_script{
      {"mode", "rules"},
      {"rules", json::array({json{{"contains", json::array({"Caption the screenshot"})},
                                  {"response", "Scripted caption of the visible screen."}},
                             json{{"contains", json::array({"Screenshot before the action"})},
                                  {"response", "The action had its intended effect."}}})}};
  auto summary_path = dir.file("summary.json");
  write_file_bytes(summary_path, summary_script.dump());

  // scripted teacher: one sequential pass, retrieving on odd steps
  std::vector<std::string> teacher_responses;
  for (const auto& traj : corpus) {
    for (std::size_t step = 0; step < traj.step_count(); ++step) {
      teacher_responses.push_back("Progress review for the scripted run.");
      teacher_responses.push_back("Candidates: tap, scroll, go back.");
      if (step % 2 == 1) {
        teacher_responses.push_back("Check an earlier screen.\nRETRIEVE " +
                                    std::to_string(step - 1));
      } else {
        teacher_responses.push_back("Confident.\nNO RETRIEVAL");
      }
      teacher_responses.push_back(turn_text("committing", traj.actions[step]));
    }
  }
  auto teacher_path = dir.file("teacher.json");
  write_file_bytes(teacher_path, json{{"mode", "queue"}, {"responses", teacher_responses}}.dump());

  json synth_script{{"mode", "rules"},
                    {"rules", json::array()},
                    {"default", "I reviewed the memory and committed to the matching action."}};
  auto synth_path = dir.file("synth.json");
  write_file_bytes(synth_path, synth_script.dump());

  const std::string cli = LOOKBACK_CLI_BIN;
  auto cache_path = dir.file("cache.jsonl");
  auto dataset_path = dir.file("dataset.jsonl");

  std::string out1;
  int rc1 = shell(cli + " summarize --input " + input.string() + " --cache " +
                      cache_path.string() + " --backend scripted --script " +
                      summary_path.string(),
                  out1);
  require(rc1 == 0, "summarize exited " + std::to_string(rc1) + "\n" + out1);

  std::string out2;
  int rc2 = shell(cli + " datagen run --input " + input.string() + " --cache " +
                      cache_path.string() + " --out " + dataset_path.string() +
                      " --seed 11 --teacher-backend scripted --teacher-script " +
                      teacher_path.string() + " --synth-backend scripted --synth-script " +
                      synth_path.string(),
                  out2);
  require(rc2 == 0, "datagen exited " + std::to_string(rc2) + "\n" + out2);

  std::string out3;
  int rc3 = shell(cli + " validate " + dataset_path.string(), out3);
  require(rc3 == 0, "validate exited " + std::to_string(rc3) + "\n" + out3);
  require(out3.find("0 violations") != std::string::npos, "validation report is not clean");

  std::string out4;
  int rc4 = shell(cli + " validate " + input.string(), out4);
  require(rc4 == 0 && out4.find("0 violations") != std::string::npos,
          "the source corpus must validate clean too");

  double elapsed = seconds_since(start);
  require(elapsed < 60.0, "took " + std::to_string(elapsed) + "s, budget is 60s");
  char buf[96];
  std::snprintf(buf, sizeof(buf), "summarize -> datagen -> validate clean, %.2fs", elapsed);
  return buf;
}

} // namespace

int main() {
  std::vector<Criterion> criteria = {
      {"grammar-round-trip", grammar_round_trip},
      {"planner-state-machine", planner_state_machine},
      {"datagen-invariants", datagen_invariants},
      {"metric-oracle-equivalence", metric_oracle_equivalence},
      {"token-budget-ordering", token_budget_ordering},
      {"retrieval-statistics", retrieval_statistics},
      {"end-to-end-smoke", end_to_end_smoke},
  };

  int failures = 0;
  for (auto& criterion : criteria) {
    try {
      std::string detail = criterion.body();
      std::printf("[PASS] %-26s %s\n", criterion.name.c_str(), detail.c_str());
    } catch (const std::exception& e) {
      ++failures;
      std::printf("[FAIL] %-26s %s\n", criterion.name.c_str(), e.what());
    }
    std::fflush(stdout);
  }
  if (failures) {
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return 1;
  }
  std::printf("all %zu criteria passed\n", criteria.size());
  return 0;
}
