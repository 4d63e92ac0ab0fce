#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lookback/backend.hpp"
#include "lookback/error.hpp"
#include "lookback/prompts.hpp"
#include "lookback/trajectory.hpp"
#include "lookback/util.hpp"

namespace lookback {

/// Summary of one completed step s: what screen o_s showed, what action was
/// taken on it, and whether the action's expected effect materialized in
/// o_{s+1}.
struct MemoryEntry {
  std::int64_t step = 0;
  std::string observation_caption;
  std::string action_description;
  std::string action_outcome;
  friend bool operator==(const MemoryEntry&, const MemoryEntry&) = default;
};

/// Ordered, gap-free entries for steps 0..i-1. Value type: append returns a
/// new memory and never mutates existing entries.
class CompressedMemory {
 public:
  CompressedMemory() = default;

  static CompressedMemory from_entries(std::vector<MemoryEntry> entries) {
    CompressedMemory m;
    for (auto& e : entries) m = m.appended(std::move(e));
    return m;
  }

  CompressedMemory appended(MemoryEntry entry) const {
    std::int64_t expected = static_cast<std::int64_t>(entries_.size());
    if (entry.step != expected) {
      throw Error(Errc::gap_or_duplicate_step,
                  "expected step " + std::to_string(expected) + ", got " +
                      std::to_string(entry.step));
    }
    CompressedMemory next = *this;
    next.entries_.push_back(std::move(entry));
    return next;
  }

  const std::vector<MemoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  friend bool operator==(const CompressedMemory&, const CompressedMemory&) = default;

 private:
  std::vector<MemoryEntry> entries_;
};

inline CompressedMemory append_step(const CompressedMemory& memory, MemoryEntry entry) {
  return memory.appended(std::move(entry));
}

// --- rendering -------------------------------------------------------------------

/// Per-field caps bound each rendered entry, so memory text grows linearly in
/// step count with a fixed per-entry constant.
struct RenderLimits {
  std::size_t caption_chars = 512;
  std::size_t outcome_chars = 512;
};

namespace detail {

inline std::string truncate_marked(const std::string& text, std::size_t cap) {
  if (text.size() <= cap) return text;
  return text.substr(0, cap) + "[truncated]";
}

} // namespace detail

inline constexpr const char* kEmptyMemorySentinel = "(no prior steps)";

/// Deterministic text form of the memory: a `Step k:` header, the caption
/// line, and the action line with its validated outcome, per entry.
inline std::string render_memory(const CompressedMemory& memory, const RenderLimits& limits = {}) {
  if (memory.empty()) return kEmptyMemorySentinel;
  std::string out;
  bool first = true;
  for (const auto& e : memory.entries()) {
    if (!first) out += "\n";
    first = false;
    out += "Step " + std::to_string(e.step) + ":\n";
    out += "Observation: " + detail::truncate_marked(e.observation_caption, limits.caption_chars) +
           "\n";
    out += "Action: " + detail::truncate_marked(e.action_description, limits.outcome_chars) +
           ". Outcome: " + detail::truncate_marked(e.action_outcome, limits.outcome_chars);
  }
  return out;
}

// --- summary agent calls -----------------------------------------------------------

/// Observation-level captioner. Empty model output is retried once, then
/// reported as EmptyCaption.
inline std::string caption_observation(Backend& backend, const BackendConfig& config,
                                       const Observation& obs, const Goal& goal) {
  auto messages = prompts::captioner_messages(obs, goal);
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string caption = backend.complete(messages, config);
    if (!trim(caption).empty()) return caption;
  }
  throw Error(Errc::empty_caption,
              "captioner returned empty output twice for step " + std::to_string(obs.step_index));
}

/// Action-level validator over the (action, pre, post) triplet.
inline std::string validate_action(Backend& backend, const BackendConfig& config,
                                   const Action& action, const Observation& pre,
                                   const Observation& post, const Goal&) {
  if (post.step_index != pre.step_index + 1) {
    throw Error(Errc::step_order_violation,
                "post observation step " + std::to_string(post.step_index) +
                    " does not follow pre step " + std::to_string(pre.step_index));
  }
  if (action.is_retrieve()) {
    throw Error(Errc::invalid_argument, "the retrieve tool action has no interface effect to validate");
  }
  auto messages = prompts::validator_messages(action, pre, post);
  return backend.complete(messages, config);
}

// --- cache -----------------------------------------------------------------------
// JSONL, one entry per line:
// {"trajectory_id": "...", "step": k, "observation_caption": "...",
//  "action_description": "...", "action_outcome": "..."}

inline json memory_entry_to_json(const std::string& trajectory_id, const MemoryEntry& e) {
  return json{{"trajectory_id", trajectory_id},
              {"step", e.step},
              {"observation_caption", e.observation_caption},
              {"action_description", e.action_description},
              {"action_outcome", e.action_outcome}};
}

class MemoryCache {
 public:
  MemoryCache() = default;

  /// Loads an existing cache file; a missing file yields an empty cache, a
  /// corrupt line is an error naming the line number.
  static MemoryCache load(const std::filesystem::path& path) {
    MemoryCache cache;
    cache.path_ = path;
    std::ifstream in(path);
    if (!in.good()) return cache;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("trajectory_id") ||
          !j["trajectory_id"].is_string() || !j.contains("step") ||
          !j["step"].is_number_integer() || !j.contains("observation_caption") ||
          !j.contains("action_description") || !j.contains("action_outcome")) {
        throw Error(Errc::schema_error,
                    path.string() + ":" + std::to_string(line_no) + ": corrupt memory cache line");
      }
      MemoryEntry e;
      e.step = j["step"].get<std::int64_t>();
      e.observation_caption = j["observation_caption"].get<std::string>();
      e.action_description = j["action_description"].get<std::string>();
      e.action_outcome = j["action_outcome"].get<std::string>();
      cache.entries_[j["trajectory_id"].get<std::string>()][e.step] = std::move(e);
    }
    return cache;
  }

  bool has(const std::string& trajectory_id, std::int64_t step) const {
    auto it = entries_.find(trajectory_id);
    return it != entries_.end() && it->second.count(step) > 0;
  }

  const MemoryEntry& get(const std::string& trajectory_id, std::int64_t step) const {
    auto it = entries_.find(trajectory_id);
    if (it == entries_.end() || it->second.count(step) == 0) {
      throw Error(Errc::missing_memory_cache,
                  "no cached summary for trajectory \"" + trajectory_id + "\" step " +
                      std::to_string(step));
    }
    return it->second.at(step);
  }

  void put(const std::string& trajectory_id, MemoryEntry entry) {
    entries_[trajectory_id][entry.step] = std::move(entry);
  }

  /// Compressed memory covering steps 0..upto_step-1; every entry must exist.
  CompressedMemory memory_for(const std::string& trajectory_id, std::int64_t upto_step) const {
    CompressedMemory m;
    for (std::int64_t s = 0; s < upto_step; ++s) {
      m = m.appended(get(trajectory_id, s));
    }
    return m;
  }

  std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& [_, per_step] : entries_) n += per_step.size();
    return n;
  }

  /// Rewrites the whole cache file, ordered by (trajectory id, step).
  void save(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& [traj, per_step] : entries_) {
      for (const auto& [_, entry] : per_step) {
        out += memory_entry_to_json(traj, entry).dump();
        out += "\n";
      }
    }
    write_file_bytes(path, out);
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::map<std::string, std::map<std::int64_t, MemoryEntry>> entries_;
};

/// Summarizes every step of a trajectory into the cache. Existing entries are
/// skipped, so re-runs make no backend calls. Returns the number of new
/// entries.
inline std::size_t summarize_trajectory(Backend& backend, const BackendConfig& config,
                                        const Trajectory& traj, MemoryCache& cache) {
  traj.check();
  std::size_t added = 0;
  for (std::size_t i = 0; i < traj.step_count(); ++i) {
    auto step = static_cast<std::int64_t>(i);
    if (cache.has(traj.id, step)) continue;
    MemoryEntry e;
    e.step = step;
    e.observation_caption = caption_observation(backend, config, traj.observations[i], traj.goal);
    e.action_description = describe_action(traj.actions[i]);
    e.action_outcome = validate_action(backend, config, traj.actions[i], traj.observations[i],
                                       traj.observations[i + 1], traj.goal);
    cache.put(traj.id, std::move(e));
    ++added;
  }
  return added;
}

} // namespace lookback
