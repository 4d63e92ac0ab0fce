#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lookback/datagen.hpp"
#include "lookback/trajectory.hpp"
#include "lookback/turn.hpp"

namespace lookback {

struct Violation {
  std::string file;
  std::size_t line = 0;
  std::string trajectory_id;
  std::int64_t step = -1;
  std::string message;

  std::string to_string() const {
    std::string out = file + ":" + std::to_string(line);
    if (!trajectory_id.empty()) out += " [" + trajectory_id;
    if (step >= 0) out += " step " + std::to_string(step);
    if (!trajectory_id.empty()) out += "]";
    out += ": " + message;
    return out;
  }
};

struct ValidationReport {
  std::size_t records = 0;
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }

  std::string to_text() const {
    std::string out;
    for (const auto& v : violations) {
      out += v.to_string();
      out += "\n";
    }
    out += std::to_string(records) + " records, " + std::to_string(violations.size()) +
           " violations\n";
    return out;
  }
};

enum class CorpusKind { auto_detect, trajectories, sft };

namespace detail {

inline void check_image(const std::string& ref, int width, int height, const std::string& file,
                        std::size_t line, const std::string& traj_id, std::int64_t step,
                        std::vector<Violation>& out) {
  if (ref.rfind("data:", 0) == 0) return;
  std::error_code ec;
  if (!std::filesystem::exists(ref, ec)) {
    out.push_back({file, line, traj_id, step, "image not found: " + ref});
    return;
  }
  if (auto dims = read_png_dims(ref)) {
    if (width > 0 && (dims->first != width || dims->second != height)) {
      out.push_back({file, line, traj_id, step,
                     "declared " + std::to_string(width) + "x" + std::to_string(height) +
                         " but PNG is " + std::to_string(dims->first) + "x" +
                         std::to_string(dims->second) + ": " + ref});
    }
  }
}

} // namespace detail

/// Schema-validates a trajectory JSONL file and round-trips every embedded
/// action through the grammar. Never throws on content problems; every issue
/// becomes a Violation naming the line, trajectory, and step.
inline ValidationReport validate_trajectory_file(const std::filesystem::path& path,
                                                 bool check_images = true) {
  ValidationReport report;
  std::ifstream in(path);
  if (!in.good()) {
    report.violations.push_back({path.string(), 0, "", -1, "cannot open file"});
    return report;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++report.records;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      report.violations.push_back({path.string(), line_no, "", -1, "invalid JSON"});
      continue;
    }
    Trajectory traj;
    try {
      traj = trajectory_from_json(j);
    } catch (const Error& e) {
      std::string id = j.is_object() && j.contains("id") && j["id"].is_string()
                           ? j["id"].get<std::string>()
                           : "";
      report.violations.push_back({path.string(), line_no, id, -1, e.what()});
      continue;
    }
    for (std::size_t i = 0; i < traj.actions.size(); ++i) {
      // canonical form must survive a parse/serialize round trip
      try {
        std::string canonical = canonical_action_json(traj.actions[i]);
        Action reparsed = action_from_json_text(canonical);
        if (canonical_action_json(reparsed) != canonical) {
          report.violations.push_back({path.string(), line_no, traj.id,
                                       static_cast<std::int64_t>(i),
                                       "action does not round-trip through the grammar"});
        }
      } catch (const Error& e) {
        report.violations.push_back(
            {path.string(), line_no, traj.id, static_cast<std::int64_t>(i), e.what()});
      }
    }
    if (check_images) {
      for (const auto& o : traj.observations) {
        detail::check_image(o.image_ref, o.width_px, o.height_px, path.string(), line_no, traj.id,
                            o.step_index, report.violations);
      }
    }
  }
  return report;
}

/// Validates an SFT JSONL file: dialogue shape, every assistant message
/// parses, final action is a GUI action, think text nonempty, retrieval
/// samples carry exactly one image in their tool turn, labels consistent.
inline ValidationReport validate_sft_file(const std::filesystem::path& path,
                                          bool check_images = true) {
  ValidationReport report;
  std::ifstream in(path);
  if (!in.good()) {
    report.violations.push_back({path.string(), 0, "", -1, "cannot open file"});
    return report;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++report.records;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      report.violations.push_back({path.string(), line_no, "", -1, "invalid JSON"});
      continue;
    }
    SFTSample sample;
    try {
      sample = sft_sample_from_json(j);
    } catch (const Error& e) {
      report.violations.push_back({path.string(), line_no, "", -1, e.what()});
      continue;
    }
    auto flag = [&](const std::string& message) {
      report.violations.push_back(
          {path.string(), line_no, sample.trajectory_id, sample.step, message});
    };

    if (sample.used_retrieval != sample.retrieval_distance.has_value()) {
      flag("labels: used_retrieval and retrieval_distance disagree");
    }
    if (sample.retrieval_distance && *sample.retrieval_distance < 1) {
      flag("labels: retrieval_distance must be >= 1");
    }
    std::size_t expected = sample.used_retrieval ? 5u : 3u;
    if (sample.messages.size() != expected) {
      flag("expected " + std::to_string(expected) + " messages, got " +
           std::to_string(sample.messages.size()));
      continue;
    }
    const Role expected_roles_plain[] = {Role::system, Role::user, Role::assistant};
    const Role expected_roles_tool[] = {Role::system, Role::user, Role::assistant, Role::tool,
                                        Role::assistant};
    for (std::size_t i = 0; i < sample.messages.size(); ++i) {
      Role want = sample.used_retrieval ? expected_roles_tool[i] : expected_roles_plain[i];
      if (sample.messages[i].role != want) {
        flag("message " + std::to_string(i) + " has role " +
             role_name(sample.messages[i].role) + ", expected " + role_name(want));
      }
    }
    if (sample.messages[1].image_count() != 1) {
      flag("user message must carry exactly one screenshot");
    }

    std::vector<std::size_t> assistant_indices = sample.used_retrieval
                                                     ? std::vector<std::size_t>{2, 4}
                                                     : std::vector<std::size_t>{2};
    for (std::size_t k = 0; k < assistant_indices.size(); ++k) {
      std::size_t i = assistant_indices[k];
      AgentTurn turn;
      try {
        turn = parse_turn(sample.messages[i].joined_text());
      } catch (const Error& e) {
        flag("assistant message " + std::to_string(i) + " does not parse: " + e.what());
        continue;
      }
      if (trim(turn.think).empty()) {
        flag("assistant message " + std::to_string(i) + " has an empty think block");
      }
      bool is_final = (k + 1 == assistant_indices.size());
      if (is_final && turn.call.is_retrieve()) {
        flag("final assistant action must be a GUI action, not retrieve");
      }
      if (!is_final && !turn.call.is_retrieve()) {
        flag("retrieval sample's first assistant action must be retrieve");
      }
    }
    if (sample.used_retrieval) {
      if (sample.messages[3].image_count() != 1) {
        flag("tool turn must carry exactly one retrieved screenshot");
      }
    }
    if (check_images) {
      for (const auto& m : sample.messages) {
        for (const auto& ref : m.image_refs()) {
          detail::check_image(ref, 0, 0, path.string(), line_no, sample.trajectory_id, sample.step,
                              report.violations);
        }
      }
    }
  }
  return report;
}

/// Detects the corpus kind from the first record ("messages" marks SFT files).
inline CorpusKind detect_corpus_kind(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_object() && j.contains("messages")) return CorpusKind::sft;
    return CorpusKind::trajectories;
  }
  return CorpusKind::trajectories;
}

inline ValidationReport validate_corpus(const std::filesystem::path& path,
                                        CorpusKind kind = CorpusKind::auto_detect,
                                        bool check_images = true) {
  if (kind == CorpusKind::auto_detect) kind = detect_corpus_kind(path);
  return kind == CorpusKind::sft ? validate_sft_file(path, check_images)
                                 : validate_trajectory_file(path, check_images);
}

} // namespace lookback
