#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lookback/action.hpp"
#include "lookback/error.hpp"
#include "lookback/util.hpp"

namespace lookback {

struct Goal {
  std::string text;
  friend bool operator==(const Goal&, const Goal&) = default;
};

/// One screenshot in an episode. `step_index` is the 0-based position of the
/// observation; the action decided at this screen is actions[step_index].
struct Observation {
  std::int64_t step_index = 0;
  std::string image_ref;
  int width_px = 0;
  int height_px = 0;
  friend bool operator==(const Observation&, const Observation&) = default;
};

/// One task episode: observations o_0..o_T and the T ground-truth actions,
/// where actions[i] transitions o_i into o_{i+1}.
struct Trajectory {
  std::string id;
  Goal goal;
  Platform platform = Platform::mobile;
  std::vector<Observation> observations;
  std::vector<Action> actions;
  std::vector<std::optional<BBox>> gt_bboxes;  // one slot per action, may be absent

  std::size_t step_count() const { return actions.size(); }

  void check() const {
    if (id.empty()) throw Error(Errc::trajectory_malformed, "trajectory id is empty");
    if (trim(goal.text).empty()) {
      throw Error(Errc::trajectory_malformed, "trajectory \"" + id + "\" has an empty goal");
    }
    if (observations.size() != actions.size() + 1) {
      throw Error(Errc::trajectory_malformed,
                  "trajectory \"" + id + "\": expected " + std::to_string(actions.size() + 1) +
                      " observations for " + std::to_string(actions.size()) + " actions, got " +
                      std::to_string(observations.size()));
    }
    if (!gt_bboxes.empty() && gt_bboxes.size() != actions.size()) {
      throw Error(Errc::trajectory_malformed,
                  "trajectory \"" + id + "\": gt_bboxes length must equal action count");
    }
    for (std::size_t i = 0; i < observations.size(); ++i) {
      const auto& o = observations[i];
      if (o.step_index != static_cast<std::int64_t>(i)) {
        throw Error(Errc::trajectory_malformed,
                    "trajectory \"" + id + "\": observation step_index out of order");
      }
      if (o.width_px <= 0 || o.height_px <= 0) {
        throw Error(Errc::trajectory_malformed,
                    "trajectory \"" + id + "\": nonpositive screen dimensions at step " +
                        std::to_string(i));
      }
      if (o.image_ref.empty()) {
        throw Error(Errc::trajectory_malformed,
                    "trajectory \"" + id + "\": missing image at step " + std::to_string(i));
      }
    }
    for (std::size_t i = 0; i < actions.size(); ++i) {
      if (actions[i].is_retrieve()) {
        throw Error(Errc::trajectory_malformed,
                    "trajectory \"" + id + "\": ground-truth action " + std::to_string(i) +
                        " is a retrieve tool call");
      }
      if (!allowed_on_platform(actions[i].kind(), platform)) {
        throw Error(Errc::trajectory_malformed,
                    "trajectory \"" + id + "\": action " + std::to_string(i) + " (" +
                        kind_name(actions[i].kind()) + ") is invalid on platform " +
                        platform_name(platform));
      }
    }
    for (std::size_t i = 0; i < gt_bboxes.size(); ++i) {
      if (gt_bboxes[i] && !gt_bboxes[i]->valid()) {
        throw Error(Errc::trajectory_malformed,
                    "trajectory \"" + id + "\": invalid bbox at step " + std::to_string(i));
      }
    }
  }
};

// --- pixel <-> normalized conversion ---------------------------------------------

inline double normalize_coord(double px, int dim) {
  if (dim <= 0) throw Error(Errc::invalid_argument, "screen dimension must be positive");
  double v = px / static_cast<double>(dim);
  if (v < 0.0) v = 0.0;
  if (v > 1.0) v = 1.0;
  return v;
}

inline double denormalize_coord(double normalized, int dim) {
  return normalized * static_cast<double>(dim);
}

namespace detail {

/// Converts any *_px fields on a stored action object into normalized
/// coordinates using the dimensions of the screen the action was taken on.
inline json normalize_pixel_fields(json obj, int width_px, int height_px) {
  auto convert = [&](const char* px_key, const char* norm_key) {
    if (!obj.contains(px_key)) return;
    const auto& v = obj[px_key];
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw Error(Errc::malformed_action_json,
                  std::string("\"") + px_key + "\" must be a [x,y] number array");
    }
    obj[norm_key] = json::array({normalize_coord(v[0].get<double>(), width_px),
                                 normalize_coord(v[1].get<double>(), height_px)});
    obj.erase(px_key);
  };
  convert("coordinate_px", "coordinate");
  convert("from_px", "from");
  convert("to_px", "to");
  return obj;
}

inline std::optional<BBox> bbox_from_json(const json& v, int width_px, int height_px, bool pixel) {
  if (v.is_null()) return std::nullopt;
  if (!v.is_array() || v.size() != 4) {
    throw Error(Errc::schema_error, "bbox must be null or [x0,y0,x1,y1]");
  }
  for (const auto& c : v) {
    if (!c.is_number()) throw Error(Errc::schema_error, "bbox entries must be numbers");
  }
  BBox b;
  if (pixel) {
    b = BBox{normalize_coord(v[0].get<double>(), width_px),
             normalize_coord(v[1].get<double>(), height_px),
             normalize_coord(v[2].get<double>(), width_px),
             normalize_coord(v[3].get<double>(), height_px)};
  } else {
    b = BBox{v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
  }
  if (!b.valid()) throw Error(Errc::schema_error, "bbox is not a valid normalized box");
  return b;
}

} // namespace detail

// --- trajectory JSONL schema ------------------------------------------------------
// One trajectory per line:
// {"id": "...", "goal": "...", "platform": "mobile",
//  "observations": [{"image": "path-or-data-uri", "width": W, "height": H}, ...],
//  "actions": [action-v1 objects; point fields may use coordinate_px/from_px/to_px],
//  "gt_bboxes": [[x0,y0,x1,y1] | null, ...]  (optional; gt_bboxes_px for pixels)}

inline Trajectory trajectory_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::schema_error, "trajectory record must be an object");
  for (const char* key : {"id", "goal", "platform", "observations", "actions"}) {
    if (!j.contains(key)) {
      throw Error(Errc::schema_error, std::string("trajectory record missing \"") + key + "\"");
    }
  }
  Trajectory t;
  if (!j["id"].is_string() || !j["goal"].is_string() || !j["platform"].is_string()) {
    throw Error(Errc::schema_error, "id/goal/platform must be strings");
  }
  t.id = j["id"].get<std::string>();
  t.goal = Goal{j["goal"].get<std::string>()};
  auto platform = platform_from_name(j["platform"].get<std::string>());
  if (!platform) {
    throw Error(Errc::schema_error,
                "unknown platform \"" + j["platform"].get<std::string>() + "\"");
  }
  t.platform = *platform;

  if (!j["observations"].is_array() || j["observations"].empty()) {
    throw Error(Errc::schema_error, "observations must be a nonempty array");
  }
  std::int64_t index = 0;
  for (const auto& o : j["observations"]) {
    if (!o.is_object() || !o.contains("image") || !o["image"].is_string() ||
        !o.contains("width") || !o["width"].is_number_integer() || !o.contains("height") ||
        !o["height"].is_number_integer()) {
      throw Error(Errc::schema_error,
                  "observation must be {\"image\": str, \"width\": int, \"height\": int}");
    }
    Observation obs;
    obs.step_index = index++;
    obs.image_ref = o["image"].get<std::string>();
    obs.width_px = o["width"].get<int>();
    obs.height_px = o["height"].get<int>();
    t.observations.push_back(std::move(obs));
  }

  if (!j["actions"].is_array()) throw Error(Errc::schema_error, "actions must be an array");
  if (j["actions"].size() + 1 != t.observations.size()) {
    throw Error(Errc::schema_error, "expected exactly one more observation than actions");
  }
  std::size_t i = 0;
  for (const auto& a : j["actions"]) {
    // actions[i] is taken on screen o_i; its pixel fields normalize by o_i's dims
    const auto& screen = t.observations[i];
    json normalized = detail::normalize_pixel_fields(a, screen.width_px, screen.height_px);
    t.actions.push_back(action_from_json(normalized));
    ++i;
  }

  const bool has_norm = j.contains("gt_bboxes");
  const bool has_px = j.contains("gt_bboxes_px");
  if (has_norm || has_px) {
    const auto& arr = has_norm ? j["gt_bboxes"] : j["gt_bboxes_px"];
    if (!arr.is_array() || arr.size() != t.actions.size()) {
      throw Error(Errc::schema_error, "gt_bboxes must be an array with one entry per action");
    }
    std::size_t k = 0;
    for (const auto& v : arr) {
      const auto& screen = t.observations[k];
      t.gt_bboxes.push_back(detail::bbox_from_json(v, screen.width_px, screen.height_px, has_px));
      ++k;
    }
  }

  t.check();
  return t;
}

inline json trajectory_to_json(const Trajectory& t) {
  json obs = json::array();
  for (const auto& o : t.observations) {
    obs.push_back({{"image", o.image_ref}, {"width", o.width_px}, {"height", o.height_px}});
  }
  json actions = json::array();
  for (const auto& a : t.actions) {
    actions.push_back(json::parse(canonical_action_json(a)));
  }
  json j{{"id", t.id},
         {"goal", t.goal.text},
         {"platform", platform_name(t.platform)},
         {"observations", obs},
         {"actions", actions}};
  if (!t.gt_bboxes.empty()) {
    json boxes = json::array();
    for (const auto& b : t.gt_bboxes) {
      if (b) {
        boxes.push_back(json::array({b->x0, b->y0, b->x1, b->y1}));
      } else {
        boxes.push_back(nullptr);
      }
    }
    j["gt_bboxes"] = boxes;
  }
  return j;
}

inline std::vector<Trajectory> load_trajectories_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw Error(Errc::io_error, "cannot open trajectory file: " + path.string());
  std::vector<Trajectory> out;
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
    try {
      out.push_back(trajectory_from_json(j));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void save_trajectories_jsonl(const std::filesystem::path& path,
                                    const std::vector<Trajectory>& trajectories) {
  std::string out;
  for (const auto& t : trajectories) {
    out += trajectory_to_json(t).dump();
    out += "\n";
  }
  write_file_bytes(path, out);
}

// --- PNG header probe --------------------------------------------------------------

/// Reads width/height from a PNG file's IHDR chunk. Returns nullopt for
/// non-PNG or unreadable files; used by corpus validation to cross-check
/// declared dimensions.
inline std::optional<std::pair<int, int>> read_png_dims(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) return std::nullopt;
  unsigned char header[24];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (in.gcount() != sizeof(header)) return std::nullopt;
  static const unsigned char magic[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  for (int i = 0; i < 8; ++i) {
    if (header[i] != magic[i]) return std::nullopt;
  }
  auto be32 = [&](int off) {
    return (static_cast<int>(header[off]) << 24) | (static_cast<int>(header[off + 1]) << 16) |
           (static_cast<int>(header[off + 2]) << 8) | static_cast<int>(header[off + 3]);
  };
  return std::make_pair(be32(16), be32(20));
}

} // namespace lookback
