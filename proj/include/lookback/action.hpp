#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lookback/error.hpp"
#include "lookback/util.hpp"

namespace lookback {

using json = nlohmann::json;

/// Normalized screen coordinate, both axes in [0, 1].
struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Normalized axis-aligned box, 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1.
struct BBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  bool valid() const {
    return 0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0;
  }
  bool contains(Point p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

enum class Platform { general, mobile, web };

inline const char* platform_name(Platform p) {
  switch (p) {
    case Platform::general: return "general";
    case Platform::mobile: return "mobile";
    case Platform::web: return "web";
  }
  return "general";
}

inline std::optional<Platform> platform_from_name(std::string_view name) {
  std::string n = to_lower_ascii(trim(name));
  if (n == "general") return Platform::general;
  if (n == "mobile") return Platform::mobile;
  if (n == "web") return Platform::web;
  return std::nullopt;
}

enum class ScrollDirection { up, down, left, right };

inline const char* scroll_direction_name(ScrollDirection d) {
  switch (d) {
    case ScrollDirection::up: return "up";
    case ScrollDirection::down: return "down";
    case ScrollDirection::left: return "left";
    case ScrollDirection::right: return "right";
  }
  return "down";
}

// --- the unified action vocabulary -------------------------------------------

struct Click {
  Point at;
  friend bool operator==(const Click&, const Click&) = default;
};
struct TypeText {
  std::string text;
  friend bool operator==(const TypeText&, const TypeText&) = default;
};
struct Scroll {
  ScrollDirection direction = ScrollDirection::down;
  // Fraction of the scrollable axis in (0, 1]; absent means "one default swipe"
  // (0.5), a convention that is never serialized.
  std::optional<double> magnitude;
  friend bool operator==(const Scroll&, const Scroll&) = default;
};
struct Drag {
  Point from, to;
  friend bool operator==(const Drag&, const Drag&) = default;
};
struct Wait {
  std::optional<std::int64_t> duration_ms;
  friend bool operator==(const Wait&, const Wait&) = default;
};
struct Finished {
  std::optional<std::string> answer;
  friend bool operator==(const Finished&, const Finished&) = default;
};
struct LongPress {
  Point at;
  friend bool operator==(const LongPress&, const LongPress&) = default;
};
struct OpenApp {
  std::string name;
  friend bool operator==(const OpenApp&, const OpenApp&) = default;
};
struct PressHome {
  friend bool operator==(const PressHome&, const PressHome&) = default;
};
struct PressBack {
  friend bool operator==(const PressBack&, const PressBack&) = default;
};
struct Hotkey {
  std::vector<std::string> keys;
  friend bool operator==(const Hotkey&, const Hotkey&) = default;
};
struct LeftDouble {
  Point at;
  friend bool operator==(const LeftDouble&, const LeftDouble&) = default;
};
struct RightSingle {
  Point at;
  friend bool operator==(const RightSingle&, const RightSingle&) = default;
};
/// Tool action: fetch the screenshot of past step `step` into context.
struct Retrieve {
  std::int64_t step = 0;
  friend bool operator==(const Retrieve&, const Retrieve&) = default;
};

enum class ActionKind {
  click,
  type_text,
  scroll,
  drag,
  wait,
  finished,
  long_press,
  open_app,
  press_home,
  press_back,
  hotkey,
  left_double,
  right_single,
  retrieve,
};

/// Wire name used in the action-v1 JSON schema.
inline const char* kind_name(ActionKind k) {
  switch (k) {
    case ActionKind::click: return "click";
    case ActionKind::type_text: return "type";
    case ActionKind::scroll: return "scroll";
    case ActionKind::drag: return "drag";
    case ActionKind::wait: return "wait";
    case ActionKind::finished: return "finished";
    case ActionKind::long_press: return "long_press";
    case ActionKind::open_app: return "open_app";
    case ActionKind::press_home: return "press_home";
    case ActionKind::press_back: return "press_back";
    case ActionKind::hotkey: return "hotkey";
    case ActionKind::left_double: return "left_double";
    case ActionKind::right_single: return "right_single";
    case ActionKind::retrieve: return "retrieve";
  }
  return "unknown";
}

inline std::optional<ActionKind> kind_from_name(std::string_view name) {
  if (name == "click") return ActionKind::click;
  if (name == "type") return ActionKind::type_text;
  if (name == "scroll") return ActionKind::scroll;
  if (name == "drag") return ActionKind::drag;
  if (name == "wait") return ActionKind::wait;
  if (name == "finished") return ActionKind::finished;
  if (name == "long_press") return ActionKind::long_press;
  if (name == "open_app") return ActionKind::open_app;
  if (name == "press_home") return ActionKind::press_home;
  if (name == "press_back") return ActionKind::press_back;
  if (name == "hotkey") return ActionKind::hotkey;
  if (name == "left_double") return ActionKind::left_double;
  if (name == "right_single") return ActionKind::right_single;
  if (name == "retrieve") return ActionKind::retrieve;
  return std::nullopt;
}

/// Platform group an action kind belongs to. Retrieve is a tool action and is
/// allowed everywhere; it reports `general` here.
inline Platform platform_of(ActionKind k) {
  switch (k) {
    case ActionKind::long_press:
    case ActionKind::open_app:
    case ActionKind::press_home:
    case ActionKind::press_back:
      return Platform::mobile;
    case ActionKind::hotkey:
    case ActionKind::left_double:
    case ActionKind::right_single:
      return Platform::web;
    default:
      return Platform::general;
  }
}

class Action {
 public:
  using Payload = std::variant<Click, TypeText, Scroll, Drag, Wait, Finished, LongPress, OpenApp,
                               PressHome, PressBack, Hotkey, LeftDouble, RightSingle, Retrieve>;

  Action() : payload_(PressBack{}) {}
  Action(Payload p) : payload_(std::move(p)) {}  // NOLINT(google-explicit-constructor)
  template <typename T, typename = std::enable_if_t<std::is_constructible_v<Payload, T>>>
  Action(T alt) : payload_(std::move(alt)) {}  // NOLINT

  ActionKind kind() const {
    return static_cast<ActionKind>(payload_.index());
  }

  template <typename T>
  bool is() const {
    return std::holds_alternative<T>(payload_);
  }
  template <typename T>
  const T& get() const {
    return std::get<T>(payload_);
  }

  bool is_retrieve() const { return is<Retrieve>(); }

  /// Click-like actions with a single target coordinate.
  bool is_point_action() const {
    switch (kind()) {
      case ActionKind::click:
      case ActionKind::long_press:
      case ActionKind::left_double:
      case ActionKind::right_single:
        return true;
      default:
        return false;
    }
  }

  std::optional<Point> point() const {
    switch (kind()) {
      case ActionKind::click: return get<Click>().at;
      case ActionKind::long_press: return get<LongPress>().at;
      case ActionKind::left_double: return get<LeftDouble>().at;
      case ActionKind::right_single: return get<RightSingle>().at;
      default: return std::nullopt;
    }
  }

  const Payload& payload() const { return payload_; }

  friend bool operator==(const Action& a, const Action& b) { return a.payload_ == b.payload_; }

 private:
  Payload payload_;
};

// --- canonical serialization ---------------------------------------------------
// action-v1: {"action": <kind>, ...kind-specific fields} with keys in the order
// written below and coordinates formatted to 4 decimal places.

namespace detail {

inline std::string coord4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return std::string(buf);
}

inline std::string json_string(std::string_view s) {
  return json(std::string(s)).dump();
}

inline std::string point_array(Point p) {
  return "[" + coord4(p.x) + "," + coord4(p.y) + "]";
}

} // namespace detail

inline std::string canonical_action_json(const Action& a) {
  using detail::coord4;
  using detail::json_string;
  using detail::point_array;
  std::string out = "{\"action\":\"";
  out += kind_name(a.kind());
  out += "\"";
  switch (a.kind()) {
    case ActionKind::click:
      out += ",\"coordinate\":" + point_array(a.get<Click>().at);
      break;
    case ActionKind::type_text:
      out += ",\"text\":" + json_string(a.get<TypeText>().text);
      break;
    case ActionKind::scroll: {
      const auto& s = a.get<Scroll>();
      out += ",\"direction\":\"";
      out += scroll_direction_name(s.direction);
      out += "\"";
      if (s.magnitude) out += ",\"magnitude\":" + coord4(*s.magnitude);
      break;
    }
    case ActionKind::drag: {
      const auto& d = a.get<Drag>();
      out += ",\"from\":" + point_array(d.from) + ",\"to\":" + point_array(d.to);
      break;
    }
    case ActionKind::wait: {
      const auto& w = a.get<Wait>();
      if (w.duration_ms) out += ",\"duration_ms\":" + std::to_string(*w.duration_ms);
      break;
    }
    case ActionKind::finished: {
      const auto& f = a.get<Finished>();
      if (f.answer) out += ",\"answer\":" + json_string(*f.answer);
      break;
    }
    case ActionKind::long_press:
      out += ",\"coordinate\":" + point_array(a.get<LongPress>().at);
      break;
    case ActionKind::open_app:
      out += ",\"name\":" + json_string(a.get<OpenApp>().name);
      break;
    case ActionKind::press_home:
    case ActionKind::press_back:
      break;
    case ActionKind::hotkey: {
      out += ",\"keys\":[";
      const auto& keys = a.get<Hotkey>().keys;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        if (i) out += ",";
        out += json_string(keys[i]);
      }
      out += "]";
      break;
    }
    case ActionKind::left_double:
      out += ",\"coordinate\":" + point_array(a.get<LeftDouble>().at);
      break;
    case ActionKind::right_single:
      out += ",\"coordinate\":" + point_array(a.get<RightSingle>().at);
      break;
    case ActionKind::retrieve:
      out += ",\"step\":" + std::to_string(a.get<Retrieve>().step);
      break;
  }
  out += "}";
  return out;
}

// --- parsing -------------------------------------------------------------------

namespace detail {

inline double require_unit_coord(const json& v, const char* what) {
  if (!v.is_number()) {
    throw Error(Errc::malformed_action_json, std::string(what) + " must be a number");
  }
  double d = v.get<double>();
  if (!(d >= 0.0 && d <= 1.0)) {
    throw Error(Errc::malformed_action_json,
                std::string(what) + " out of normalized range [0,1]: " + std::to_string(d));
  }
  return d;
}

inline Point require_point(const json& obj, const char* key) {
  if (!obj.contains(key) || !obj[key].is_array() || obj[key].size() != 2) {
    throw Error(Errc::malformed_action_json,
                std::string("expected \"") + key + "\" as a [x,y] array");
  }
  return Point{require_unit_coord(obj[key][0], key), require_unit_coord(obj[key][1], key)};
}

inline std::string require_string(const json& obj, const char* key) {
  if (!obj.contains(key) || !obj[key].is_string()) {
    throw Error(Errc::malformed_action_json, std::string("expected string field \"") + key + "\"");
  }
  return obj[key].get<std::string>();
}

} // namespace detail

/// Decodes one action-v1 JSON object. Coordinates must already be normalized;
/// pixel-coordinate records are converted by the trajectory loader.
inline Action action_from_json(const json& obj) {
  if (!obj.is_object()) {
    throw Error(Errc::malformed_action_json, "tool_use payload is not a JSON object");
  }
  if (!obj.contains("action") || !obj["action"].is_string()) {
    throw Error(Errc::malformed_action_json, "missing string \"action\" key");
  }
  std::string name = obj["action"].get<std::string>();
  auto kind = kind_from_name(name);
  if (!kind) {
    throw Error(Errc::unknown_action_kind, "unrecognized action kind \"" + name + "\"");
  }
  using detail::require_point;
  using detail::require_string;
  switch (*kind) {
    case ActionKind::click:
      return Click{require_point(obj, "coordinate")};
    case ActionKind::type_text:
      return TypeText{require_string(obj, "text")};
    case ActionKind::scroll: {
      std::string dir = to_lower_ascii(require_string(obj, "direction"));
      Scroll s;
      if (dir == "up") s.direction = ScrollDirection::up;
      else if (dir == "down") s.direction = ScrollDirection::down;
      else if (dir == "left") s.direction = ScrollDirection::left;
      else if (dir == "right") s.direction = ScrollDirection::right;
      else throw Error(Errc::malformed_action_json, "bad scroll direction \"" + dir + "\"");
      if (obj.contains("magnitude")) {
        if (!obj["magnitude"].is_number()) {
          throw Error(Errc::malformed_action_json, "scroll magnitude must be a number");
        }
        double m = obj["magnitude"].get<double>();
        if (!(m > 0.0 && m <= 1.0)) {
          throw Error(Errc::malformed_action_json, "scroll magnitude out of (0,1]");
        }
        s.magnitude = m;
      }
      return s;
    }
    case ActionKind::drag:
      return Drag{require_point(obj, "from"), require_point(obj, "to")};
    case ActionKind::wait: {
      Wait w;
      if (obj.contains("duration_ms")) {
        if (!obj["duration_ms"].is_number_integer() || obj["duration_ms"].get<std::int64_t>() < 0) {
          throw Error(Errc::malformed_action_json, "wait duration_ms must be a nonnegative integer");
        }
        w.duration_ms = obj["duration_ms"].get<std::int64_t>();
      }
      return w;
    }
    case ActionKind::finished: {
      Finished f;
      if (obj.contains("answer")) {
        if (!obj["answer"].is_string()) {
          throw Error(Errc::malformed_action_json, "finished answer must be a string");
        }
        f.answer = obj["answer"].get<std::string>();
      }
      return f;
    }
    case ActionKind::long_press:
      return LongPress{require_point(obj, "coordinate")};
    case ActionKind::open_app:
      return OpenApp{require_string(obj, "name")};
    case ActionKind::press_home:
      return PressHome{};
    case ActionKind::press_back:
      return PressBack{};
    case ActionKind::hotkey: {
      if (!obj.contains("keys") || !obj["keys"].is_array() || obj["keys"].empty()) {
        throw Error(Errc::malformed_action_json, "hotkey keys must be a nonempty array");
      }
      Hotkey h;
      for (const auto& k : obj["keys"]) {
        if (!k.is_string() || k.get<std::string>().empty()) {
          throw Error(Errc::malformed_action_json, "hotkey keys must be nonempty strings");
        }
        h.keys.push_back(k.get<std::string>());
      }
      return h;
    }
    case ActionKind::left_double:
      return LeftDouble{require_point(obj, "coordinate")};
    case ActionKind::right_single:
      return RightSingle{require_point(obj, "coordinate")};
    case ActionKind::retrieve: {
      if (!obj.contains("step") || !obj["step"].is_number_integer() ||
          obj["step"].get<std::int64_t>() < 0) {
        throw Error(Errc::malformed_action_json, "retrieve step must be a nonnegative integer");
      }
      return Retrieve{obj["step"].get<std::int64_t>()};
    }
  }
  throw Error(Errc::unknown_action_kind, "unrecognized action kind \"" + name + "\"");
}

inline Action action_from_json_text(std::string_view text) {
  json obj = json::parse(text, nullptr, false);
  if (obj.is_discarded()) {
    throw Error(Errc::malformed_action_json, "unparseable action JSON");
  }
  return action_from_json(obj);
}

// --- platform validation ---------------------------------------------------------

inline bool allowed_on_platform(ActionKind kind, Platform platform) {
  if (kind == ActionKind::retrieve) return true;
  Platform group = platform_of(kind);
  return group == Platform::general || group == platform;
}

inline void validate_for_platform(const Action& action, Platform platform) {
  if (!allowed_on_platform(action.kind(), platform)) {
    throw Error(Errc::platform_mismatch, std::string(kind_name(action.kind())) +
                                             " is not available on platform " +
                                             platform_name(platform));
  }
}

// --- natural-language rendering ---------------------------------------------------

namespace detail {

inline std::string point_text(Point p) {
  return "(" + coord4(p.x) + ", " + coord4(p.y) + ")";
}

} // namespace detail

/// Short natural-language description, used by the action-outcome validator
/// prompt and by action-list memory accounting.
inline std::string describe_action(const Action& a) {
  using detail::point_text;
  switch (a.kind()) {
    case ActionKind::click:
      return "click at " + point_text(a.get<Click>().at);
    case ActionKind::type_text:
      return "type the text \"" + a.get<TypeText>().text + "\"";
    case ActionKind::scroll: {
      const auto& s = a.get<Scroll>();
      std::string out = std::string("scroll ") + scroll_direction_name(s.direction);
      if (s.magnitude) out += " by " + detail::coord4(*s.magnitude);
      return out;
    }
    case ActionKind::drag: {
      const auto& d = a.get<Drag>();
      return "drag from " + point_text(d.from) + " to " + point_text(d.to);
    }
    case ActionKind::wait: {
      const auto& w = a.get<Wait>();
      if (w.duration_ms) return "wait " + std::to_string(*w.duration_ms) + " ms";
      return "wait";
    }
    case ActionKind::finished: {
      const auto& f = a.get<Finished>();
      if (f.answer) return "finish the task with answer \"" + *f.answer + "\"";
      return "finish the task";
    }
    case ActionKind::long_press:
      return "long-press at " + point_text(a.get<LongPress>().at);
    case ActionKind::open_app:
      return "open the app \"" + a.get<OpenApp>().name + "\"";
    case ActionKind::press_home:
      return "press the home button";
    case ActionKind::press_back:
      return "press the back button";
    case ActionKind::hotkey: {
      const auto& keys = a.get<Hotkey>().keys;
      std::string out = "press the hotkey ";
      for (std::size_t i = 0; i < keys.size(); ++i) {
        if (i) out += "+";
        out += keys[i];
      }
      return out;
    }
    case ActionKind::left_double:
      return "double-click at " + point_text(a.get<LeftDouble>().at);
    case ActionKind::right_single:
      return "right-click at " + point_text(a.get<RightSingle>().at);
    case ActionKind::retrieve:
      return "retrieve the screenshot from step " + std::to_string(a.get<Retrieve>().step);
  }
  return "unknown action";
}

} // namespace lookback
