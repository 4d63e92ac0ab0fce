#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lookback/error.hpp"
#include "lookback/util.hpp"

namespace lookback {

enum class Role { system, user, assistant, tool };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
  }
  return "user";
}

inline std::optional<Role> role_from_name(std::string_view name) {
  if (name == "system") return Role::system;
  if (name == "user") return Role::user;
  if (name == "assistant") return Role::assistant;
  if (name == "tool") return Role::tool;
  return std::nullopt;
}

struct TextPart {
  std::string text;
  friend bool operator==(const TextPart&, const TextPart&) = default;
};

/// Image by reference: a file path or a data URI. Bytes are only materialized
/// at the HTTP boundary.
struct ImagePart {
  std::string image_ref;
  friend bool operator==(const ImagePart&, const ImagePart&) = default;
};

using Part = std::variant<TextPart, ImagePart>;

struct ChatMessage {
  Role role = Role::user;
  std::vector<Part> parts;

  static ChatMessage text(Role role, std::string t) {
    return ChatMessage{role, {TextPart{std::move(t)}}};
  }

  /// Concatenated text of all text parts.
  std::string joined_text() const {
    std::string out;
    for (const auto& p : parts) {
      if (const auto* t = std::get_if<TextPart>(&p)) {
        if (!out.empty()) out += "\n";
        out += t->text;
      }
    }
    return out;
  }

  std::vector<std::string> image_refs() const {
    std::vector<std::string> refs;
    for (const auto& p : parts) {
      if (const auto* i = std::get_if<ImagePart>(&p)) refs.push_back(i->image_ref);
    }
    return refs;
  }

  std::size_t image_count() const { return image_refs().size(); }

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct BackendConfig {
  std::string endpoint;
  std::string model;
  int max_output_tokens = 1024;
  double temperature = 0.0;
  double timeout_s = 60.0;
  int retries = 2;
  int max_parallel = 4;

  void check() const {
    if (timeout_s <= 0.0) throw Error(Errc::config_error, "timeout_s must be > 0");
    if (retries < 0) throw Error(Errc::config_error, "retries must be >= 0");
    if (max_parallel < 1) throw Error(Errc::config_error, "max_parallel must be >= 1");
  }
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Returns the model's text output verbatim. Must be safe for concurrent
  /// callers.
  virtual std::string complete(const std::vector<ChatMessage>& messages,
                               const BackendConfig& config) = 0;
};

// --- deterministic fingerprints -------------------------------------------------

/// Stable rendering of a message list used for hashing and replay. Image parts
/// contribute their reference, never their bytes.
inline std::string render_messages_for_hash(const std::vector<ChatMessage>& messages) {
  std::string out;
  for (const auto& m : messages) {
    out += role_name(m.role);
    out += '\x1f';
    for (const auto& p : m.parts) {
      if (const auto* t = std::get_if<TextPart>(&p)) {
        out += 'T';
        out += t->text;
      } else {
        out += 'I';
        out += std::get<ImagePart>(p).image_ref;
      }
      out += '\x1e';
    }
    out += '\x1d';
  }
  return out;
}

inline std::string message_fingerprint(const std::vector<ChatMessage>& messages) {
  return hex64(fnv1a64(render_messages_for_hash(messages)));
}

// --- scripted backends -----------------------------------------------------------

/// Deterministic test/replay backend. Three programs:
///   queue  — responses consumed in call order; exhaustion is an error so
///            over/under-calling is visible in tests
///   rules  — first rule whose needles all appear in the rendered conversation
///            wins; optional default for unmatched input
///   replay — recorded message-fingerprint -> output log
class ScriptedBackend : public Backend {
 public:
  struct Rule {
    std::vector<std::string> needles;
    std::string response;
  };

  static ScriptedBackend queue(std::vector<std::string> responses) {
    ScriptedBackend b;
    b.mode_ = Mode::queue;
    for (auto& r : responses) b.queue_.push_back(std::move(r));
    return b;
  }

  static ScriptedBackend rules(std::vector<Rule> rules,
                               std::optional<std::string> fallback = std::nullopt) {
    ScriptedBackend b;
    b.mode_ = Mode::rules;
    b.rules_ = std::move(rules);
    b.fallback_ = std::move(fallback);
    return b;
  }

  static ScriptedBackend replay(std::unordered_map<std::string, std::string> log) {
    ScriptedBackend b;
    b.mode_ = Mode::replay;
    b.replay_log_ = std::move(log);
    return b;
  }

  std::string complete(const std::vector<ChatMessage>& messages, const BackendConfig&) override {
    std::lock_guard<std::mutex> lock(*mutex_);
    ++calls_;
    switch (mode_) {
      case Mode::queue: {
        if (queue_.empty()) {
          throw Error(Errc::script_exhausted, "scripted response queue is empty");
        }
        std::string out = std::move(queue_.front());
        queue_.pop_front();
        return out;
      }
      case Mode::rules: {
        // Rules match against the last user message first, then against the
        // whole rendered conversation, so keys like "step 2" work either way.
        std::string last_user;
        for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
          if (it->role == Role::user) {
            last_user = it->joined_text();
            break;
          }
        }
        std::string full;
        for (const auto& m : messages) {
          full += m.joined_text();
          full += '\n';
        }
        for (const auto& rule : rules_) {
          bool all = true;
          for (const auto& needle : rule.needles) {
            if (last_user.find(needle) == std::string::npos &&
                full.find(needle) == std::string::npos) {
              all = false;
              break;
            }
          }
          if (all) return rule.response;
        }
        if (fallback_) return *fallback_;
        throw Error(Errc::script_exhausted, "no scripted rule matched and no default set");
      }
      case Mode::replay: {
        auto it = replay_log_.find(message_fingerprint(messages));
        if (it == replay_log_.end()) {
          throw Error(Errc::script_exhausted, "no recorded response for this input");
        }
        return it->second;
      }
    }
    throw Error(Errc::script_exhausted, "scripted backend has no program");
  }

  int calls() const {
    std::lock_guard<std::mutex> lock(*mutex_);
    return calls_;
  }

  std::size_t remaining() const {
    std::lock_guard<std::mutex> lock(*mutex_);
    return queue_.size();
  }

 private:
  enum class Mode { queue, rules, replay };

  Mode mode_ = Mode::queue;
  std::deque<std::string> queue_;
  std::vector<Rule> rules_;
  std::optional<std::string> fallback_;
  std::unordered_map<std::string, std::string> replay_log_;
  // behind unique_ptr so the named constructors can return by value
  mutable std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
  int calls_ = 0;
};

/// Backend driven by an arbitrary function; the workhorse for unit tests that
/// need input-dependent scripted behavior.
class CallbackBackend : public Backend {
 public:
  using Fn = std::function<std::string(const std::vector<ChatMessage>&)>;

  explicit CallbackBackend(Fn fn) : fn_(std::move(fn)) {}

  std::string complete(const std::vector<ChatMessage>& messages, const BackendConfig&) override {
    std::lock_guard<std::mutex> lock(mutex_);
    ++calls_;
    return fn_(messages);
  }

  int calls() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return calls_;
  }

 private:
  Fn fn_;
  mutable std::mutex mutex_;
  int calls_ = 0;
};

/// Wraps another backend and records fingerprint -> output pairs that a
/// replay-mode ScriptedBackend can consume later.
class RecordingBackend : public Backend {
 public:
  explicit RecordingBackend(Backend& inner) : inner_(&inner) {}

  std::string complete(const std::vector<ChatMessage>& messages,
                       const BackendConfig& config) override {
    std::string out = inner_->complete(messages, config);
    std::lock_guard<std::mutex> lock(mutex_);
    log_[message_fingerprint(messages)] = out;
    return out;
  }

  std::unordered_map<std::string, std::string> log() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return log_;
  }

 private:
  Backend* inner_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::string> log_;
};

// --- JSON (de)serialization of messages, shared by transcripts and SFT files ----

inline nlohmann::json part_to_json(const Part& p) {
  if (const auto* t = std::get_if<TextPart>(&p)) {
    return nlohmann::json{{"type", "text"}, {"text", t->text}};
  }
  return nlohmann::json{{"type", "image"}, {"image", std::get<ImagePart>(p).image_ref}};
}

inline Part part_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw Error(Errc::schema_error, "message part must be an object with a \"type\"");
  }
  std::string type = j["type"].get<std::string>();
  if (type == "text") {
    if (!j.contains("text") || !j["text"].is_string()) {
      throw Error(Errc::schema_error, "text part missing \"text\"");
    }
    return TextPart{j["text"].get<std::string>()};
  }
  if (type == "image") {
    if (!j.contains("image") || !j["image"].is_string()) {
      throw Error(Errc::schema_error, "image part missing \"image\"");
    }
    return ImagePart{j["image"].get<std::string>()};
  }
  throw Error(Errc::schema_error, "unknown message part type \"" + type + "\"");
}

inline nlohmann::json message_to_json(const ChatMessage& m) {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : m.parts) parts.push_back(part_to_json(p));
  return nlohmann::json{{"role", role_name(m.role)}, {"content", parts}};
}

inline ChatMessage message_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("role") || !j["role"].is_string() || !j.contains("content")) {
    throw Error(Errc::schema_error, "message must have \"role\" and \"content\"");
  }
  auto role = role_from_name(j["role"].get<std::string>());
  if (!role) throw Error(Errc::schema_error, "unknown role \"" + j["role"].get<std::string>() + "\"");
  ChatMessage m;
  m.role = *role;
  if (!j["content"].is_array() || j["content"].empty()) {
    throw Error(Errc::schema_error, "message content must be a nonempty array of parts");
  }
  for (const auto& p : j["content"]) m.parts.push_back(part_from_json(p));
  return m;
}

} // namespace lookback
