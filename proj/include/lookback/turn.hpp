#pragma once

#include <string>
#include <string_view>

#include "lookback/action.hpp"

namespace lookback {

// One model output: free-text reasoning in <think></think> plus exactly one
// tool call in <tool_use></tool_use>. `raw` keeps the verbatim source text for
// provenance and is excluded from equality.
struct AgentTurn {
  std::string think;
  Action call;
  std::string raw;

  friend bool operator==(const AgentTurn& a, const AgentTurn& b) {
    return a.think == b.think && a.call == b.call;
  }
};

namespace detail {

struct TagSpan {
  std::size_t content_begin = 0;
  std::size_t content_end = 0;
};

inline std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string_view::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

inline TagSpan find_block(std::string_view text, std::string_view open, std::string_view close,
                          Errc missing_code, const char* block_name) {
  if (count_occurrences(text, open) > 1) {
    throw Error(Errc::duplicate_block, std::string("more than one ") + block_name + " block");
  }
  std::size_t o = text.find(open);
  if (o == std::string_view::npos) {
    throw Error(missing_code, std::string("no ") + block_name + " block");
  }
  std::size_t c = text.find(close, o + open.size());
  if (c == std::string_view::npos) {
    throw Error(missing_code, std::string(block_name) + " block is not closed");
  }
  return TagSpan{o + open.size(), c};
}

} // namespace detail

/// Parses one agent turn. Only the first think/tool_use pair is honored;
/// duplicate opening tags are a hard error and anything outside the two blocks
/// is ignored.
inline AgentTurn parse_turn(std::string_view text) {
  auto think_span =
      detail::find_block(text, "<think>", "</think>", Errc::missing_think_block, "think");
  auto tool_span =
      detail::find_block(text, "<tool_use>", "</tool_use>", Errc::missing_tool_use_block, "tool_use");

  std::string think(text.substr(think_span.content_begin,
                                think_span.content_end - think_span.content_begin));
  std::string payload =
      trim(text.substr(tool_span.content_begin, tool_span.content_end - tool_span.content_begin));

  json obj = json::parse(payload, nullptr, false);
  if (obj.is_discarded()) {
    // Re-parse with exceptions to recover the byte offset of the failure,
    // reported relative to the full turn text.
    std::size_t offset = tool_span.content_begin;
    std::string message = "tool_use payload is not valid JSON";
    try {
      json reparsed = json::parse(payload);
      (void)reparsed;
    } catch (const json::parse_error& e) {
      offset = tool_span.content_begin + (e.byte > 0 ? e.byte - 1 : 0);
      message = e.what();
    }
    throw Error(Errc::malformed_action_json, message).with_offset(offset);
  }
  if (!obj.is_object()) {
    throw Error(Errc::malformed_action_json, "tool_use payload is not a JSON object")
        .with_offset(tool_span.content_begin);
  }

  AgentTurn turn;
  turn.think = std::move(think);
  try {
    turn.call = action_from_json(obj);
  } catch (Error& e) {
    if (e.offset() == static_cast<std::size_t>(-1)) e.with_offset(tool_span.content_begin);
    throw;
  }
  turn.raw = std::string(text);
  return turn;
}

/// Canonical rendering: think block, newline, tool_use block with the action
/// in action-v1 canonical JSON. parse_turn(serialize_turn(t)) == t for every
/// valid turn.
inline std::string serialize_turn(const AgentTurn& turn) {
  std::string out;
  out.reserve(turn.think.size() + 64);
  out += "<think>";
  out += turn.think;
  out += "</think>\n<tool_use>";
  out += canonical_action_json(turn.call);
  out += "</tool_use>";
  return out;
}

inline AgentTurn make_turn(std::string think, Action call) {
  AgentTurn t;
  t.think = std::move(think);
  t.call = std::move(call);
  t.raw = serialize_turn(t);
  return t;
}

} // namespace lookback
