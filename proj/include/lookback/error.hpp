#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lookback {

/// Every failure the library reports carries one of these codes so callers
/// can branch on the kind of error without string matching.
enum class Errc {
  // turn grammar
  missing_think_block,
  missing_tool_use_block,
  malformed_action_json,
  unknown_action_kind,
  duplicate_block,
  // action space
  platform_mismatch,
  // backend
  transport,
  timeout,
  bad_response_shape,
  image_unresolvable,
  script_exhausted,
  // memory
  empty_caption,
  step_order_violation,
  gap_or_duplicate_step,
  missing_memory_cache,
  // planner
  invalid_retrieve_index,
  budget_exhausted,
  trajectory_malformed,
  // data pipeline
  stage_parse_failure,
  empty_input,
  empty_side,
  empty_synthesis,
  // generic
  invalid_argument,
  io_error,
  schema_error,
  config_error,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::missing_think_block: return "MissingThinkBlock";
    case Errc::missing_tool_use_block: return "MissingToolUseBlock";
    case Errc::malformed_action_json: return "MalformedActionJson";
    case Errc::unknown_action_kind: return "UnknownActionKind";
    case Errc::duplicate_block: return "DuplicateBlock";
    case Errc::platform_mismatch: return "PlatformMismatch";
    case Errc::transport: return "Transport";
    case Errc::timeout: return "Timeout";
    case Errc::bad_response_shape: return "BadResponseShape";
    case Errc::image_unresolvable: return "ImageUnresolvable";
    case Errc::script_exhausted: return "ScriptExhausted";
    case Errc::empty_caption: return "EmptyCaption";
    case Errc::step_order_violation: return "StepOrderViolation";
    case Errc::gap_or_duplicate_step: return "GapOrDuplicateStep";
    case Errc::missing_memory_cache: return "MissingMemoryCache";
    case Errc::invalid_retrieve_index: return "InvalidRetrieveIndex";
    case Errc::budget_exhausted: return "BudgetExhausted";
    case Errc::trajectory_malformed: return "TrajectoryMalformed";
    case Errc::stage_parse_failure: return "StageParseFailure";
    case Errc::empty_input: return "EmptyInput";
    case Errc::empty_side: return "EmptySide";
    case Errc::empty_synthesis: return "EmptySynthesis";
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::io_error: return "IoError";
    case Errc::schema_error: return "SchemaError";
    case Errc::config_error: return "ConfigError";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

  // Optional numeric context. Which fields are meaningful depends on the code:
  //   malformed_action_json -> offset (byte position in the source text)
  //   invalid_retrieve_index -> index (requested j), bound (current step i)
  //   transport -> index (HTTP status, when one was received)
  //   stage_parse_failure -> index (stage number 1..4)
  Error& with_offset(std::size_t off) { offset_ = off; return *this; }
  Error& with_index(std::int64_t idx) { index_ = idx; return *this; }
  Error& with_bound(std::int64_t b) { bound_ = b; return *this; }

  std::size_t offset() const noexcept { return offset_; }
  std::int64_t index() const noexcept { return index_; }
  std::int64_t bound() const noexcept { return bound_; }

 private:
  Errc code_;
  std::size_t offset_ = static_cast<std::size_t>(-1);
  std::int64_t index_ = -1;
  std::int64_t bound_ = -1;
};

} // namespace lookback
