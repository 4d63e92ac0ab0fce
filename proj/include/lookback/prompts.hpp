#pragma once

#include <string>
#include <vector>

#include "lookback/backend.hpp"
#include "lookback/trajectory.hpp"

namespace lookback::prompts {

// Every template in this file is fixed text. The planner system prompt is the
// single prompt shared across runs and is hash-pinned into every report.

inline const std::string& planner_system() {
  static const std::string text =
      "You are an agent operating a device through its graphical interface. At each step you "
      "receive the task goal, a numbered memory of previous steps, and the current screenshot. "
      "Decide the single next step.\n"
      "\n"
      "Respond with exactly one reasoning block and one tool call:\n"
      "<think>your reasoning</think>\n"
      "<tool_use>{\"action\": ...}</tool_use>\n"
      "\n"
      "Available actions (JSON, coordinates normalized to [0,1]):\n"
      "  {\"action\":\"click\",\"coordinate\":[x,y]}\n"
      "  {\"action\":\"type\",\"text\":\"...\"}\n"
      "  {\"action\":\"scroll\",\"direction\":\"up|down|left|right\",\"magnitude\":0.5}\n"
      "  {\"action\":\"drag\",\"from\":[x,y],\"to\":[x,y]}\n"
      "  {\"action\":\"wait\",\"duration_ms\":500}\n"
      "  {\"action\":\"finished\",\"answer\":\"...\"}\n"
      "Mobile only: {\"action\":\"long_press\",\"coordinate\":[x,y]}, "
      "{\"action\":\"open_app\",\"name\":\"...\"}, {\"action\":\"press_home\"}, "
      "{\"action\":\"press_back\"}\n"
      "Web only: {\"action\":\"hotkey\",\"keys\":[\"ctrl\",\"c\"]}, "
      "{\"action\":\"left_double\",\"coordinate\":[x,y]}, "
      "{\"action\":\"right_single\",\"coordinate\":[x,y]}\n"
      "\n"
      "If a detail from an earlier screen would change your decision, you may look back before "
      "acting: {\"action\":\"retrieve\",\"step\":j} fetches the screenshot of past step j "
      "(j must be smaller than the current step). After it is shown to you, respond again with "
      "a GUI action.";
  return text;
}

inline const std::string& captioner_system() {
  static const std::string text =
      "You caption device screenshots for a navigation agent. Describe only what is on screen "
      "and relevant to the task: visible text, widget labels, messages, and enabled or disabled "
      "states. At most three sentences. No speculation about future steps.";
  return text;
}

inline const std::string& validator_system() {
  static const std::string text =
      "You verify interface actions. Given an action and the screenshots from before and after "
      "it, state in one sentence what the action was meant to do, then state whether the "
      "expected effect is visible in the second screenshot.";
  return text;
}

inline const std::string& teacher_system() {
  static const std::string text =
      "You are an expert demonstrator for a device-navigation agent. You will work through one "
      "decision step in four stages, answering one stage at a time.";
  return text;
}

inline const std::string& synthesizer_system() {
  static const std::string text =
      "You rewrite a four-stage analysis of a navigation decision into one coherent first-person "
      "reasoning paragraph. Keep every load-bearing observation, drop the stage structure, and "
      "do not mention stages or being an assistant.";
  return text;
}

// --- summary agent ---------------------------------------------------------------

/// Captioner input: the goal appears exactly once and exactly one image part.
inline std::vector<ChatMessage> captioner_messages(const Observation& obs, const Goal& goal) {
  ChatMessage user;
  user.role = Role::user;
  user.parts.push_back(TextPart{"Task goal: " + goal.text +
                                "\n\nCaption the screenshot below. Focus on details that matter "
                                "for the goal."});
  user.parts.push_back(ImagePart{obs.image_ref});
  return {ChatMessage::text(Role::system, captioner_system()), std::move(user)};
}

/// Validator input: the action in natural form plus exactly two image parts,
/// before then after.
inline std::vector<ChatMessage> validator_messages(const Action& action, const Observation& pre,
                                                   const Observation& post) {
  ChatMessage user;
  user.role = Role::user;
  user.parts.push_back(TextPart{"The agent chose to " + describe_action(action) +
                                ".\n\nScreenshot before the action:"});
  user.parts.push_back(ImagePart{pre.image_ref});
  user.parts.push_back(TextPart{"Screenshot after the action:"});
  user.parts.push_back(ImagePart{post.image_ref});
  return {ChatMessage::text(Role::system, validator_system()), std::move(user)};
}

// --- planner ---------------------------------------------------------------------

/// User message for one planning step: goal, rendered memory, current screen.
inline ChatMessage planner_user_message(const Goal& goal, const std::string& memory_render,
                                        const Observation& current) {
  ChatMessage user;
  user.role = Role::user;
  user.parts.push_back(TextPart{"Goal: " + goal.text + "\n\nMemory of previous steps:\n" +
                                memory_render + "\n\nCurrent screenshot (step " +
                                std::to_string(current.step_index) + "):"});
  user.parts.push_back(ImagePart{current.image_ref});
  return user;
}

inline std::string retrieved_label(std::int64_t step) {
  return "Observation from step " + std::to_string(step) + ":";
}

/// Tool message injecting a retrieved past screenshot, labeled with its step.
inline ChatMessage retrieved_observation_message(const Observation& obs) {
  ChatMessage tool;
  tool.role = Role::tool;
  tool.parts.push_back(TextPart{retrieved_label(obs.step_index)});
  tool.parts.push_back(ImagePart{obs.image_ref});
  return tool;
}

inline ChatMessage budget_exhausted_message() {
  return ChatMessage::text(Role::tool,
                           "The retrieval budget for this step is exhausted. Respond with a "
                           "single GUI action now; retrieve is no longer available.");
}

// --- teacher stages ----------------------------------------------------------------

inline ChatMessage teacher_stage1_message(const Goal& goal, const std::string& memory_render,
                                          const Observation& current) {
  ChatMessage user;
  user.role = Role::user;
  user.parts.push_back(TextPart{
      "Task goal: " + goal.text + "\n\nMemory of previous steps:\n" + memory_render +
      "\n\nCurrent screenshot (step " + std::to_string(current.step_index) + "):"});
  user.parts.push_back(ImagePart{current.image_ref});
  user.parts.push_back(TextPart{
      "\nStage 1. Review the memory and state what has been accomplished toward the goal so far "
      "and what remains."});
  return user;
}

inline ChatMessage teacher_stage2_message() {
  return ChatMessage::text(
      Role::user,
      "Stage 2. Propose several plausible next actions based on the current screenshot. List "
      "each with a short justification; do not commit to one yet.");
}

inline ChatMessage teacher_stage3_message() {
  return ChatMessage::text(
      Role::user,
      "Stage 3. For each proposal, state how confident you are and whether a detail from an "
      "earlier screen would change your choice. If you need to re-inspect a past step, finish "
      "with a line of exactly `RETRIEVE <step>`; otherwise finish with a line of exactly "
      "`NO RETRIEVAL`.");
}

inline ChatMessage teacher_stage4_message(const Observation* retrieved) {
  ChatMessage user;
  user.role = Role::user;
  if (retrieved != nullptr) {
    user.parts.push_back(TextPart{retrieved_label(retrieved->step_index)});
    user.parts.push_back(ImagePart{retrieved->image_ref});
  }
  user.parts.push_back(TextPart{
      "Stage 4. Commit to the single next action. Respond in exactly this form:\n"
      "<think>one-sentence justification</think>\n"
      "<tool_use>{\"action\": ...}</tool_use>"});
  return user;
}

// --- reasoning synthesis --------------------------------------------------------------

inline std::vector<ChatMessage> synthesizer_messages(const std::string& history_revision,
                                                     const std::string& candidate_proposals,
                                                     const std::string& confidence_evaluation,
                                                     const std::string& action_prediction) {
  std::string body = "Combine the four stage answers below into one first-person reasoning "
                     "paragraph that ends with the decision.\n";
  body += "\n[Progress review]\n" + history_revision;
  body += "\n\n[Candidate actions]\n" + candidate_proposals;
  body += "\n\n[Confidence and look-back]\n" + confidence_evaluation;
  body += "\n\n[Final decision]\n" + action_prediction;
  return {ChatMessage::text(Role::system, synthesizer_system()),
          ChatMessage::text(Role::user, body)};
}

/// Think text of the closing assistant turn in a retrieval training sample.
/// The synthesized reasoning lives in the first turn; this one only has to
/// connect the retrieved screenshot to the final action.
inline std::string post_retrieval_think(std::int64_t retrieved_step) {
  return "The screenshot retrieved from step " + std::to_string(retrieved_step) +
         " shows the detail I needed, so I can commit to the action now.";
}

} // namespace lookback::prompts
