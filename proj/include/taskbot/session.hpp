// SPDX-License-Identifier: Apache-2.0
//
// Inference: a dialog runner that steps a trained model turn by turn,
// executing its API calls against the KB and lexicalising its responses, and
// the per-user session built on it.
#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "taskbot/corpus.hpp"
#include "taskbot/kb.hpp"
#include "taskbot/model.hpp"

namespace taskbot {

/// Frozen model plus everything needed to talk to it. Shared read-only by all
/// sessions.
struct InferenceBundle {
  ModelConfig config;
  ModelParams params;
  Preprocessor prep;
  KnowledgeBase kb;
  nlohmann::json info;  // checkpoint description for /api/meta
};

struct RunnerStep {
  TurnDistributions dist;
  TurnDecision decision;
  int kb_indicator = 0;
  std::string template_text;
  std::string text;
  bool api_call = false;
  std::optional<std::size_t> entity_rank;
  bool lexicalisation_failed = false;
  std::string error;
  std::map<std::string, std::string> belief;  // argmax value per slot
};

/// Response used when a template cannot be filled.
inline constexpr const char* kFallbackResponse = "sorry , i am not able to answer that right now .";

/// Slot name → argmax candidate.
std::map<std::string, std::string> belief_of(const SlotSchema& schema, const TurnDecision& decision);

struct Rendered {
  std::string text;
  bool api_call = false;
  std::optional<std::size_t> entity_rank;
  bool failed = false;
  std::string error;
};

/// Lexicalises the decided template: the API-call template becomes the
/// formatted call, placeholders are filled from the belief and from the
/// entity the pointer selects in `result`. Failures yield kFallbackResponse.
Rendered render_response(const Preprocessor& prep, const TurnDecision& decision, std::span<const double> entity_dist,
                         const KBResult* result);

/// One model turn per call; no gradients, dropout off.
class DialogRunner {
 public:
  explicit DialogRunner(const InferenceBundle& bundle);

  RunnerStep step(const std::string& user_utterance);

  const std::optional<KBResult>& result() const { return result_; }
  std::size_t pointer() const { return pointer_; }
  std::size_t turns() const { return turns_; }

 private:
  const InferenceBundle& bundle_;
  std::string api_template_;
  Tensor h_;
  Tensor c_;
  Feedback feedback_;
  std::optional<KBResult> result_;
  std::size_t pointer_ = 0;
  std::size_t turns_ = 0;
};

/// Reply to one user message. When the model issues an API call, the call is
/// executed and one more internal step (user "<silence>") produces the reply.
struct SessionReply {
  std::string response;
  std::optional<std::string> api_call;
  std::size_t template_id = 0;
  std::string template_text;
  bool fallback = false;
  std::string error;
  std::vector<RunnerStep> steps;
  /// Message payload: state_json(true) with this message's api_call.
  nlohmann::json payload;
};

class Session {
 public:
  explicit Session(std::shared_ptr<const InferenceBundle> bundle);

  /// Throws ContractError for an empty utterance.
  SessionReply step(const std::string& user_utterance);

  /// {belief: {slot: {value: prob}}, entity_pointer, kb_result, api_call,
  /// template_id, debug}; with `with_response` also {response}.
  nlohmann::json state_json(bool with_response = false) const;

  std::vector<std::pair<std::string, std::string>> transcript() const;

 private:
  nlohmann::json state_json_locked(bool with_response, const std::optional<std::string>& api_call) const;

  std::shared_ptr<const InferenceBundle> bundle_;
  mutable std::mutex mutex_;
  DialogRunner runner_;
  std::optional<RunnerStep> last_;
  std::optional<std::string> last_api_call_;
  std::optional<SessionReply> last_reply_;
  std::vector<std::pair<std::string, std::string>> transcript_;
};

}  // namespace taskbot
