// SPDX-License-Identifier: Apache-2.0
#include "taskbot/session.hpp"

#include "taskbot/errors.hpp"

namespace taskbot {

using nlohmann::json;

std::map<std::string, std::string> belief_of(const SlotSchema& schema, const TurnDecision& decision) {
  std::map<std::string, std::string> belief;
  for (std::size_t m = 0; m < schema.size() && m < decision.slots.size(); ++m) {
    belief[schema[m].name] = schema[m].candidates.at(decision.slots[m]);
  }
  return belief;
}

Rendered render_response(const Preprocessor& prep, const TurnDecision& decision, std::span<const double> entity_dist,
                         const KBResult* result) {
  Rendered r;
  const std::string& tmpl = prep.candidates.at(decision.response);
  const auto belief = belief_of(prep.schema, decision);
  if (is_api_call_text(tmpl)) {
    r.api_call = true;
    r.text = format_api_call(prep.schema, belief);
    return r;
  }
  const KBEntity* entity = nullptr;
  if (result != nullptr) {
    r.entity_rank = resolve_entity_rank(*result, entity_dist);
    if (r.entity_rank) entity = &result->entities[*r.entity_rank];
  }
  try {
    r.text = lexicalise(tmpl, prep.schema, belief, entity);
  } catch (const LexicalisationError& e) {
    r.failed = true;
    r.error = e.what();
    r.text = kFallbackResponse;
  }
  return r;
}

DialogRunner::DialogRunner(const InferenceBundle& bundle)
    : bundle_(bundle),
      api_template_(api_call_template(bundle.prep.schema)),
      h_(Shape{1, bundle.config.dialog_hidden}),
      c_(Shape{1, bundle.config.dialog_hidden}) {}

RunnerStep DialogRunner::step(const std::string& user_utterance) {
  const ModelConfig& config = bundle_.config;
  const Preprocessor& prep = bundle_.prep;
  Tape tape(false);
  const BoundModel m = bind(tape, bundle_.params);

  const std::vector<std::size_t> tokens = prep.vocab.encode(user_utterance);
  const std::vector<std::span<const std::size_t>> utterances = {tokens};
  StepInput in;
  in.utterance = bilstm_encode_any(m.embedding, m.utterance_fwd, m.utterance_bwd, utterances);
  RunnerStep s;
  s.kb_indicator = compute_kb_indicator(result_ ? &*result_ : nullptr, pointer_);
  in.kb_indicator = {static_cast<double>(s.kb_indicator)};
  in.feedback = {feedback_};
  const LstmState prev{tape.constant(h_), tape.constant(c_)};
  const TurnOutput out = dialog_step(config, m, prev, in);
  h_ = out.state.h.value();
  c_ = out.state.c.value();

  s.dist = distributions(out, 0);
  s.decision = decode_turn(s.dist);
  s.template_text = prep.candidates.at(s.decision.response);
  s.belief = belief_of(prep.schema, s.decision);
  const Rendered r = render_response(prep, s.decision, s.dist.entity, result_ ? &*result_ : nullptr);
  s.text = r.text;
  s.api_call = r.api_call;
  s.entity_rank = r.entity_rank;
  s.lexicalisation_failed = r.failed;
  s.error = r.error;

  if (s.api_call) {
    result_ = bundle_.kb.execute(make_api_call(prep.schema, s.belief), prep.max_entities);
    pointer_ = 0;
  } else if (s.entity_rank && !r.failed && s.template_text.find("<R_name>") != std::string::npos) {
    pointer_ = advance_pointer(pointer_, *s.entity_rank);
  }
  feedback_ = Feedback{s.decision.response, s.decision.slots};
  ++turns_;
  return s;
}

Session::Session(std::shared_ptr<const InferenceBundle> bundle) : bundle_(std::move(bundle)), runner_(*bundle_) {}

SessionReply Session::step(const std::string& user_utterance) {
  if (tokenize(user_utterance).empty()) throw ContractError("utterance must not be empty");
  std::lock_guard lock(mutex_);
  SessionReply reply;
  RunnerStep s = runner_.step(user_utterance);
  transcript_.emplace_back(user_utterance, s.text);
  if (s.api_call) {
    reply.api_call = s.text;
    last_api_call_ = s.text;
    reply.steps.push_back(s);
    s = runner_.step(kSilence);
    transcript_.emplace_back(kSilence, s.text);
  }
  reply.steps.push_back(s);
  reply.template_id = s.decision.response;
  reply.template_text = s.template_text;
  reply.fallback = s.lexicalisation_failed;
  reply.error = s.error;
  if (s.api_call) {
    // A second consecutive API call is not shown to the user.
    last_api_call_ = s.text;
    reply.fallback = true;
    reply.error = "model issued two API calls in a row";
    reply.response = kFallbackResponse;
  } else {
    reply.response = s.text;
  }
  last_ = s;
  last_reply_ = reply;
  reply.payload = state_json_locked(true, reply.api_call);
  last_reply_->payload = reply.payload;
  return reply;
}

json Session::state_json(bool with_response) const {
  std::lock_guard lock(mutex_);
  return state_json_locked(with_response, last_api_call_);
}

json Session::state_json_locked(bool with_response, const std::optional<std::string>& api_call) const {
  const SlotSchema& schema = bundle_->prep.schema;
  json belief = json::object();
  for (std::size_t m = 0; m < schema.size(); ++m) {
    json dist = json::object();
    for (std::size_t v = 0; v < schema[m].candidates.size(); ++v) {
      double p = 0.0;
      if (last_) {
        p = last_->dist.slots[m][v];
      } else if (schema[m].candidates[v] == kNone) {
        p = 1.0;
      }
      dist[schema[m].candidates[v]] = p;
    }
    belief[schema[m].name] = std::move(dist);
  }
  json kb_result = json::array();
  if (runner_.result()) {
    for (const auto& e : runner_.result()->entities) kb_result.push_back({{"name", e.name}, {"attrs", e.attributes}});
  }
  json out = {{"belief", belief},
              {"entity_pointer", last_ ? json(last_->dist.entity) : json::array()},
              {"kb_result", kb_result},
              {"api_call", api_call ? json(*api_call) : json(nullptr)},
              {"template_id", last_ ? json(last_->decision.response) : json(nullptr)},
              {"debug",
               {{"template", last_ ? json(last_->template_text) : json(nullptr)},
                {"kb_indicator", last_ ? last_->kb_indicator : 0},
                {"pointer", runner_.pointer()},
                {"fallback", last_reply_ ? last_reply_->fallback : false},
                {"error", last_reply_ && !last_reply_->error.empty() ? json(last_reply_->error) : json(nullptr)},
                {"turns", runner_.turns()}}}};
  if (with_response) out["response"] = last_reply_ ? json(last_reply_->response) : json(nullptr);
  return out;
}

std::vector<std::pair<std::string, std::string>> Session::transcript() const {
  std::lock_guard lock(mutex_);
  return transcript_;
}

}  // namespace taskbot
