// SPDX-License-Identifier: Apache-2.0
#include "taskbot/model.hpp"

#include <algorithm>
#include <set>

#include "taskbot/errors.hpp"

namespace taskbot {

using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Base: return "base";
    case Variant::FeedResponse: return "feed_response";
    case Variant::FeedSlots: return "feed_slots";
    case Variant::FeedBoth: return "feed_both";
  }
  return "base";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown model variant '" + name + "' (expected base, feed_response, feed_slots, feed_both)");
}

SlotSpec SlotSpec::from_domain(std::string name, std::vector<std::string> domain_values) {
  SlotSpec s{std::move(name), std::move(domain_values)};
  s.candidates.emplace_back(kDontCare);
  s.candidates.emplace_back(kNone);
  return s;
}

std::optional<std::size_t> SlotSpec::index_of(const std::string& value) const {
  auto it = std::find(candidates.begin(), candidates.end(), value);
  if (it == candidates.end()) return std::nullopt;
  return static_cast<std::size_t>(it - candidates.begin());
}

std::size_t SlotSpec::none_index() const {
  auto i = index_of(kNone);
  if (!i) throw ConfigError("slot '" + name + "' lacks the 'none' candidate");
  return *i;
}

std::size_t SlotSpec::dontcare_index() const {
  auto i = index_of(kDontCare);
  if (!i) throw ConfigError("slot '" + name + "' lacks the 'dontcare' candidate");
  return *i;
}

std::size_t ModelConfig::slot_feedback_width() const {
  std::size_t w = 0;
  for (const auto& s : slots) w += s.candidates.size();
  return w;
}

std::size_t ModelConfig::dialog_input_dim() const {
  std::size_t d = 2 * utterance_hidden + 1;
  if (feeds_response(variant)) d += response_count;
  if (feeds_slots(variant)) d += slot_feedback_width();
  return d;
}

void ModelConfig::validate() const {
  if (slots.empty()) throw ConfigError("model needs at least one slot");
  for (const auto& s : slots) {
    if (s.candidates.empty()) throw ConfigError("slot '" + s.name + "' has an empty candidate list");
    std::set<std::string> unique(s.candidates.begin(), s.candidates.end());
    if (unique.size() != s.candidates.size()) throw ConfigError("slot '" + s.name + "' has duplicate candidates");
    s.none_index();
    s.dontcare_index();
  }
  if (response_count == 0) throw ConfigError("response candidate list is empty");
  if (vocab_size < 2) throw ConfigError("vocabulary must contain at least PAD and UNK");
  if (embedding_dim == 0 || utterance_hidden == 0 || dialog_hidden == 0) throw ConfigError("zero layer size");
  if (!slot_weights.empty() && slot_weights.size() != slots.size()) {
    throw ConfigError("slot_weights has " + std::to_string(slot_weights.size()) + " entries for " +
                      std::to_string(slots.size()) + " slots");
  }
}

json to_json(const ModelConfig& c) {
  json slots = json::array();
  for (const auto& s : c.slots) slots.push_back({{"name", s.name}, {"candidates", s.candidates}});
  return json{{"slots", slots},
              {"response_count", c.response_count},
              {"max_entities", c.max_entities},
              {"vocab_size", c.vocab_size},
              {"embedding_dim", c.embedding_dim},
              {"utterance_hidden", c.utterance_hidden},
              {"dialog_hidden", c.dialog_hidden},
              {"head_hidden", c.head_hidden},
              {"variant", to_string(c.variant)},
              {"slot_weights", c.slot_weights},
              {"entity_weight", c.entity_weight},
              {"response_weight", c.response_weight},
              {"init_range", c.init_range},
              {"embedding_init_range", c.embedding_init_range},
              {"forget_bias", c.forget_bias},
              {"zero_init_heads", c.zero_init_heads}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  for (const auto& s : j.at("slots")) {
    c.slots.push_back(SlotSpec{s.at("name").get<std::string>(), s.at("candidates").get<std::vector<std::string>>()});
  }
  c.response_count = j.at("response_count").get<std::size_t>();
  c.max_entities = j.at("max_entities").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.utterance_hidden = j.at("utterance_hidden").get<std::size_t>();
  c.dialog_hidden = j.at("dialog_hidden").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::vector<std::size_t>>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.slot_weights = j.value("slot_weights", std::vector<double>{});
  c.entity_weight = j.value("entity_weight", 1.0);
  c.response_weight = j.value("response_weight", 1.0);
  c.init_range = j.value("init_range", 0.08);
  c.embedding_init_range = j.value("embedding_init_range", 0.25);
  c.forget_bias = j.value("forget_bias", 1.0);
  c.zero_init_heads = j.value("zero_init_heads", false);
  c.validate();
  return c;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("embedding", &embedding.weight);
  auto add_lstm = [&](const std::string& prefix, LstmParams& p) {
    out.emplace_back(prefix + ".w_input", &p.w_input);
    out.emplace_back(prefix + ".w_hidden", &p.w_hidden);
    out.emplace_back(prefix + ".bias", &p.bias);
  };
  auto add_mlp = [&](const std::string& prefix, MlpHead& h) {
    for (std::size_t i = 0; i < h.weights.size(); ++i) {
      out.emplace_back(prefix + ".w" + std::to_string(i), &h.weights[i]);
      out.emplace_back(prefix + ".b" + std::to_string(i), &h.biases[i]);
    }
  };
  add_lstm("utterance_fwd", utterance_fwd);
  add_lstm("utterance_bwd", utterance_bwd);
  add_lstm("dialog", dialog);
  for (std::size_t m = 0; m < slot_heads.size(); ++m) add_mlp("slot" + std::to_string(m), slot_heads[m]);
  add_mlp("entity", entity_head);
  add_mlp("response", response_head);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  auto mutable_named = const_cast<ModelParams*>(this)->named();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mutable_named.size());
  for (auto& [name, t] : mutable_named) out.emplace_back(std::move(name), t);
  return out;
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void ModelParams::set_requires_grad(bool on) {
  for (Tensor* t : tensors()) t->set_requires_grad(on);
}

void ModelParams::zero_grad() {
  for (Tensor* t : tensors()) t->zero_grad();
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams p;
  p.embedding = EmbeddingTable::init(config.vocab_size, config.embedding_dim, rng, config.embedding_init_range);
  p.utterance_fwd =
      LstmParams::init(config.embedding_dim, config.utterance_hidden, rng, config.init_range, config.forget_bias);
  p.utterance_bwd =
      LstmParams::init(config.embedding_dim, config.utterance_hidden, rng, config.init_range, config.forget_bias);
  p.dialog =
      LstmParams::init(config.dialog_input_dim(), config.dialog_hidden, rng, config.init_range, config.forget_bias);
  for (const auto& slot : config.slots) {
    p.slot_heads.push_back(MlpHead::init(config.dialog_hidden, config.head_hidden, slot.candidates.size(), rng,
                                         config.init_range, config.zero_init_heads));
  }
  p.entity_head = MlpHead::init(config.dialog_hidden, config.head_hidden, config.entity_arity(), rng,
                                config.init_range, config.zero_init_heads);
  p.response_head = MlpHead::init(config.dialog_hidden, config.head_hidden, config.response_count, rng,
                                  config.init_range, config.zero_init_heads);
  return p;
}

namespace {

template <typename P>
BoundModel bind_model(Tape& tape, P& p) {
  BoundModel b;
  b.embedding = tape.leaf(p.embedding.weight);
  b.utterance_fwd = bind(tape, p.utterance_fwd);
  b.utterance_bwd = bind(tape, p.utterance_bwd);
  b.dialog = bind(tape, p.dialog);
  for (auto& h : p.slot_heads) b.slot_heads.push_back(bind(tape, h));
  b.entity_head = bind(tape, p.entity_head);
  b.response_head = bind(tape, p.response_head);
  return b;
}

Tensor feedback_block(const ModelConfig& config, const std::vector<Feedback>& feedback, bool response) {
  const std::size_t batch = feedback.size();
  const std::size_t width = response ? config.response_count : config.slot_feedback_width();
  Tensor out(Shape{batch, width});
  for (std::size_t i = 0; i < batch; ++i) {
    const Feedback& f = feedback[i];
    if (response) {
      if (!f.response) continue;
      if (*f.response >= config.response_count) {
        throw ConfigError("response feedback " + std::to_string(*f.response) + " out of range");
      }
      out.at(i, *f.response) = 1.0;
      continue;
    }
    if (f.slots.empty()) continue;
    if (f.slots.size() != config.slots.size()) {
      throw ConfigError("slot feedback has " + std::to_string(f.slots.size()) + " labels for " +
                        std::to_string(config.slots.size()) + " slots");
    }
    std::size_t offset = 0;
    for (std::size_t m = 0; m < config.slots.size(); ++m) {
      const std::size_t n = config.slots[m].candidates.size();
      if (f.slots[m] >= n) throw ConfigError("slot feedback label out of range for " + config.slots[m].name);
      out.at(i, offset + f.slots[m]) = 1.0;
      offset += n;
    }
  }
  return out;
}

}  // namespace

BoundModel bind(Tape& tape, ModelParams& params) { return bind_model(tape, params); }
BoundModel bind(Tape& tape, const ModelParams& params) { return bind_model(tape, params); }

LstmState initial_state(Tape& tape, const ModelConfig& config, std::size_t batch) {
  return LstmState{tape.constant(Tensor(Shape{batch, config.dialog_hidden})),
                   tape.constant(Tensor(Shape{batch, config.dialog_hidden}))};
}

TurnOutput dialog_step(const ModelConfig& config, const BoundModel& model, const LstmState& prev,
                       const StepInput& input, const DropoutSpec& drop) {
  Tape& tape = *input.utterance.tape;
  const std::size_t batch = input.utterance.value().rows();
  if (input.utterance.value().cols() != 2 * config.utterance_hidden) {
    throw DimensionError("dialog_step: utterance encoding " + shape_str(input.utterance.value().shape()) +
                         " does not match 2x" + std::to_string(config.utterance_hidden));
  }
  if (input.kb_indicator.size() != batch) throw DimensionError("dialog_step: KB indicator count != batch size");
  const bool needs_feedback = feeds_response(config.variant) || feeds_slots(config.variant);
  if (needs_feedback && input.feedback.size() != batch) {
    throw ConfigError("variant " + to_string(config.variant) + " requires feedback for every dialog in the batch");
  }

  Rng fallback(0);
  Rng& rng = drop.rng != nullptr ? *drop.rng : fallback;
  std::vector<Var> parts;
  parts.push_back(dropout(input.utterance, drop.rate, drop.training, rng));
  parts.push_back(tape.constant(Tensor(Shape{batch, 1}, input.kb_indicator)));
  if (feeds_response(config.variant)) parts.push_back(tape.constant(feedback_block(config, input.feedback, true)));
  if (feeds_slots(config.variant)) parts.push_back(tape.constant(feedback_block(config, input.feedback, false)));

  TurnOutput out;
  out.state = lstm_step(model.dialog, concat_cols(parts), prev);
  Var s = dropout(out.state.h, drop.rate, drop.training, rng);
  for (const auto& head : model.slot_heads) out.slot_logits.push_back(mlp_logits(head, s));
  out.entity_logits = mlp_logits(model.entity_head, s);
  out.response_logits = mlp_logits(model.response_head, s);
  return out;
}

TurnDistributions distributions(const TurnOutput& out, std::size_t row) {
  auto row_softmax = [row](Var logits) {
    const Tensor& v = logits.value();
    const std::size_t cols = v.cols();
    std::vector<double> r(v.data().begin() + static_cast<std::ptrdiff_t>(row * cols),
                          v.data().begin() + static_cast<std::ptrdiff_t>((row + 1) * cols));
    auto p = softmax(Tensor::vector(std::move(r)));
    return std::vector<double>(p.data().begin(), p.data().end());
  };
  TurnDistributions d;
  for (Var l : out.slot_logits) d.slots.push_back(row_softmax(l));
  d.entity = row_softmax(out.entity_logits);
  d.response = row_softmax(out.response_logits);
  return d;
}

TurnDecision decode_turn(const TurnDistributions& dist) {
  TurnDecision d;
  for (const auto& s : dist.slots) d.slots.push_back(argmax(s));
  d.entity = argmax(dist.entity);
  d.response = argmax(dist.response);
  return d;
}

Feedback teacher_feedback(const EncodedDialog& dialog, std::size_t k) {
  Feedback f;
  if (k == 0) return f;
  const TurnLabels& prev = dialog.labels.at(k - 1);
  if (prev.response >= 0) f.response = static_cast<std::size_t>(prev.response);
  for (long s : prev.slots) f.slots.push_back(static_cast<std::size_t>(s));
  return f;
}

std::vector<TurnOutput> forward_teacher_forced(const ModelConfig& config, const BoundModel& model,
                                               std::span<const EncodedDialog* const> batch,
                                               const DropoutSpec& drop) {
  if (batch.empty()) throw ContractError("forward: empty batch");
  Tape& tape = *model.embedding.tape;
  std::size_t max_turns = 0;
  std::vector<std::span<const std::size_t>> utterances;
  std::vector<std::size_t> first_row;
  for (const EncodedDialog* d : batch) {
    if (d->utterances.empty()) throw ContractError("forward: dialog with zero turns");
    if (d->labels.size() != d->utterances.size()) {
      throw DataError("dialog has " + std::to_string(d->utterances.size()) + " turns but " +
                      std::to_string(d->labels.size()) + " label sets");
    }
    first_row.push_back(utterances.size());
    for (const auto& u : d->utterances) utterances.emplace_back(u);
    max_turns = std::max(max_turns, d->utterances.size());
  }
  Var encoded = bilstm_encode_any(model.embedding, model.utterance_fwd, model.utterance_bwd, utterances);

  std::vector<TurnOutput> outputs;
  LstmState state = initial_state(tape, config, batch.size());
  for (std::size_t k = 0; k < max_turns; ++k) {
    std::vector<std::size_t> rows;
    StepInput in;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const EncodedDialog& d = *batch[i];
      const bool real = k < d.utterances.size();
      const std::size_t turn = real ? k : d.utterances.size() - 1;
      rows.push_back(first_row[i] + turn);
      in.kb_indicator.push_back(real ? d.labels[k].kb_indicator : 0.0);
      in.feedback.push_back(teacher_feedback(d, turn));
    }
    in.utterance = gather_rows(encoded, std::move(rows));
    outputs.push_back(dialog_step(config, model, state, in, drop));
    state = outputs.back().state;
  }
  return outputs;
}

Var joint_loss(const ModelConfig& config, const std::vector<TurnOutput>& outputs,
               std::span<const EncodedDialog* const> batch) {
  if (outputs.empty()) throw ContractError("joint_loss: no turns");
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const std::size_t slots = config.slots.size();
  Var total;
  auto accumulate = [&](Var term) { total = total.valid() ? add(total, term) : term; };

  for (std::size_t k = 0; k < outputs.size(); ++k) {
    std::vector<std::vector<long>> slot_labels(slots);
    std::vector<long> entity_labels;
    std::vector<long> response_labels;
    std::vector<double> mask;
    for (const EncodedDialog* d : batch) {
      const bool real = k < d->labels.size();
      const TurnLabels* l = real ? &d->labels[k] : nullptr;
      if (l != nullptr && l->slots.size() != slots) {
        throw DataError("turn " + std::to_string(k) + " is missing slot labels (" + std::to_string(l->slots.size()) +
                        " of " + std::to_string(slots) + ")");
      }
      for (std::size_t m = 0; m < slots; ++m) slot_labels[m].push_back(l ? l->slots[m] : -1);
      entity_labels.push_back(l ? l->entity : -1);
      response_labels.push_back(l ? l->response : -1);
      mask.push_back(l ? inv_batch : 0.0);
    }
    auto weighted = [&](double lambda) {
      std::vector<double> w(mask);
      for (double& x : w) x *= lambda;
      return w;
    };
    const TurnOutput& out = outputs[k];
    for (std::size_t m = 0; m < slots; ++m) {
      accumulate(softmax_cross_entropy(out.slot_logits[m], slot_labels[m], weighted(config.slot_weight(m))));
    }
    accumulate(softmax_cross_entropy(out.entity_logits, entity_labels, weighted(config.entity_weight)));
    accumulate(softmax_cross_entropy(out.response_logits, response_labels, weighted(config.response_weight)));
  }
  return total;
}

}  // namespace taskbot
