// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical dialog network: a bidirectional utterance encoder feeding a
// dialog-level LSTM whose state drives one softmax head per goal slot, an
// entity-pointer head and a response-template head.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "taskbot/nn.hpp"

namespace taskbot {

inline constexpr const char* kDontCare = "dontcare";
inline constexpr const char* kNone = "none";

/// Which previously emitted labels are fed back into the dialog LSTM input.
enum class Variant { Base, FeedResponse, FeedSlots, FeedBoth };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
inline bool feeds_response(Variant v) { return v == Variant::FeedResponse || v == Variant::FeedBoth; }
inline bool feeds_slots(Variant v) { return v == Variant::FeedSlots || v == Variant::FeedBoth; }
inline constexpr Variant kAllVariants[] = {Variant::Base, Variant::FeedResponse, Variant::FeedSlots,
                                           Variant::FeedBoth};

struct SlotSpec {
  std::string name;
  /// Domain values followed by "dontcare" and "none".
  std::vector<std::string> candidates;

  static SlotSpec from_domain(std::string name, std::vector<std::string> domain_values);
  std::optional<std::size_t> index_of(const std::string& value) const;
  std::size_t none_index() const;
  std::size_t dontcare_index() const;
  bool operator==(const SlotSpec&) const = default;
};

struct ModelConfig {
  std::vector<SlotSpec> slots;
  std::size_t response_count = 0;
  std::size_t max_entities = 8;
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 300;
  std::size_t utterance_hidden = 150;
  std::size_t dialog_hidden = 200;
  std::vector<std::size_t> head_hidden = {100};
  Variant variant = Variant::Base;
  /// λ per slot; empty means 1 for every slot.
  std::vector<double> slot_weights;
  double entity_weight = 1.0;
  double response_weight = 1.0;
  double init_range = 0.08;
  double embedding_init_range = 0.25;
  double forget_bias = 1.0;
  /// Zero output layers make every head start uniform.
  bool zero_init_heads = false;

  /// Entity pointer arity: max_entities ranks plus "none".
  std::size_t entity_arity() const { return max_entities + 1; }
  std::size_t entity_none() const { return max_entities; }
  std::size_t slot_feedback_width() const;
  std::size_t dialog_input_dim() const;
  double slot_weight(std::size_t m) const { return slot_weights.empty() ? 1.0 : slot_weights.at(m); }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Dense supervision for one turn. Indices refer to head outputs; a negative
/// response marks a reference response absent from the candidate list.
struct TurnLabels {
  std::vector<long> slots;
  long entity = 0;
  long response = -1;
  int kb_indicator = 0;

  bool operator==(const TurnLabels&) const = default;
};

struct ModelParams {
  EmbeddingTable embedding;
  LstmParams utterance_fwd;
  LstmParams utterance_bwd;
  LstmParams dialog;
  std::vector<MlpHead> slot_heads;
  MlpHead entity_head;
  MlpHead response_head;

  /// Every parameter tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::vector<Tensor*> tensors();
  void set_requires_grad(bool on);
  void zero_grad();
};

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

struct BoundModel {
  Var embedding;
  LstmVars utterance_fwd;
  LstmVars utterance_bwd;
  LstmVars dialog;
  std::vector<MlpVars> slot_heads;
  MlpVars entity_head;
  MlpVars response_head;
};

BoundModel bind(Tape& tape, ModelParams& params);
BoundModel bind(Tape& tape, const ModelParams& params);

/// Labels emitted at the previous turn. Empty/absent before the first turn,
/// which feeds zero vectors.
struct Feedback {
  std::optional<std::size_t> response;
  std::vector<std::size_t> slots;
};

struct DropoutSpec {
  double rate = 0.0;
  bool training = false;
  Rng* rng = nullptr;
};

/// Inputs of one dialog_step for a batch of B dialogs.
struct StepInput {
  Var utterance;                     // [B × 2·utterance_hidden]
  std::vector<double> kb_indicator;  // B bits
  std::vector<Feedback> feedback;    // B entries; ignored by the base variant
};

struct TurnOutput {
  LstmState state;
  std::vector<Var> slot_logits;
  Var entity_logits;
  Var response_logits;
};

LstmState initial_state(Tape& tape, const ModelConfig& config, std::size_t batch);

/// s_k = LSTM_D(s_{k−1}, [U_k, I_k, feedback...]) followed by every head.
/// Dropout applies to U_k on entry and to s_k before the heads.
TurnOutput dialog_step(const ModelConfig& config, const BoundModel& model, const LstmState& prev,
                       const StepInput& input, const DropoutSpec& drop = {});

struct TurnDistributions {
  std::vector<std::vector<double>> slots;
  std::vector<double> entity;
  std::vector<double> response;
};

TurnDistributions distributions(const TurnOutput& out, std::size_t row);

struct TurnDecision {
  std::vector<std::size_t> slots;
  std::size_t entity = 0;
  std::size_t response = 0;

  bool operator==(const TurnDecision&) const = default;
};

/// Argmax of every head; ties go to the lowest index.
TurnDecision decode_turn(const TurnDistributions& dist);

/// A dialog in model space: token ids per turn and per-turn labels.
struct EncodedDialog {
  std::vector<std::vector<std::size_t>> utterances;
  std::vector<TurnLabels> labels;
};

/// Ground-truth feedback for turn `k` (labels of turn k−1).
Feedback teacher_feedback(const EncodedDialog& dialog, std::size_t k);

/// Encodes every utterance of the batch once, then steps the dialog LSTM over
/// max-turn-count turns with ground-truth indicators and feedback. Shorter
/// dialogs repeat their last turn as padding (masked out of the loss).
std::vector<TurnOutput> forward_teacher_forced(const ModelConfig& config, const BoundModel& model,
                                               std::span<const EncodedDialog* const> batch,
                                               const DropoutSpec& drop = {});

/// Σ_k Σ_heads λ·CE over real (non-padding) turns, divided by the batch size.
Var joint_loss(const ModelConfig& config, const std::vector<TurnOutput>& outputs,
               std::span<const EncodedDialog* const> batch);

}  // namespace taskbot
