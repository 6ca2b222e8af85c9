// SPDX-License-Identifier: Apache-2.0
//
// Neural building blocks on top of the tape: embeddings, LSTM cells, the
// bidirectional utterance encoder, MLP heads, dropout, gradient clipping and
// Adam.
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "taskbot/rng.hpp"
#include "taskbot/tensor.hpp"

namespace taskbot {

inline constexpr std::size_t kPadIndex = 0;
inline constexpr std::size_t kUnkIndex = 1;

/// Gate blocks are packed in the order input, forget, cell, output; each
/// block has `hidden` rows of the weight matrices.
struct LstmParams {
  Tensor w_input;   // [4H × D]
  Tensor w_hidden;  // [4H × H]
  Tensor bias;      // [4H]

  std::size_t input_size() const { return w_input.cols(); }
  std::size_t hidden_size() const { return w_hidden.cols(); }

  /// Weights uniform(−range, range); biases zero except the forget block.
  static LstmParams init(std::size_t input, std::size_t hidden, Rng& rng, double range = 0.08,
                         double forget_bias = 1.0);
};

struct LstmVars {
  Var w_input;
  Var w_hidden;
  Var bias;
  std::size_t hidden = 0;
};

LstmVars bind(Tape& tape, LstmParams& p);
LstmVars bind(Tape& tape, const LstmParams& p);

struct LstmState {
  Var h;
  Var c;
};

/// One recurrence step for a batch of rows: x[B×D], h/c[B×H].
LstmState lstm_step(const LstmVars& p, Var x, const LstmState& prev);

/// Step with the input projection x·W_inputᵀ + bias already computed
/// (`projected` is [B×4H]). `prev` may be invalid for a zero initial state.
LstmState lstm_step_projected(const LstmVars& p, Var projected, const LstmState* prev);

struct EmbeddingTable {
  Tensor weight;  // [V × dim]; row kPadIndex is all zeros

  std::size_t vocab_size() const { return weight.rows(); }
  std::size_t dim() const { return weight.cols(); }

  static EmbeddingTable init(std::size_t vocab, std::size_t dim, Rng& rng, double range = 0.25);
};

/// Overwrites rows of `table` for words found in a text vector file (token
/// followed by `dim` decimals per line). Returns the number of rows set.
std::size_t load_word_vectors(EmbeddingTable& table, const std::vector<std::string>& vocab,
                              const std::filesystem::path& path);

/// Encodes one utterance: concat(forward state after the last token,
/// backward state after reading back to the first token). Returns [2H].
Var bilstm_encode(Var embedding, const LstmVars& fwd, const LstmVars& bwd, std::span<const std::size_t> tokens);

/// Batched form for utterances that all have the same length T ≥ 1.
/// Returns [N × 2H].
Var bilstm_encode_batch(Var embedding, const LstmVars& fwd, const LstmVars& bwd,
                        const std::vector<std::span<const std::size_t>>& utterances);

/// Utterances of any lengths; rows of the result follow the input order.
Var bilstm_encode_any(Var embedding, const LstmVars& fwd, const LstmVars& bwd,
                      const std::vector<std::span<const std::size_t>>& utterances);

/// tanh hidden layers followed by a linear output layer. The softmax is
/// applied by the consumer (fused into the loss during training).
struct MlpHead {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::size_t output_size() const { return weights.back().rows(); }

  static MlpHead init(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t output, Rng& rng,
                      double range = 0.08, bool zero_output_layer = false);
};

struct MlpVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

MlpVars bind(Tape& tape, MlpHead& head);
MlpVars bind(Tape& tape, const MlpHead& head);

Var mlp_logits(const MlpVars& head, Var x);

/// Inverted dropout: keeps each element with probability 1 − rate and scales
/// kept elements by 1/(1 − rate). Identity when not training or rate is 0.
Var dropout(Var x, double rate, bool training, Rng& rng);

/// Scales all gradients by max_norm/g when their global L2 norm g exceeds
/// max_norm. Returns g.
double clip_by_global_norm(std::span<Tensor* const> params, double max_norm);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Bias-corrected update of every parameter from its gradient. The set
  /// and order of parameters must be the same on every call.
  void step(std::span<Tensor* const> params);

  long step_count() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  long steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace taskbot
