// SPDX-License-Identifier: Apache-2.0
#include "taskbot/nn.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "taskbot/errors.hpp"

namespace taskbot {

namespace {

Tensor uniform_tensor(Shape shape, Rng& rng, double range) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = rng.uniform(-range, range);
  return t;
}

template <typename P>
LstmVars bind_lstm(Tape& tape, P& p) {
  return LstmVars{tape.leaf(p.w_input), tape.leaf(p.w_hidden), tape.leaf(p.bias), p.hidden_size()};
}

template <typename H>
MlpVars bind_mlp(Tape& tape, H& head) {
  MlpVars v;
  for (std::size_t i = 0; i < head.weights.size(); ++i) {
    v.weights.push_back(tape.leaf(head.weights[i]));
    v.biases.push_back(tape.leaf(head.biases[i]));
  }
  return v;
}

}  // namespace

LstmParams LstmParams::init(std::size_t input, std::size_t hidden, Rng& rng, double range, double forget_bias) {
  LstmParams p;
  p.w_input = uniform_tensor({4 * hidden, input}, rng, range);
  p.w_hidden = uniform_tensor({4 * hidden, hidden}, rng, range);
  p.bias = Tensor(Shape{4 * hidden});
  for (std::size_t i = hidden; i < 2 * hidden; ++i) p.bias[i] = forget_bias;
  return p;
}

LstmVars bind(Tape& tape, LstmParams& p) { return bind_lstm(tape, p); }
LstmVars bind(Tape& tape, const LstmParams& p) { return bind_lstm(tape, p); }

LstmState lstm_step_projected(const LstmVars& p, Var projected, const LstmState* prev) {
  const std::size_t h = p.hidden;
  if (projected.value().cols() != 4 * h) {
    throw DimensionError("lstm_step: gate pre-activations " + shape_str(projected.value().shape()) +
                         " do not match hidden size " + std::to_string(h));
  }
  Var gates = projected;
  if (prev != nullptr) gates = add(gates, linear(prev->h, p.w_hidden));
  Var in_gate = sigmoid(slice_cols(gates, 0, h));
  Var forget_gate = sigmoid(slice_cols(gates, h, 2 * h));
  Var cell_in = tanh(slice_cols(gates, 2 * h, 3 * h));
  Var out_gate = sigmoid(slice_cols(gates, 3 * h, 4 * h));
  Var c = mul(in_gate, cell_in);
  if (prev != nullptr) c = add(mul(forget_gate, prev->c), c);
  Var hidden = mul(out_gate, tanh(c));
  return LstmState{hidden, c};
}

LstmState lstm_step(const LstmVars& p, Var x, const LstmState& prev) {
  const Tensor& xv = x.value();
  const Tensor& hv = prev.h.value();
  const Tensor& cv = prev.c.value();
  const Tensor& w = p.w_input.value();
  if (xv.cols() != w.cols() || hv.cols() != p.hidden || cv.shape() != hv.shape() || xv.rows() != hv.rows()) {
    throw DimensionError("lstm_step: x " + shape_str(xv.shape()) + ", h " + shape_str(hv.shape()) + ", c " +
                         shape_str(cv.shape()) + " inconsistent with W_input " + shape_str(w.shape()));
  }
  return lstm_step_projected(p, linear(x, p.w_input, p.bias), &prev);
}

EmbeddingTable EmbeddingTable::init(std::size_t vocab, std::size_t dim, Rng& rng, double range) {
  if (vocab < 2) throw ConfigError("embedding table needs at least the PAD and UNK rows");
  EmbeddingTable t{uniform_tensor({vocab, dim}, rng, range)};
  for (std::size_t c = 0; c < dim; ++c) t.weight.at(kPadIndex, c) = 0.0;
  return t;
}

std::size_t load_word_vectors(EmbeddingTable& table, const std::vector<std::string>& vocab,
                              const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open word vector file " + path.string());
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], i);
  const std::size_t dim = table.dim();
  std::size_t loaded = 0;
  std::size_t line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    std::vector<double> values;
    double x;
    while (ls >> x) values.push_back(x);
    if (line_no == 1 && values.size() == 1) continue;  // "<count> <dim>" header
    if (values.size() != dim) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                      " values, got " + std::to_string(values.size()));
    }
    auto it = index.find(word);
    if (it == index.end() || it->second == kPadIndex) continue;
    for (std::size_t c = 0; c < dim; ++c) table.weight.at(it->second, c) = values[c];
    ++loaded;
  }
  return loaded;
}

namespace {

// Runs both directions over same-length utterances given per-token input
// projections: `proj_f`/`proj_b` rows are looked up by token id.
Var encode_group(Var proj_f, Var proj_b, const LstmVars& fwd, const LstmVars& bwd,
                 const std::vector<std::span<const std::size_t>>& utterances, bool by_token) {
  const std::size_t n = utterances.size();
  const std::size_t steps = utterances.front().size();
  std::vector<std::size_t> time_major(steps * n);
  for (std::size_t u = 0; u < n; ++u) {
    if (utterances[u].size() != steps) throw ContractError("bilstm_encode_batch: utterance lengths differ");
    for (std::size_t t = 0; t < steps; ++t) time_major[t * n + u] = utterances[u][t];
  }
  if (by_token) {
    proj_f = gather_rows(proj_f, time_major);
    proj_b = gather_rows(proj_b, std::move(time_major));
  }

  LstmState f = lstm_step_projected(fwd, steps == 1 ? proj_f : slice_rows(proj_f, 0, n), nullptr);
  for (std::size_t t = 1; t < steps; ++t) f = lstm_step_projected(fwd, slice_rows(proj_f, t * n, (t + 1) * n), &f);

  const std::size_t last = steps - 1;
  LstmState b =
      lstm_step_projected(bwd, steps == 1 ? proj_b : slice_rows(proj_b, last * n, (last + 1) * n), nullptr);
  for (std::size_t t = last; t-- > 0;) b = lstm_step_projected(bwd, slice_rows(proj_b, t * n, (t + 1) * n), &b);

  return concat_cols({f.h, b.h});
}

void check_utterances(const std::vector<std::span<const std::size_t>>& utterances) {
  if (utterances.empty()) throw ContractError("bilstm_encode: no utterances");
  for (const auto& u : utterances) {
    if (u.empty()) throw ContractError("bilstm_encode: empty utterance (substitute a sentinel token)");
  }
}

}  // namespace

Var bilstm_encode_batch(Var embedding, const LstmVars& fwd, const LstmVars& bwd,
                        const std::vector<std::span<const std::size_t>>& utterances) {
  check_utterances(utterances);
  const std::size_t n = utterances.size();
  const std::size_t steps = utterances.front().size();
  std::vector<std::size_t> time_major(steps * n);
  for (std::size_t u = 0; u < n; ++u) {
    if (utterances[u].size() != steps) throw ContractError("bilstm_encode_batch: utterance lengths differ");
    for (std::size_t t = 0; t < steps; ++t) time_major[t * n + u] = utterances[u][t];
  }
  Var x = gather_rows(embedding, std::move(time_major));
  return encode_group(linear(x, fwd.w_input, fwd.bias), linear(x, bwd.w_input, bwd.bias), fwd, bwd, utterances,
                      false);
}

Var bilstm_encode(Var embedding, const LstmVars& fwd, const LstmVars& bwd, std::span<const std::size_t> tokens) {
  return bilstm_encode_batch(embedding, fwd, bwd, {tokens});
}

Var bilstm_encode_any(Var embedding, const LstmVars& fwd, const LstmVars& bwd,
                      const std::vector<std::span<const std::size_t>>& utterances) {
  check_utterances(utterances);
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    by_length[utterances[i].size()].push_back(i);
    tokens += utterances[i].size();
  }
  // With more tokens than vocabulary rows, projecting the whole table once is
  // cheaper than projecting every token.
  const bool project_table = tokens > embedding.value().rows();
  if (by_length.size() == 1 && !project_table) return bilstm_encode_batch(embedding, fwd, bwd, utterances);

  Var table_f, table_b;
  if (project_table) {
    table_f = linear(embedding, fwd.w_input, fwd.bias);
    table_b = linear(embedding, bwd.w_input, bwd.bias);
  }
  std::vector<Var> groups;
  std::vector<std::size_t> position(utterances.size());
  std::size_t row = 0;
  for (const auto& [len, members] : by_length) {
    std::vector<std::span<const std::size_t>> group;
    for (std::size_t i : members) {
      group.push_back(utterances[i]);
      position[i] = row++;
    }
    groups.push_back(project_table ? encode_group(table_f, table_b, fwd, bwd, group, true)
                                   : bilstm_encode_batch(embedding, fwd, bwd, group));
  }
  if (groups.size() == 1) return groups.front();
  return gather_rows(concat_rows(groups), std::move(position));
}

MlpHead MlpHead::init(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t output, Rng& rng,
                      double range, bool zero_output_layer) {
  if (output == 0) throw ConfigError("MLP head with zero outputs");
  MlpHead head;
  std::size_t in = input;
  for (std::size_t h : hidden) {
    head.weights.push_back(uniform_tensor({h, in}, rng, range));
    head.biases.push_back(Tensor(Shape{h}));
    in = h;
  }
  head.weights.push_back(zero_output_layer ? Tensor(Shape{output, in}) : uniform_tensor({output, in}, rng, range));
  head.biases.push_back(Tensor(Shape{output}));
  return head;
}

MlpVars bind(Tape& tape, MlpHead& head) { return bind_mlp(tape, head); }
MlpVars bind(Tape& tape, const MlpHead& head) { return bind_mlp(tape, head); }

Var mlp_logits(const MlpVars& head, Var x) {
  const std::size_t layers = head.weights.size();
  for (std::size_t i = 0; i + 1 < layers; ++i) x = tanh(linear(x, head.weights[i], head.biases[i]));
  return linear(x, head.weights.back(), head.biases.back());
}

Var dropout(Var x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const Tensor& xv = x.value();
  Tensor mask(xv.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  return mul(x, x.tape->constant(std::move(mask)));
}

double clip_by_global_norm(std::span<Tensor* const> params, double max_norm) {
  double sq = 0.0;
  for (const Tensor* p : params) {
    for (double g : p->grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor* p : params) {
      for (double& g : p->grad()) g *= scale;
    }
  }
  return norm;
}

void Adam::step(std::span<Tensor* const> params) {
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam::step: parameter set changed between steps");
  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    if (!p.has_grad()) continue;
    if (p.size() != m_[k].size()) throw ContractError("Adam::step: parameter shape changed");
    auto g = p.grad();
    auto w = p.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace taskbot
