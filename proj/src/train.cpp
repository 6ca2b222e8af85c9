// SPDX-License-Identifier: Apache-2.0
#include "taskbot/train.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "taskbot/errors.hpp"
#include "taskbot/session.hpp"

namespace taskbot {

using nlohmann::json;

void TrainingConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  if (!(dev_fraction >= 0.0 && dev_fraction < 1.0)) throw ConfigError("dev fraction must be in [0, 1)");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

json to_json(const TrainingConfig& c) {
  return json{{"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"patience", c.patience},
              {"dropout", c.dropout},
              {"clip_norm", c.clip_norm},
              {"learning_rate", c.adam.learning_rate},
              {"beta1", c.adam.beta1},
              {"beta2", c.adam.beta2},
              {"epsilon", c.adam.epsilon},
              {"seed", c.seed},
              {"dev_fraction", c.dev_fraction},
              {"word_vectors", c.word_vectors ? json(c.word_vectors->string()) : json(nullptr)},
              {"freeze_embeddings", c.freeze_embeddings}};
}

TrainingConfig training_config_from_json(const json& j) {
  TrainingConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.patience = j.value("patience", c.patience);
  c.dropout = j.value("dropout", c.dropout);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.epsilon = j.value("epsilon", c.adam.epsilon);
  c.seed = j.value("seed", c.seed);
  c.dev_fraction = j.value("dev_fraction", c.dev_fraction);
  if (j.contains("word_vectors") && j["word_vectors"].is_string()) c.word_vectors = j["word_vectors"].get<std::string>();
  c.freeze_embeddings = j.value("freeze_embeddings", c.freeze_embeddings);
  return c;
}

std::pair<std::vector<Dialog>, std::vector<Dialog>> split_train_dev(std::span<const Dialog> dialogs,
                                                                    double dev_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(dialogs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::size_t n_dev = static_cast<std::size_t>(std::llround(dev_fraction * static_cast<double>(dialogs.size())));
  if (dev_fraction > 0.0 && n_dev == 0 && dialogs.size() >= 2) n_dev = 1;
  if (n_dev >= dialogs.size()) n_dev = dialogs.empty() ? 0 : dialogs.size() - 1;
  std::vector<bool> is_dev(dialogs.size(), false);
  for (std::size_t i = 0; i < n_dev; ++i) is_dev[order[i]] = true;
  std::pair<std::vector<Dialog>, std::vector<Dialog>> out;
  for (std::size_t i = 0; i < dialogs.size(); ++i) (is_dev[i] ? out.second : out.first).push_back(dialogs[i]);
  return out;
}

Preprocessor make_preprocessor(std::span<const Dialog> train, const SlotSchema& schema, Lexicon lexicon,
                               std::size_t max_entities, std::size_t min_count) {
  Preprocessor prep;
  prep.schema = schema;
  prep.candidates = build_candidates(train, lexicon, schema);
  prep.lexicon = std::move(lexicon);
  prep.vocab = build_vocab(train, min_count);
  prep.max_entities = max_entities;
  return prep;
}

ModelConfig configure_model(ModelConfig base, const Preprocessor& prep) {
  base.slots = prep.schema;
  base.response_count = prep.candidates.size();
  base.vocab_size = prep.vocab.size();
  base.max_entities = prep.max_entities;
  return base;
}

std::vector<EncodedDialog> encode_dialogs(std::span<const Dialog> dialogs, const Preprocessor& prep) {
  std::vector<EncodedDialog> out;
  out.reserve(dialogs.size());
  for (const auto& d : dialogs) out.push_back(encode_dialog(d, prep));
  return out;
}

namespace {

std::vector<const EncodedDialog*> batch_of(std::span<const EncodedDialog> data, const std::vector<std::size_t>& order,
                                           std::size_t begin, std::size_t end) {
  std::vector<const EncodedDialog*> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&data[order[i]]);
  return out;
}

bool is_finite(double x) { return std::isfinite(x); }

}  // namespace

double dataset_loss(const ModelConfig& config, const ModelParams& params, std::span<const EncodedDialog> dialogs,
                    std::size_t batch_size) {
  if (dialogs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> order(dialogs.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  for (std::size_t b = 0; b < dialogs.size(); b += batch_size) {
    const auto batch = batch_of(dialogs, order, b, std::min(dialogs.size(), b + batch_size));
    Tape tape(false);
    const BoundModel m = bind(tape, params);
    const auto outputs = forward_teacher_forced(config, m, batch);
    total += joint_loss(config, outputs, batch).value().item() * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(dialogs.size());
}

TrainResult train_encoded(const ModelConfig& config, std::span<const EncodedDialog> train,
                          std::span<const EncodedDialog> dev, const TrainingConfig& tc, const ModelParams* init,
                          const EpochCallback& on_epoch) {
  tc.validate();
  config.validate();
  if (train.empty()) throw ContractError("training set is empty");

  TrainResult result;
  ModelParams params = init != nullptr ? *init : init_model(config, tc.seed);
  params.set_requires_grad(true);
  if (tc.freeze_embeddings) params.embedding.weight.set_requires_grad(false);
  params.zero_grad();
  std::vector<Tensor*> tensors = params.tensors();
  Adam adam(tc.adam);
  Rng rng(tc.seed ^ 0x5bd1e995ULL);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double loss_sum = 0.0;
    double norm_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < train.size(); b += tc.batch_size) {
      const auto batch = batch_of(train, order, b, std::min(train.size(), b + tc.batch_size));
      params.zero_grad();
      Tape tape;
      const BoundModel m = bind(tape, params);
      const auto outputs = forward_teacher_forced(config, m, batch, DropoutSpec{tc.dropout, true, &rng});
      Var loss = joint_loss(config, outputs, batch);
      const double lv = loss.value().item();
      if (!is_finite(lv)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches + 1) + ": loss = " + std::to_string(lv));
      }
      tape.backward(loss);
      if (params.embedding.weight.has_grad()) {
        const std::size_t dim = params.embedding.dim();
        std::fill_n(params.embedding.weight.grad().begin() + kPadIndex * dim, dim, 0.0);
      }
      const double norm = clip_by_global_norm(tensors, tc.clip_norm);
      if (!is_finite(norm)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches + 1) + ": gradient norm = " + std::to_string(norm));
      }
      adam.step(tensors);
      loss_sum += lv * static_cast<double>(batch.size());
      norm_sum += norm;
      ++batches;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(train.size());
    em.grad_norm = norm_sum / static_cast<double>(batches);
    em.dev_loss = dev.empty() ? std::numeric_limits<double>::quiet_NaN()
                              : dataset_loss(config, params, dev, tc.batch_size);
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(em);

    if (dev.empty()) {
      result.params = params;
      result.best_epoch = epoch;
      result.best_dev_loss = em.dev_loss;
    } else if (!is_finite(em.dev_loss)) {
      throw NumericError("dev loss is not finite after epoch " + std::to_string(epoch));
    } else if (em.dev_loss < best) {
      best = em.dev_loss;
      result.params = params;
      result.best_epoch = epoch;
      result.best_dev_loss = em.dev_loss;
      stale = 0;
    } else {
      ++stale;
    }

    if (on_epoch && on_epoch(em, params)) break;
    if (!dev.empty() && tc.patience > 0 && stale >= tc.patience) {
      result.early_stopped = true;
      break;
    }
  }
  result.params.set_requires_grad(false);
  return result;
}

TrainResult train(const ModelConfig& config, const Preprocessor& prep, std::span<const Dialog> train_dialogs,
                  std::span<const Dialog> dev_dialogs, const TrainingConfig& tc, const EpochCallback& on_epoch) {
  const auto train_enc = encode_dialogs(train_dialogs, prep);
  const auto dev_enc = encode_dialogs(dev_dialogs, prep);
  if (!tc.word_vectors) return train_encoded(config, train_enc, dev_enc, tc, nullptr, on_epoch);
  ModelParams init = init_model(config, tc.seed);
  load_word_vectors(init.embedding, prep.vocab.tokens(), *tc.word_vectors);
  return train_encoded(config, train_enc, dev_enc, tc, &init, on_epoch);
}

// ---------------------------------------------------------------------------
// Evaluation

std::string to_string(EvalMode mode) { return mode == EvalMode::TeacherForced ? "teacher" : "free"; }

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "teacher" || name == "teacher-forced") return EvalMode::TeacherForced;
  if (name == "free" || name == "free-running") return EvalMode::FreeRunning;
  throw ConfigError("unknown evaluation mode '" + name + "' (expected teacher or free)");
}

bool EvalReport::operator==(const EvalReport& other) const { return to_json(*this) == to_json(other); }

namespace {

double ratio(std::size_t hits, std::size_t total) {
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

std::string label_name(const Preprocessor& prep, long response) {
  if (response < 0) return "<unknown>";
  return prep.candidates.at(static_cast<std::size_t>(response));
}

}  // namespace

EvalReport score_predictions(const Preprocessor& prep, std::span<const Dialog> dialogs,
                             const std::vector<std::vector<TurnPrediction>>& predictions, EvalMode mode,
                             std::size_t max_errors) {
  if (predictions.size() != dialogs.size()) throw DataError("prediction count does not match dialog count");
  const SlotSchema& schema = prep.schema;
  EvalReport r;
  r.mode = mode;
  r.dialogs = dialogs.size();
  for (const auto& s : schema) r.slot_names.push_back(s.name);

  std::vector<std::size_t> slot_hits(schema.size(), 0);
  std::size_t joint_hits = 0, entity_hits = 0, delex_hits = 0, final_hits = 0, per_hits = 0;
  auto log = [&](const Dialog& d, std::size_t k, std::string field, std::string expected, std::string predicted) {
    if (r.errors.size() < max_errors) {
      r.errors.push_back(TurnError{d.id, k, std::move(field), std::move(expected), std::move(predicted)});
    } else {
      ++r.errors_dropped;
    }
  };

  for (std::size_t i = 0; i < dialogs.size(); ++i) {
    const Dialog& d = dialogs[i];
    const DerivedDialog derived = derive_labels(d, prep);
    if (predictions[i].size() != d.turns.size()) {
      throw DataError("dialog '" + d.id + "': " + std::to_string(predictions[i].size()) + " predictions for " +
                      std::to_string(d.turns.size()) + " turns");
    }
    for (std::size_t k = 0; k < d.turns.size(); ++k) {
      const TurnLabels& l = derived.labels[k];
      const TurnContext& ctx = derived.context[k];
      const TurnPrediction& p = predictions[i][k];
      ++r.turns;
      if (p.slots.size() != schema.size()) throw DataError("prediction has the wrong number of slots");

      bool joint = true;
      for (std::size_t m = 0; m < schema.size(); ++m) {
        const bool ok = static_cast<long>(p.slots[m]) == l.slots[m];
        slot_hits[m] += ok;
        joint = joint && ok;
        if (!ok) {
          log(d, k, "slot:" + schema[m].name, schema[m].candidates.at(static_cast<std::size_t>(l.slots[m])),
              p.slots[m] < schema[m].candidates.size() ? schema[m].candidates[p.slots[m]] : "?");
        }
      }
      joint_hits += joint;

      const bool entity_ok = static_cast<long>(p.entity) == l.entity;
      entity_hits += entity_ok;
      if (!entity_ok) log(d, k, "entity", std::to_string(l.entity), std::to_string(p.entity));

      r.api_turns += is_api_call_text(d.turns[k].system);
      r.unknown_responses += ctx.unknown_response;
      r.lexicalisation_failures += p.lexicalisation_failed;
      const bool delex_ok = l.response >= 0 && static_cast<long>(p.response) == l.response;
      const bool text_ok = normalize_text(p.text) == ctx.reference;
      if (!delex_ok) {
        log(d, k, "response", label_name(prep, l.response),
            p.response < prep.candidates.size() ? prep.candidates[p.response] : "?");
      } else if (!text_ok) {
        log(d, k, "text", ctx.reference, normalize_text(p.text));
      }
      delex_hits += delex_ok;
      final_hits += delex_ok && text_ok;
      per_hits += text_ok;
    }
  }

  for (std::size_t m = 0; m < schema.size(); ++m) r.slot_accuracy.push_back(ratio(slot_hits[m], r.turns));
  r.joint_goal = ratio(joint_hits, r.turns);
  r.entity_pointer = ratio(entity_hits, r.turns);
  r.delex_response = ratio(delex_hits, r.turns);
  r.final_response = ratio(final_hits, r.turns);
  r.per_response = ratio(per_hits, r.turns);
  return r;
}

namespace {

TurnPrediction prediction_from(const TurnDecision& d, const Rendered& rendered) {
  TurnPrediction p;
  p.slots = d.slots;
  p.entity = d.entity;
  p.response = d.response;
  p.text = rendered.text;
  p.lexicalisation_failed = rendered.failed;
  return p;
}

std::vector<std::vector<TurnPrediction>> predict_teacher_forced(const ModelConfig& config, const ModelParams& params,
                                                               const Preprocessor& prep,
                                                               std::span<const Dialog> dialogs) {
  const auto encoded = encode_dialogs(dialogs, prep);
  std::vector<std::vector<TurnPrediction>> out(dialogs.size());
  std::vector<std::size_t> order(dialogs.size());
  std::iota(order.begin(), order.end(), 0);
  constexpr std::size_t kBatch = 32;
  for (std::size_t b = 0; b < dialogs.size(); b += kBatch) {
    const std::size_t end = std::min(dialogs.size(), b + kBatch);
    const auto batch = batch_of(encoded, order, b, end);
    Tape tape(false);
    const BoundModel m = bind(tape, params);
    const auto outputs = forward_teacher_forced(config, m, batch);
    for (std::size_t i = b; i < end; ++i) {
      const Dialog& d = dialogs[i];
      const DerivedDialog derived = derive_labels(d, prep);
      for (std::size_t k = 0; k < d.turns.size(); ++k) {
        const TurnDistributions dist = distributions(outputs[k], i - b);
        const TurnDecision dec = decode_turn(dist);
        KBResult reference;
        const KBResult* result = nullptr;
        if (const auto& rt = derived.context[k].result) {
          if (const auto& entities = d.turns[*rt].kb_result) {
            reference.entities.assign(entities->begin(),
                                      entities->begin() + static_cast<std::ptrdiff_t>(
                                                              std::min(entities->size(), prep.max_entities)));
          }
          result = &reference;
        }
        out[i].push_back(prediction_from(dec, render_response(prep, dec, dist.entity, result)));
      }
    }
  }
  return out;
}

std::vector<std::vector<TurnPrediction>> predict_free_running(const ModelConfig& config, const ModelParams& params,
                                                             const Preprocessor& prep, const KnowledgeBase& kb,
                                                             std::span<const Dialog> dialogs) {
  InferenceBundle bundle{config, params, prep, kb, json::object()};
  std::vector<std::vector<TurnPrediction>> out(dialogs.size());
  for (std::size_t i = 0; i < dialogs.size(); ++i) {
    DialogRunner runner(bundle);
    for (const auto& turn : dialogs[i].turns) {
      const RunnerStep s = runner.step(turn.user);
      TurnPrediction p;
      p.slots = s.decision.slots;
      p.entity = s.decision.entity;
      p.response = s.decision.response;
      p.text = s.text;
      p.lexicalisation_failed = s.lexicalisation_failed;
      out[i].push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace

EvalReport evaluate(const ModelConfig& config, const ModelParams& params, const Preprocessor& prep,
                    const KnowledgeBase& kb, std::span<const Dialog> dialogs, EvalMode mode, std::size_t max_errors) {
  if (config.slots != prep.schema) throw ConfigError("model slots do not match the corpus schema");
  if (kb.schema() != prep.schema) throw ConfigError("KB schema does not match the model slots");
  if (config.response_count != prep.candidates.size()) {
    throw ConfigError("model has " + std::to_string(config.response_count) + " response outputs but " +
                      std::to_string(prep.candidates.size()) + " candidates are loaded");
  }
  const auto predictions = mode == EvalMode::TeacherForced ? predict_teacher_forced(config, params, prep, dialogs)
                                                           : predict_free_running(config, params, prep, kb, dialogs);
  return score_predictions(prep, dialogs, predictions, mode, max_errors);
}

json to_json(const EvalReport& r) {
  json slots = json::object();
  for (std::size_t m = 0; m < r.slot_names.size(); ++m) slots[r.slot_names[m]] = r.slot_accuracy[m];
  json errors = json::array();
  for (const auto& e : r.errors) {
    errors.push_back({{"dialog", e.dialog_id},
                      {"turn", e.turn},
                      {"field", e.field},
                      {"expected", e.expected},
                      {"predicted", e.predicted}});
  }
  return json{{"mode", to_string(r.mode)},
              {"counts",
               {{"dialogs", r.dialogs},
                {"turns", r.turns},
                {"api_turns", r.api_turns},
                {"unknown_responses", r.unknown_responses},
                {"lexicalisation_failures", r.lexicalisation_failures}}},
              {"metrics",
               {{"entity_pointer", r.entity_pointer},
                {"slots", slots},
                {"joint_goal", r.joint_goal},
                {"delex_response", r.delex_response},
                {"final_response", r.final_response},
                {"per_response", r.per_response}}},
              {"errors", errors},
              {"errors_dropped", r.errors_dropped}};
}

std::string format_report_table(const EvalReport& r) {
  std::ostringstream out;
  char buf[160];
  out << "mode: " << to_string(r.mode) << "  dialogs: " << r.dialogs << "  turns: " << r.turns
      << "  api turns: " << r.api_turns << "\n";
  out << "+----------------+------------+--------------+--------------+\n";
  out << "| Entity Pointer | Joint Goal | De-lex Res.  | Final Res.   |\n";
  out << "+----------------+------------+--------------+--------------+\n";
  std::snprintf(buf, sizeof buf, "| %14.2f | %10.2f | %12.2f | %12.2f |\n", 100 * r.entity_pointer,
                100 * r.joint_goal, 100 * r.delex_response, 100 * r.final_response);
  out << buf;
  out << "+----------------+------------+--------------+--------------+\n";
  for (std::size_t m = 0; m < r.slot_names.size(); ++m) {
    std::snprintf(buf, sizeof buf, "  slot %-12s %6.2f\n", r.slot_names[m].c_str(), 100 * r.slot_accuracy[m]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "  per-response      %6.2f\n", 100 * r.per_response);
  out << buf;
  out << "  unknown responses: " << r.unknown_responses
      << "  lexicalisation failures: " << r.lexicalisation_failures << "\n";
  return out.str();
}

std::string corpus_checksum(std::span<const Dialog> dialogs) {
  const std::string content = serialize_jsonl(dialogs);
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob += content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw Error("SHA-1 digest failed");
  }
  static const char* kHex = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 15]);
  }
  return hex;
}

json report_document(const EvalReport& report, const ModelConfig& config, const TrainingConfig* tc,
                     std::uint64_t seed, const std::string& checksum) {
  json model = to_json(config);
  model.erase("slots");
  json slots = json::array();
  for (const auto& s : config.slots) slots.push_back({{"name", s.name}, {"size", s.candidates.size()}});
  model["slots"] = slots;
  return json{{"report", to_json(report)},
              {"model_config", model},
              {"training_config", tc ? to_json(*tc) : json(nullptr)},
              {"seed", seed},
              {"corpus_sha1", checksum}};
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

double loss_of(const ModelConfig& config, const ModelParams& params, const EncodedDialog& dialog) {
  Tape tape(false);
  const BoundModel m = bind(tape, params);
  const EncodedDialog* batch[] = {&dialog};
  const auto outputs = forward_teacher_forced(config, m, batch);
  return joint_loss(config, outputs, batch).value().item();
}

}  // namespace

GradCheckResult gradient_check(const ModelConfig& config, ModelParams params, const EncodedDialog& dialog,
                               const GradCheckOptions& opts) {
  config.validate();
  if (dialog.utterances.empty()) throw ContractError("gradient check needs a dialog with at least one turn");
  GradCheckResult result;
  params.set_requires_grad(true);
  params.zero_grad();
  {
    Tape tape;
    if (opts.corrupt) tape.corrupt_backward(*opts.corrupt);
    const BoundModel m = bind(tape, params);
    const EncodedDialog* batch[] = {&dialog};
    const auto outputs = forward_teacher_forced(config, m, batch);
    Var loss = joint_loss(config, outputs, batch);
    result.ops = tape.ops();
    tape.backward(loss);
  }

  for (auto& [name, tensor] : params.named()) {
    const std::vector<double> analytic(tensor->grad().begin(), tensor->grad().end());
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      const double saved = (*tensor)[i];
      (*tensor)[i] = saved + opts.epsilon;
      const double plus = loss_of(config, params, dialog);
      (*tensor)[i] = saved - opts.epsilon;
      const double minus = loss_of(config, params, dialog);
      (*tensor)[i] = saved;
      const double numeric = (plus - minus) / (2.0 * opts.epsilon);
      const double rel = std::abs(analytic[i] - numeric) / std::max(std::abs(analytic[i]) + std::abs(numeric), opts.floor);
      ++result.checked;
      if (rel > result.max_relative_error || !std::isfinite(rel)) {
        result.max_relative_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        result.worst_parameter = name;
        result.worst_index = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckFixture miniature_fixture(Variant variant, std::uint64_t seed) {
  GradCheckFixture f;
  ModelConfig& c = f.config;
  c.slots = {SlotSpec::from_domain("area", {"north", "south"}), SlotSpec::from_domain("food", {"thai", "greek", "cuban"}),
             SlotSpec::from_domain("pricerange", {"cheap"})};
  c.response_count = 6;
  c.max_entities = 3;
  c.vocab_size = 10;
  c.embedding_dim = 5;
  c.utterance_hidden = 4;
  c.dialog_hidden = 3;
  c.head_hidden = {4};
  c.variant = variant;
  c.slot_weights = {1.0, 0.7, 1.3};
  c.entity_weight = 0.9;
  c.response_weight = 1.1;
  // Wider init than the training default so every path carries gradient.
  c.init_range = 0.5;
  c.embedding_init_range = 0.5;
  f.params = init_model(c, seed);

  Rng rng(seed + 17);
  const std::size_t lengths[] = {3, 1, 4};
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<std::size_t> u;
    for (std::size_t t = 0; t < lengths[k]; ++t) u.push_back(1 + rng.below(c.vocab_size - 1));
    f.dialog.utterances.push_back(std::move(u));
    TurnLabels l;
    for (const auto& s : c.slots) l.slots.push_back(static_cast<long>(rng.below(s.candidates.size())));
    l.entity = static_cast<long>(rng.below(c.entity_arity()));
    l.response = static_cast<long>(rng.below(c.response_count));
    l.kb_indicator = static_cast<int>(rng.below(2));
    f.dialog.labels.push_back(std::move(l));
  }
  return f;
}

// ---------------------------------------------------------------------------
// Variant comparison

namespace {

std::string variant_label(Variant v) {
  switch (v) {
    case Variant::Base: return "hierarchical lstm (base)";
    case Variant::FeedResponse: return "+ feed de-lex response";
    case Variant::FeedSlots: return "+ feed goal slots";
    case Variant::FeedBoth: return "+ feed both";
  }
  return "?";
}

}  // namespace

VariantTable compare_variants(const ModelConfig& base, const Preprocessor& prep, const KnowledgeBase& kb,
                              std::span<const Dialog> train_dialogs, std::span<const Dialog> dev_dialogs,
                              std::span<const Dialog> test, const TrainingConfig& tc,
                              std::span<const std::uint64_t> seeds, EvalMode mode) {
  if (seeds.empty()) throw ConfigError("compare_variants needs at least one seed");
  VariantTable table;
  for (Variant v : kAllVariants) {
    VariantRow row;
    row.variant = v;
    ModelConfig config = configure_model(base, prep);
    config.variant = v;
    for (std::uint64_t seed : seeds) {
      TrainingConfig run = tc;
      run.seed = seed;
      try {
        const TrainResult trained = train(config, prep, train_dialogs, dev_dialogs, run);
        row.reports.push_back(evaluate(config, trained.params, prep, kb, test, mode));
      } catch (const NumericError& e) {
        row.diverged = true;
        row.error = e.what();
        break;
      }
    }
    if (!row.diverged) {
      const double n = static_cast<double>(row.reports.size());
      for (const auto& r : row.reports) {
        row.entity_pointer += 100.0 * r.entity_pointer / n;
        row.joint_goal += 100.0 * r.joint_goal / n;
        row.delex_response += 100.0 * r.delex_response / n;
        row.final_response += 100.0 * r.final_response / n;
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

json to_json(const VariantTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"variant", to_string(r.variant)},
                    {"entity_pointer", r.entity_pointer},
                    {"joint_goal", r.joint_goal},
                    {"delex_response", r.delex_response},
                    {"final_response", r.final_response},
                    {"seeds", r.reports.size()},
                    {"diverged", r.diverged},
                    {"error", r.error}});
  }
  return json{{"rows", rows}};
}

std::string format_variant_table(const VariantTable& t) {
  std::ostringstream out;
  char buf[200];
  out << "+--------------------------+----------------+------------+--------------+--------------+\n";
  out << "| Model                    | Entity Pointer | Joint Goal | De-lex Res.  | Final Res.   |\n";
  out << "+--------------------------+----------------+------------+--------------+--------------+\n";
  for (const auto& r : t.rows) {
    if (r.diverged) {
      std::snprintf(buf, sizeof buf, "| %-24s | %14s | %10s | %12s | %12s |\n", variant_label(r.variant).c_str(),
                    "diverged", "-", "-", "-");
    } else {
      std::snprintf(buf, sizeof buf, "| %-24s | %14.2f | %10.2f | %12.2f | %12.2f |\n",
                    variant_label(r.variant).c_str(), r.entity_pointer, r.joint_goal, r.delex_response,
                    r.final_response);
    }
    out << buf;
  }
  out << "+--------------------------+----------------+------------+--------------+--------------+\n";
  return out.str();
}

}  // namespace taskbot
