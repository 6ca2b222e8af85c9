// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch training, evaluation metrics, finite-difference gradient
// checking and architecture-variant comparison.
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "taskbot/corpus.hpp"
#include "taskbot/model.hpp"

namespace taskbot {

struct TrainingConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  /// Epochs without a dev-loss improvement before stopping; 0 disables.
  std::size_t patience = 5;
  double dropout = 0.5;
  double clip_norm = 5.0;
  AdamConfig adam;
  std::uint64_t seed = 1;
  /// Fraction of the training dialogs held out as dev set.
  double dev_fraction = 0.1;
  std::optional<std::filesystem::path> word_vectors;
  bool freeze_embeddings = false;

  void validate() const;
};

nlohmann::json to_json(const TrainingConfig& config);
TrainingConfig training_config_from_json(const nlohmann::json& j);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean joint loss per dialog
  double dev_loss = 0.0;    // NaN without a dev set
  double grad_norm = 0.0;   // mean pre-clipping global norm
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams params;  // best dev-loss epoch (last epoch without a dev set)
  std::size_t best_epoch = 0;
  double best_dev_loss = 0.0;
  bool early_stopped = false;
  std::vector<EpochMetrics> history;
};

/// Called after every epoch with the current parameters; returning true
/// stops training.
using EpochCallback = std::function<bool(const EpochMetrics&, const ModelParams&)>;

/// Deterministic split by dialog: (train, dev).
std::pair<std::vector<Dialog>, std::vector<Dialog>> split_train_dev(std::span<const Dialog> dialogs,
                                                                    double dev_fraction, std::uint64_t seed);

/// Vocabulary and candidate list from the training dialogs, lexicon from the
/// schema and KB entities.
Preprocessor make_preprocessor(std::span<const Dialog> train, const SlotSchema& schema, Lexicon lexicon,
                               std::size_t max_entities = 8, std::size_t min_count = 1);

/// Copies the corpus-dependent sizes (slots, candidates, vocab, entities) into
/// `base`.
ModelConfig configure_model(ModelConfig base, const Preprocessor& prep);

std::vector<EncodedDialog> encode_dialogs(std::span<const Dialog> dialogs, const Preprocessor& prep);

/// Mean joint loss per dialog with dropout off.
double dataset_loss(const ModelConfig& config, const ModelParams& params, std::span<const EncodedDialog> dialogs,
                    std::size_t batch_size = 32);

/// Trains from `init` (or a fresh init_model(config, seed)). A non-finite loss
/// or gradient aborts with NumericError naming the epoch and batch.
TrainResult train_encoded(const ModelConfig& config, std::span<const EncodedDialog> train,
                          std::span<const EncodedDialog> dev, const TrainingConfig& tc,
                          const ModelParams* init = nullptr, const EpochCallback& on_epoch = {});

/// Encodes the dialogs and optionally loads pre-trained word vectors first.
TrainResult train(const ModelConfig& config, const Preprocessor& prep, std::span<const Dialog> train,
                  std::span<const Dialog> dev, const TrainingConfig& tc, const EpochCallback& on_epoch = {});

enum class EvalMode { TeacherForced, FreeRunning };

std::string to_string(EvalMode mode);
EvalMode parse_eval_mode(const std::string& name);

/// What the system produced at one turn.
struct TurnPrediction {
  std::vector<std::size_t> slots;
  std::size_t entity = 0;
  std::size_t response = 0;
  std::string text;
  bool lexicalisation_failed = false;
};

struct TurnError {
  std::string dialog_id;
  std::size_t turn = 0;
  std::string field;
  std::string expected;
  std::string predicted;
};

struct EvalReport {
  EvalMode mode = EvalMode::TeacherForced;
  std::size_t dialogs = 0;
  std::size_t turns = 0;
  std::size_t api_turns = 0;
  std::size_t unknown_responses = 0;
  std::size_t lexicalisation_failures = 0;

  std::vector<std::string> slot_names;
  std::vector<double> slot_accuracy;
  double entity_pointer = 0.0;
  double joint_goal = 0.0;
  /// Over all system turns, API calls included. Final needs the right
  /// template and the right text; per-response only the text.
  double delex_response = 0.0;
  double final_response = 0.0;
  double per_response = 0.0;

  std::vector<TurnError> errors;
  std::size_t errors_dropped = 0;

  bool operator==(const EvalReport&) const;
};

nlohmann::json to_json(const EvalReport& report);
std::string format_report_table(const EvalReport& report);

/// Scores per-turn predictions against the dialogs' derived labels.
EvalReport score_predictions(const Preprocessor& prep, std::span<const Dialog> dialogs,
                             const std::vector<std::vector<TurnPrediction>>& predictions, EvalMode mode,
                             std::size_t max_errors = 1000);

/// Teacher-forced: every turn sees ground-truth indicators and feedback, and
/// entities resolve against the reference KB result. Free-running: the
/// model's own API calls query `kb` and its own decisions are fed back.
EvalReport evaluate(const ModelConfig& config, const ModelParams& params, const Preprocessor& prep,
                    const KnowledgeBase& kb, std::span<const Dialog> dialogs, EvalMode mode,
                    std::size_t max_errors = 1000);

/// Git-style SHA-1 ("blob <len>\0" + content) of the corpus serialized as
/// JSONL.
std::string corpus_checksum(std::span<const Dialog> dialogs);

/// One object: metrics, model/training configuration, seed and corpus
/// checksum.
nlohmann::json report_document(const EvalReport& report, const ModelConfig& config, const TrainingConfig* tc,
                               std::uint64_t seed, const std::string& checksum);

struct GradCheckOptions {
  /// Larger than the per-op checks use: the full model's loss is big enough
  /// that 1e-5 steps drown its smallest gradients in rounding noise.
  double epsilon = 1e-4;
  /// Denominator floor of the relative error |a − n| / max(|a| + |n|, floor).
  double floor = 1e-6;
  std::optional<Op> corrupt;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::vector<Op> ops;  // ops recorded by the analytic pass
};

/// Compares tape gradients of joint_loss on `dialog` with central differences
/// over every parameter element. Dropout is off.
GradCheckResult gradient_check(const ModelConfig& config, ModelParams params, const EncodedDialog& dialog,
                               const GradCheckOptions& opts = {});

/// A miniature model (vocab 10, hidden 4 and 3) and a 3-turn dialog with
/// random labels for gradient checking.
struct GradCheckFixture {
  ModelConfig config;
  ModelParams params;
  EncodedDialog dialog;
};

GradCheckFixture miniature_fixture(Variant variant, std::uint64_t seed);

struct VariantRow {
  Variant variant = Variant::Base;
  /// Percentages averaged over seeds.
  double entity_pointer = 0.0;
  double joint_goal = 0.0;
  double delex_response = 0.0;
  double final_response = 0.0;
  std::vector<EvalReport> reports;  // one per seed
  bool diverged = false;
  std::string error;
};

struct VariantTable {
  std::vector<VariantRow> rows;
};

nlohmann::json to_json(const VariantTable& table);
std::string format_variant_table(const VariantTable& table);

/// Trains and evaluates every architecture variant for each seed.
VariantTable compare_variants(const ModelConfig& base, const Preprocessor& prep, const KnowledgeBase& kb,
                              std::span<const Dialog> train, std::span<const Dialog> dev,
                              std::span<const Dialog> test, const TrainingConfig& tc,
                              std::span<const std::uint64_t> seeds, EvalMode mode = EvalMode::FreeRunning);

}  // namespace taskbot
