// Acceptance suite: one PASS/FAIL/SKIP line per criterion, nonzero exit on
// any failure.
//
//   acceptance [--workdir DIR] [--only NAME] [--dstc2 DIR]
//
// The --dstc2 directory must hold train.jsonl, dev.jsonl, test.jsonl,
// kb.json and schema.json in the taskbot corpus format.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "taskbot/checkpoint.hpp"
#include "taskbot/errors.hpp"
#include "taskbot/synthetic.hpp"
#include "taskbot/train.hpp"

using namespace taskbot;
namespace fs = std::filesystem;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status = Status::Fail;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double min_slot(const EvalReport& r) { return *std::min_element(r.slot_accuracy.begin(), r.slot_accuracy.end()); }

// Metric laws checked on every report the suite produces.
std::vector<std::string> law_violations;

void check_laws(const std::string& where, const EvalReport& r) {
  if (r.joint_goal > min_slot(r)) law_violations.push_back(where + ": joint goal above a per-slot accuracy");
  if (r.final_response > r.delex_response) law_violations.push_back(where + ": final above de-lex response");
}

EvalReport checked_evaluate(const std::string& where, const ModelConfig& config, const ModelParams& params,
                            const Preprocessor& prep, const KnowledgeBase& kb, std::span<const Dialog> dialogs,
                            EvalMode mode) {
  const EvalReport a = evaluate(config, params, prep, kb, dialogs, mode);
  const EvalReport b = evaluate(config, params, prep, kb, dialogs, mode);
  if (to_json(a).dump() != to_json(b).dump()) law_violations.push_back(where + ": repeated evaluation differs");
  check_laws(where, a);
  return a;
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (Variant v : kAllVariants) {
    const GradCheckFixture f = miniature_fixture(v, 1);
    const GradCheckResult r = gradient_check(f.config, f.params, f.dialog);
    checked += r.checked;
    if (!(r.max_relative_error < 1e-4)) {
      return {Status::Fail, fmt("%s: max rel error %.3g at %s[%zu]", to_string(v).c_str(), r.max_relative_error,
                                r.worst_parameter.c_str(), r.worst_index)};
    }
    worst = std::max(worst, r.max_relative_error);
  }

  // Every op recorded by the full model must be covered by the check.
  const GradCheckFixture f = miniature_fixture(Variant::FeedBoth, 2);
  const GradCheckResult clean = gradient_check(f.config, f.params, f.dialog);
  std::set<Op> ops(clean.ops.begin(), clean.ops.end());
  ops.erase(Op::Leaf);
  ops.erase(Op::Constant);
  double weakest = std::numeric_limits<double>::infinity();
  for (Op op : ops) {
    GradCheckOptions opts;
    opts.corrupt = op;
    const double err = gradient_check(f.config, f.params, f.dialog, opts).max_relative_error;
    if (!(err > 1e-4)) return {Status::Fail, fmt("corrupted %s backward went undetected (%.3g)", op_name(op), err)};
    weakest = std::min(weakest, err);
  }
  const double secs = seconds_since(start);
  const std::string detail = fmt("%zu params x 4 variants, max rel err %.2e; %zu mutated ops all caught (min err %.2e); %.1fs",
                                 checked / 4, worst, ops.size(), weakest, secs);
  if (secs >= 60.0) return {Status::Fail, detail + " exceeds 60s"};
  return {Status::Pass, detail};
}

Outcome analytic_loss() {
  ModelConfig c;
  c.slots = restaurant_schema();
  c.response_count = 78;
  c.vocab_size = 50;
  c.zero_init_heads = true;
  if (c.slots[0].candidates.size() != 7 || c.slots[1].candidates.size() != 93 || c.slots[2].candidates.size() != 5) {
    return {Status::Fail, "restaurant schema arities are not 5/91/3 plus dontcare/none"};
  }
  const double per_turn = std::log(7.0) + std::log(93.0) + std::log(5.0) + std::log(9.0) + std::log(78.0);
  double worst = 0.0;
  Rng rng(4);
  for (Variant v : kAllVariants) {
    c.variant = v;
    const ModelParams p = init_model(c, 1);
    std::vector<EncodedDialog> dialogs;
    std::size_t turns = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      EncodedDialog d;
      const std::size_t n = 1 + rng.below(7);
      for (std::size_t k = 0; k < n; ++k) {
        std::vector<std::size_t> u;
        for (std::size_t t = 0, len = 1 + rng.below(8); t < len; ++t) u.push_back(1 + rng.below(c.vocab_size - 1));
        d.utterances.push_back(std::move(u));
        TurnLabels l;
        for (const auto& s : c.slots) l.slots.push_back(static_cast<long>(rng.below(s.candidates.size())));
        l.entity = static_cast<long>(rng.below(c.entity_arity()));
        l.response = static_cast<long>(rng.below(c.response_count));
        l.kb_indicator = static_cast<int>(rng.below(2));
        d.labels.push_back(std::move(l));
      }
      turns += n;
      dialogs.push_back(std::move(d));
    }
    const double expected = per_turn * static_cast<double>(turns) / static_cast<double>(dialogs.size());
    worst = std::max(worst, std::abs(dataset_loss(c, p, dialogs, 4) - expected));
  }
  const std::string detail = fmt("ln7+ln93+ln5+ln9+ln78 = %.9f per turn; max deviation %.2e", per_turn, worst);
  return {worst < 1e-6 ? Status::Pass : Status::Fail, detail};
}

Outcome overfit_smoke() {
  const auto start = Clock::now();
  const SlotSchema schema = restaurant_schema();
  const KnowledgeBase kb = make_synthetic_kb(schema, 200, 1);
  const auto dialogs = generate_synthetic_corpus(kb, 10, 3);
  const Preprocessor prep = make_preprocessor(dialogs, schema, Lexicon::build(schema, kb.entities()));
  ModelConfig base;
  base.embedding_dim = 32;
  base.utterance_hidden = 32;
  base.dialog_hidden = 48;
  base.head_hidden = {32};
  const ModelConfig config = configure_model(base, prep);
  TrainingConfig tc;
  tc.epochs = 200;
  tc.batch_size = 2;
  tc.dropout = 0.0;
  tc.patience = 0;
  tc.adam.learning_rate = 0.005;

  std::optional<EvalReport> solved;
  std::size_t solved_at = 0;
  train(config, prep, dialogs, {}, tc, [&](const EpochMetrics& m, const ModelParams& params) {
    if (m.epoch % 5 != 0) return false;
    const EvalReport r = checked_evaluate("overfit", config, params, prep, kb, dialogs, EvalMode::TeacherForced);
    if (r.per_response == 1.0 && r.joint_goal == 1.0 && r.entity_pointer == 1.0) {
      solved = r;
      solved_at = m.epoch;
      return true;
    }
    return false;
  });
  const double secs = seconds_since(start);
  if (!solved) return {Status::Fail, fmt("not at 100%% after 200 epochs (%.1fs)", secs)};
  const std::string detail = fmt("100%% per-response/joint/entity at epoch %zu; %.1fs", solved_at, secs);
  if (secs >= 300.0) return {Status::Fail, detail + " exceeds 5 min"};
  return {Status::Pass, detail};
}

Outcome synthetic_end_to_end(const fs::path& workdir) {
  const auto start = Clock::now();
  const SlotSchema schema = restaurant_schema();
  const KnowledgeBase kb = make_synthetic_kb(schema, 200, 1);
  const auto all = generate_synthetic_corpus(kb, 2500, 7);
  const std::vector<Dialog> pool(all.begin(), all.begin() + 2000);
  const std::vector<Dialog> test(all.begin() + 2000, all.end());
  const auto [train_d, dev_d] = split_train_dev(pool, 0.1, 1);
  const Preprocessor prep = make_preprocessor(train_d, schema, Lexicon::build(schema, kb.entities()));

  ModelConfig base;
  base.embedding_dim = 64;
  base.utterance_hidden = 64;
  base.dialog_hidden = 96;
  base.head_hidden = {64};
  TrainingConfig tc;
  tc.epochs = 70;
  tc.patience = 10;
  tc.batch_size = 32;
  tc.dropout = 0.2;
  tc.adam.learning_rate = 0.004;
  const std::uint64_t seeds[] = {1};

  const VariantTable table = compare_variants(base, prep, kb, train_d, dev_d, test, tc, seeds, EvalMode::FreeRunning);
  const std::string text = format_variant_table(table);
  std::cout << text;
  std::ofstream(workdir / "variants.txt") << text;
  std::ofstream(workdir / "variants.json") << to_json(table).dump(2) << "\n";

  std::string diverged;
  for (const auto& row : table.rows) {
    if (row.diverged) diverged += " " + to_string(row.variant);
    for (const auto& r : row.reports) check_laws("synthetic " + to_string(row.variant), r);
  }
  const VariantRow& b = table.rows.front();
  const double secs = seconds_since(start);
  std::string detail =
      fmt("base: joint %.2f%%, final %.2f%% on 500 held-out (free-running); %zu variants; %.0fs", b.joint_goal,
          b.final_response, table.rows.size(), secs);
  if (!diverged.empty()) return {Status::Fail, detail + "; diverged:" + diverged};
  if (table.rows.size() != 4) return {Status::Fail, detail};
  if (b.joint_goal < 95.0 || b.final_response < 90.0) return {Status::Fail, detail + "; below 95/90"};
  if (secs >= 1800.0) return {Status::Fail, detail + " exceeds 30 min"};
  return {Status::Pass, detail};
}

Outcome determinism(const fs::path& workdir) {
  const SlotSchema schema = restaurant_schema();
  const KnowledgeBase kb = make_synthetic_kb(schema, 60, 5);
  const auto dialogs = generate_synthetic_corpus(kb, 120, 6);
  const auto test = generate_synthetic_corpus(kb, 30, 8);
  auto run = [&](std::uint64_t seed, const std::string& tag) {
    const auto [train_d, dev_d] = split_train_dev(dialogs, 0.1, seed);
    const Preprocessor prep = make_preprocessor(train_d, schema, Lexicon::build(schema, kb.entities()));
    ModelConfig base;
    base.embedding_dim = 16;
    base.utterance_hidden = 12;
    base.dialog_hidden = 16;
    base.head_hidden = {12};
    base.variant = Variant::FeedBoth;
    const ModelConfig config = configure_model(base, prep);
    TrainingConfig tc;
    tc.epochs = 3;
    tc.batch_size = 16;
    tc.seed = seed;
    const TrainResult trained = train(config, prep, train_d, dev_d, tc);
    const fs::path ckpt = workdir / ("determinism_" + tag + ".ckpt");
    save_checkpoint(ckpt, make_checkpoint(config, trained.params, prep, {{"seed", seed}}));
    const EvalReport r = checked_evaluate("determinism", config, trained.params, prep, kb, test, EvalMode::FreeRunning);
    const std::string report = report_document(r, config, &tc, seed, corpus_checksum(dialogs)).dump(2);
    std::ifstream in(ckpt, std::ios::binary);
    return std::pair{std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()), report};
  };
  const auto a = run(3, "a");
  const auto b = run(3, "b");
  const auto c = run(4, "c");
  if (a.first != b.first) return {Status::Fail, "same seed, different checkpoint bytes"};
  if (a.second != b.second) return {Status::Fail, "same seed, different report"};
  if (a.first == c.first) return {Status::Fail, "different seeds gave identical checkpoints"};
  return {Status::Pass, fmt("two seed-3 runs: %zu-byte checkpoints and reports identical; seed 4 differs",
                            a.first.size())};
}

// Runs after every other criterion so that it sees all their reports.
Outcome metric_laws() {
  // Fixed-prediction stress on top of the model reports collected so far.
  const SlotSchema schema = restaurant_schema();
  const KnowledgeBase kb = make_synthetic_kb(schema, 100, 9);
  const auto dialogs = generate_synthetic_corpus(kb, 40, 9);
  const Preprocessor prep = make_preprocessor(dialogs, schema, Lexicon::build(schema, kb.entities()));
  Rng rng(9);
  std::size_t reports = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<TurnPrediction>> preds;
    const double rate = rng.uniform(0.0, 0.5);
    for (const auto& d : dialogs) {
      const DerivedDialog derived = derive_labels(d, prep);
      std::vector<TurnPrediction> turns;
      for (std::size_t k = 0; k < d.turns.size(); ++k) {
        TurnPrediction p;
        for (std::size_t m = 0; m < schema.size(); ++m) {
          const auto truth = static_cast<std::size_t>(derived.labels[k].slots[m]);
          p.slots.push_back(rng.bernoulli(rate) ? rng.below(schema[m].candidates.size()) : truth);
        }
        p.entity = rng.bernoulli(rate) ? rng.below(prep.max_entities + 1)
                                       : static_cast<std::size_t>(derived.labels[k].entity);
        p.response = rng.bernoulli(rate) ? rng.below(prep.candidates.size())
                                         : static_cast<std::size_t>(derived.labels[k].response);
        p.text = rng.bernoulli(rate) ? "wrong" : derived.context[k].reference;
        turns.push_back(std::move(p));
      }
      preds.push_back(std::move(turns));
    }
    const EvalReport a = score_predictions(prep, dialogs, preds, EvalMode::FreeRunning);
    const EvalReport b = score_predictions(prep, dialogs, preds, EvalMode::FreeRunning);
    if (to_json(a).dump() != to_json(b).dump()) law_violations.push_back("scoring: repeated scoring differs");
    check_laws("scoring", a);
    ++reports;
  }
  if (!law_violations.empty()) return {Status::Fail, law_violations.front()};
  return {Status::Pass, fmt("laws hold on all model evaluations of this run plus %zu scored perturbations", reports)};
}

Outcome dstc2(const std::optional<fs::path>& dir, const fs::path& workdir) {
  if (!dir) return {Status::Skip, "no DSTC2 corpus supplied (--dstc2 DIR)"};
  const SlotSchema schema = load_schema(*dir / "schema.json");
  const KnowledgeBase kb = KnowledgeBase::load(*dir / "kb.json", schema);
  const auto train_d = parse_corpus(*dir / "train.jsonl", CorpusFormat::Jsonl, schema);
  const auto dev_d = parse_corpus(*dir / "dev.jsonl", CorpusFormat::Jsonl, schema);
  const auto test = parse_corpus(*dir / "test.jsonl", CorpusFormat::Jsonl, schema);
  const Preprocessor prep = make_preprocessor(train_d, schema, Lexicon::build(schema, kb.entities()));
  TrainingConfig tc;
  const std::uint64_t seeds[] = {1};
  const VariantTable table = compare_variants(ModelConfig{}, prep, kb, train_d, dev_d, test, tc, seeds);
  std::cout << format_variant_table(table);
  std::ofstream(workdir / "dstc2_variants.json") << to_json(table).dump(2) << "\n";
  const VariantRow& b = table.rows.front();
  if (b.diverged) return {Status::Fail, "base variant diverged"};
  const double per_response = 100.0 * b.reports.front().per_response;
  bool ordering = true;
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    ordering = ordering && !table.rows[i].diverged && b.final_response > table.rows[i].final_response;
  }
  const std::string detail = fmt("per-response %.2f (target 52.8±3), joint %.2f (target 73±4), base best: %s",
                                 per_response, b.joint_goal, ordering ? "yes" : "no");
  const bool ok = std::abs(per_response - 52.8) <= 3.0 && std::abs(b.joint_goal - 73.0) <= 4.0 && ordering;
  return {ok ? Status::Pass : Status::Fail, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"taskbot acceptance suite"};
  std::string workdir = "acceptance_work";
  std::string only;
  std::optional<std::string> dstc2_dir;
  app.add_option("--workdir", workdir, "Scratch directory");
  app.add_option("--only", only, "Run a single criterion");
  app.add_option("--dstc2", dstc2_dir, "Directory with the converted DSTC2 corpus");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient_integrity", gradient_integrity},
      {"analytic_loss", analytic_loss},
      {"overfit_smoke", overfit_smoke},
      {"synthetic_end_to_end", [&] { return synthetic_end_to_end(workdir); }},
      {"determinism", [&] { return determinism(workdir); }},
      {"metric_laws", metric_laws},
      {"dstc2_reproduction", [&] {
         return dstc2(dstc2_dir ? std::optional<fs::path>(*dstc2_dir) : std::nullopt, workdir);
       }},
  };

  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && name != only) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Skip ? "SKIP" : "FAIL";
    std::cout << tag << "  " << name << "  " << o.detail << std::endl;
    failures += o.status == Status::Fail;
  }
  return failures == 0 ? 0 : 1;
}
