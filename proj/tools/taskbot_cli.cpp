// SPDX-License-Identifier: Apache-2.0
//
// taskbot: preprocess | train | eval | gradcheck | gen-synthetic | serve | chat
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "taskbot/checkpoint.hpp"
#include "taskbot/errors.hpp"
#include "taskbot/service.hpp"
#include "taskbot/synthetic.hpp"
#include "taskbot/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace taskbot;

namespace {

struct CorpusArgs {
  std::string corpus;
  std::string format = "jsonl";
  std::string schema;
  std::string kb;
  std::string lexicon;
  bool lenient = false;
};

void add_corpus_options(CLI::App* cmd, CorpusArgs& a, bool corpus_required, bool kb_required) {
  auto* c = cmd->add_option("--corpus", a.corpus, "Dialog corpus file")->check(CLI::ExistingFile);
  if (corpus_required) c->required();
  cmd->add_option("--format", a.format, "Corpus format: jsonl or babi")
      ->check(CLI::IsMember({"jsonl", "babi"}))
      ->capture_default_str();
  cmd->add_option("--schema", a.schema, "Slot schema JSON (default: built-in restaurant schema)")
      ->check(CLI::ExistingFile);
  auto* k = cmd->add_option("--kb", a.kb, "Knowledge base (JSON or CSV)")->check(CLI::ExistingFile);
  if (kb_required) k->required();
  cmd->add_option("--lexicon", a.lexicon, "Lexicon TSV (surface<TAB>placeholder) instead of one built from the KB")
      ->check(CLI::ExistingFile);
  cmd->add_flag("--lenient", a.lenient, "Skip malformed dialogs instead of failing");
}

SlotSchema load_schema_arg(const CorpusArgs& a) { return a.schema.empty() ? restaurant_schema() : load_schema(a.schema); }

std::vector<Dialog> load_corpus(const std::string& path, const CorpusArgs& a, const SlotSchema& schema) {
  ParseReport report;
  auto dialogs = parse_corpus(path, parse_corpus_format(a.format), schema, ParseOptions{a.lenient}, &report);
  for (const auto& d : report.diagnostics) std::cerr << "warning: " << d << "\n";
  if (report.skipped > 0) std::cerr << "skipped " << report.skipped << " malformed dialogs\n";
  return dialogs;
}

Lexicon lexicon_for(const CorpusArgs& a, const SlotSchema& schema, const KnowledgeBase& kb) {
  return a.lexicon.empty() ? Lexicon::build(schema, kb.entities()) : Lexicon::load_tsv(a.lexicon);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(static_cast<std::size_t>(std::stoul(item)));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::string kb_out;
  std::string kb_in;
  std::string schema_out;
  std::size_t dialogs = 2500;
  std::size_t entities = 200;
  std::uint64_t seed = 1;
  std::uint64_t kb_seed = 1;
};

int cmd_gen(const GenArgs& a) {
  const SlotSchema schema = restaurant_schema();
  const KnowledgeBase kb = a.kb_in.empty() ? make_synthetic_kb(schema, a.entities, a.kb_seed)
                                           : KnowledgeBase::load(a.kb_in, schema);
  const auto dialogs = generate_synthetic_corpus(kb, a.dialogs, a.seed);
  write_jsonl(a.out, dialogs);
  if (!a.kb_out.empty()) write_text(a.kb_out, kb.to_json().dump(2) + "\n");
  if (!a.schema_out.empty()) write_text(a.schema_out, schema_to_json(schema).dump(2) + "\n");
  std::cout << "wrote " << dialogs.size() << " dialogs to " << a.out << " (sha1 " << corpus_checksum(dialogs)
            << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  CorpusArgs corpus;
  std::string out_dir;
  std::size_t min_count = 1;
  std::size_t max_entities = 8;
};

int cmd_preprocess(const PreprocessArgs& a) {
  const SlotSchema schema = load_schema_arg(a.corpus);
  const KnowledgeBase kb = KnowledgeBase::load(a.corpus.kb, schema);
  const auto dialogs = load_corpus(a.corpus.corpus, a.corpus, schema);
  const Preprocessor prep =
      make_preprocessor(dialogs, schema, lexicon_for(a.corpus, schema, kb), a.max_entities, a.min_count);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);

  std::string vocab;
  for (const auto& t : prep.vocab.tokens()) vocab += t + "\n";
  write_text(dir / "vocab.txt", vocab);
  std::string cands;
  for (const auto& c : prep.candidates) cands += c + "\n";
  write_text(dir / "candidates.txt", cands);
  prep.lexicon.save_tsv(dir / "lexicon.tsv");

  std::string labels;
  std::size_t unknown = 0;
  for (const auto& d : dialogs) {
    const DerivedDialog derived = derive_labels(d, prep);
    json turns = json::array();
    for (std::size_t k = 0; k < derived.labels.size(); ++k) {
      const TurnLabels& l = derived.labels[k];
      json slots = json::object();
      for (std::size_t m = 0; m < schema.size(); ++m) {
        slots[schema[m].name] = schema[m].candidates[static_cast<std::size_t>(l.slots[m])];
      }
      unknown += derived.context[k].unknown_response;
      turns.push_back({{"slots", slots},
                       {"entity", l.entity == static_cast<long>(prep.max_entities) ? json(nullptr) : json(l.entity)},
                       {"kb_indicator", l.kb_indicator},
                       {"response", l.response},
                       {"template", derived.context[k].reference_template}});
    }
    labels += json{{"id", d.id}, {"turns", turns}}.dump() + "\n";
  }
  write_text(dir / "labels.jsonl", labels);
  std::cout << dialogs.size() << " dialogs, vocab " << prep.vocab.size() << ", " << prep.candidates.size()
            << " candidates, lexicon " << prep.lexicon.size() << " entries, " << unknown
            << " unknown responses -> " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  CorpusArgs corpus;
  std::string dev;
  std::string test;
  std::string out;
  std::string history;
  std::string report;
  std::string mode = "free";
  std::string variant = "base";
  std::size_t embedding_dim = 300;
  std::size_t utterance_hidden = 150;
  std::size_t dialog_hidden = 200;
  std::string head_hidden = "100";
  std::size_t max_entities = 8;
  std::size_t min_count = 1;
  std::vector<double> slot_weights;
  double entity_weight = 1.0;
  double response_weight = 1.0;
  TrainingConfig tc;
  std::string word_vectors;
  bool compare = false;
  std::vector<std::uint64_t> seeds;
  bool quiet = false;
};

int cmd_train(TrainArgs& a) {
  const SlotSchema schema = load_schema_arg(a.corpus);
  const KnowledgeBase kb = KnowledgeBase::load(a.corpus.kb, schema);
  auto dialogs = load_corpus(a.corpus.corpus, a.corpus, schema);
  std::vector<Dialog> train_set;
  std::vector<Dialog> dev_set;
  if (!a.dev.empty()) {
    train_set = std::move(dialogs);
    dev_set = load_corpus(a.dev, a.corpus, schema);
  } else {
    std::tie(train_set, dev_set) = split_train_dev(dialogs, a.tc.dev_fraction, a.tc.seed);
  }
  if (!a.word_vectors.empty()) a.tc.word_vectors = a.word_vectors;

  const Preprocessor prep =
      make_preprocessor(train_set, schema, lexicon_for(a.corpus, schema, kb), a.max_entities, a.min_count);
  ModelConfig base;
  base.embedding_dim = a.embedding_dim;
  base.utterance_hidden = a.utterance_hidden;
  base.dialog_hidden = a.dialog_hidden;
  base.head_hidden = parse_sizes(a.head_hidden);
  base.variant = parse_variant(a.variant);
  base.slot_weights = a.slot_weights;
  base.entity_weight = a.entity_weight;
  base.response_weight = a.response_weight;
  const ModelConfig config = configure_model(base, prep);

  std::vector<Dialog> test_set;
  if (!a.test.empty()) test_set = load_corpus(a.test, a.corpus, schema);
  const EvalMode mode = parse_eval_mode(a.mode);

  if (a.compare) {
    if (test_set.empty()) throw ConfigError("--compare-variants needs --test");
    std::vector<std::uint64_t> seeds = a.seeds.empty() ? std::vector<std::uint64_t>{a.tc.seed} : a.seeds;
    const VariantTable table = compare_variants(base, prep, kb, train_set, dev_set, test_set, a.tc, seeds, mode);
    std::cout << format_variant_table(table);
    if (!a.report.empty()) write_text(a.report, to_json(table).dump(2) + "\n");
    return 0;
  }

  if (a.out.empty()) throw ConfigError("train needs --out");
  const std::string checksum = corpus_checksum(train_set);
  const TrainResult result = train(config, prep, train_set, dev_set, a.tc, [&](const EpochMetrics& m, const ModelParams&) {
    if (!a.quiet) {
      std::fprintf(stderr, "epoch %3zu  train %.4f  dev %.4f  |g| %.3f  %.1fs\n", m.epoch, m.train_loss, m.dev_loss,
                   m.grad_norm, m.seconds);
    }
    return false;
  });

  json info = {{"seed", a.tc.seed},
               {"best_epoch", result.best_epoch},
               {"best_dev_loss", result.best_dev_loss},
               {"epochs_run", result.history.size()},
               {"early_stopped", result.early_stopped},
               {"train_dialogs", train_set.size()},
               {"dev_dialogs", dev_set.size()},
               {"corpus_sha1", checksum},
               {"training_config", to_json(a.tc)}};
  save_checkpoint(a.out, make_checkpoint(config, result.params, prep, info));
  std::cout << "saved " << a.out << " (best epoch " << result.best_epoch << ")\n";

  if (!a.history.empty()) {
    json hist = json::array();
    for (const auto& m : result.history) {
      hist.push_back({{"epoch", m.epoch}, {"train_loss", m.train_loss}, {"dev_loss", m.dev_loss},
                      {"grad_norm", m.grad_norm}});
    }
    write_text(a.history, hist.dump(2) + "\n");
  }
  if (!test_set.empty()) {
    const EvalReport r = evaluate(config, result.params, prep, kb, test_set, mode);
    std::cout << format_report_table(r);
    if (!a.report.empty()) {
      write_text(a.report, report_document(r, config, &a.tc, a.tc.seed, corpus_checksum(test_set)).dump(2) + "\n");
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  CorpusArgs corpus;
  std::string checkpoint;
  std::string mode = "teacher";
  std::string report = "report.json";
  std::size_t max_errors = 1000;
};

int cmd_eval(const EvalArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const KnowledgeBase kb = KnowledgeBase::load(a.corpus.kb, ckpt.config.slots);
  if (!a.corpus.schema.empty() && load_schema(a.corpus.schema) != ckpt.config.slots) {
    throw ConfigError("--schema does not match the checkpoint's slots");
  }
  Preprocessor prep = checkpoint_preprocessor(ckpt, kb);
  if (!a.corpus.lexicon.empty()) prep.lexicon = Lexicon::load_tsv(a.corpus.lexicon);
  const auto dialogs = load_corpus(a.corpus.corpus, a.corpus, prep.schema);
  const EvalReport r = evaluate(ckpt.config, ckpt.params, prep, kb, dialogs, parse_eval_mode(a.mode), a.max_errors);
  std::cout << format_report_table(r);
  const std::uint64_t seed = ckpt.info.value("seed", std::uint64_t{0});
  TrainingConfig tc;
  const bool has_tc = ckpt.info.contains("training_config");
  if (has_tc) tc = training_config_from_json(ckpt.info["training_config"]);
  write_text(a.report,
             report_document(r, ckpt.config, has_tc ? &tc : nullptr, seed, corpus_checksum(dialogs)).dump(2) + "\n");
  std::cout << "report written to " << a.report << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct GradArgs {
  std::string variant = "all";
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const GradArgs& a) {
  std::vector<Variant> variants;
  if (a.variant == "all") {
    variants.assign(std::begin(kAllVariants), std::end(kAllVariants));
  } else {
    variants.push_back(parse_variant(a.variant));
  }
  bool ok = true;
  for (Variant v : variants) {
    GradCheckFixture f = miniature_fixture(v, a.seed);
    const GradCheckResult r = gradient_check(f.config, f.params, f.dialog);
    const bool pass = r.max_relative_error < a.tolerance;
    ok = ok && pass;
    std::printf("%-14s %s  max rel err %.3e over %zu params (worst %s[%zu]: analytic %.6e numeric %.6e)\n",
                to_string(v).c_str(), pass ? "PASS" : "FAIL", r.max_relative_error, r.checked,
                r.worst_parameter.c_str(), r.worst_index, r.analytic, r.numeric);
  }
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string checkpoint;
  std::string kb;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  bool debug = false;
};

std::shared_ptr<const InferenceBundle> load_bundle(const ServeArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  KnowledgeBase kb = KnowledgeBase::load(a.kb, ckpt.config.slots);
  return std::make_shared<const InferenceBundle>(make_bundle(std::move(ckpt), std::move(kb)));
}

HttpService* g_service = nullptr;

int cmd_serve(const ServeArgs& a) {
  SessionManager sessions(load_bundle(a));
  HttpService service(sessions, a.static_dir.empty() ? std::nullopt : std::optional<fs::path>(a.static_dir));
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  std::cerr << "serving on http://" << a.host << ":" << a.port << "\n";
  service.listen(a.host, a.port);
  g_service = nullptr;
  return 0;
}

int cmd_chat(const ServeArgs& a) {
  Session session(load_bundle(a));
  std::string line;
  std::cout << "> " << std::flush;
  while (std::getline(std::cin, line)) {
    if (tokenize(line).empty()) {
      std::cout << "> " << std::flush;
      continue;
    }
    const SessionReply reply = session.step(line);
    if (a.debug && reply.api_call) std::cout << "  [" << *reply.api_call << "]\n";
    std::cout << reply.response << "\n";
    if (a.debug && reply.fallback) std::cout << "  [fallback: " << reply.error << "]\n";
    std::cout << "> " << std::flush;
  }
  std::cout << "\n";
  return 0;
}

// Config keys carry no section; they belong to whichever subcommand was given.
class FlatConfig : public CLI::ConfigBase {
 public:
  explicit FlatConfig(const CLI::App& app) : app_(app) {}
  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    auto items = CLI::ConfigBase::from_config(in);
    const auto subs = app_.get_subcommands();
    if (subs.empty()) return items;
    for (auto& item : items) {
      if (item.parents.empty()) item.parents.push_back(subs.front()->get_name());
    }
    return items;
  }

 private:
  const CLI::App& app_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"taskbot: end-to-end trainable task-oriented dialog system"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Flat key=value config file (flags override it)");
  app.config_formatter(std::make_shared<FlatConfig>(app));
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();  // lets `taskbot train --config f` reach the option above

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Generate a synthetic restaurant corpus and KB");
  gen_cmd->add_option("--out", gen.out, "Output corpus (JSONL)")->required();
  gen_cmd->add_option("--kb-out", gen.kb_out, "Write the generated KB here (JSON)");
  gen_cmd->add_option("--kb", gen.kb_in, "Use an existing KB instead of generating one")->check(CLI::ExistingFile);
  gen_cmd->add_option("--schema-out", gen.schema_out, "Write the slot schema here (JSON)");
  gen_cmd->add_option("--dialogs", gen.dialogs, "Number of dialogs")->capture_default_str();
  gen_cmd->add_option("--entities", gen.entities, "KB size")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Corpus seed")->capture_default_str();
  gen_cmd->add_option("--kb-seed", gen.kb_seed, "KB seed")->capture_default_str();

  PreprocessArgs pre;
  auto* pre_cmd = app.add_subcommand("preprocess", "Build vocabulary, candidates, lexicon and label caches");
  add_corpus_options(pre_cmd, pre.corpus, true, true);
  pre_cmd->add_option("--out-dir", pre.out_dir, "Output directory")->required();
  pre_cmd->add_option("--min-count", pre.min_count, "Minimum token count for the vocabulary")->capture_default_str();
  pre_cmd->add_option("--max-entities", pre.max_entities, "Entity pointer size")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_corpus_options(train_cmd, tr.corpus, true, true);
  train_cmd->add_option("--dev", tr.dev, "Dev corpus (default: hold out --dev-fraction of --corpus)")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--test", tr.test, "Evaluate on this corpus after training")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Checkpoint path");
  train_cmd->add_option("--history", tr.history, "Write per-epoch losses (JSON)");
  train_cmd->add_option("--report", tr.report, "Write the test report / variant table (JSON)");
  train_cmd->add_option("--mode", tr.mode, "Test evaluation mode: teacher or free")->capture_default_str();
  train_cmd->add_option("--variant", tr.variant, "base, feed_response, feed_slots or feed_both")
      ->capture_default_str();
  train_cmd->add_option("--embedding-dim", tr.embedding_dim)->capture_default_str();
  train_cmd->add_option("--utterance-hidden", tr.utterance_hidden)->capture_default_str();
  train_cmd->add_option("--dialog-hidden", tr.dialog_hidden)->capture_default_str();
  train_cmd->add_option("--head-hidden", tr.head_hidden, "Comma-separated head hidden sizes")->capture_default_str();
  train_cmd->add_option("--max-entities", tr.max_entities)->capture_default_str();
  train_cmd->add_option("--min-count", tr.min_count)->capture_default_str();
  train_cmd->add_option("--slot-weights", tr.slot_weights, "Loss weight per slot");
  train_cmd->add_option("--entity-weight", tr.entity_weight)->capture_default_str();
  train_cmd->add_option("--response-weight", tr.response_weight)->capture_default_str();
  train_cmd->add_option("--batch-size", tr.tc.batch_size)->capture_default_str();
  train_cmd->add_option("--epochs", tr.tc.epochs)->capture_default_str();
  train_cmd->add_option("--patience", tr.tc.patience, "Early-stop patience on dev loss (0: off)")
      ->capture_default_str();
  train_cmd->add_option("--dropout", tr.tc.dropout)->capture_default_str();
  train_cmd->add_option("--clip", tr.tc.clip_norm, "Global gradient-norm clip")->capture_default_str();
  train_cmd->add_option("--lr", tr.tc.adam.learning_rate)->capture_default_str();
  train_cmd->add_option("--seed", tr.tc.seed)->capture_default_str();
  train_cmd->add_option("--dev-fraction", tr.tc.dev_fraction)->capture_default_str();
  train_cmd->add_option("--word-vectors", tr.word_vectors, "Pre-trained word vectors (text format)")
      ->check(CLI::ExistingFile);
  train_cmd->add_flag("--freeze-embeddings", tr.tc.freeze_embeddings);
  train_cmd->add_flag("--compare-variants", tr.compare, "Train and evaluate all four variants on --test");
  train_cmd->add_option("--seeds", tr.seeds, "Seeds for --compare-variants");
  train_cmd->add_flag("--quiet", tr.quiet);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  add_corpus_options(eval_cmd, ev.corpus, true, true);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--mode", ev.mode, "teacher or free")->capture_default_str();
  eval_cmd->add_option("--report", ev.report, "Report path (JSON)")->capture_default_str();
  eval_cmd->add_option("--max-errors", ev.max_errors, "Per-turn errors kept in the report")->capture_default_str();

  GradArgs gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check on a miniature model");
  grad_cmd->add_option("--variant", gc.variant, "Variant or 'all'")->capture_default_str();
  grad_cmd->add_option("--seed", gc.seed)->capture_default_str();
  grad_cmd->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();

  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the chat HTTP API");
  serve_cmd->add_option("--checkpoint", sv.checkpoint)->required();
  serve_cmd->add_option("--kb", sv.kb)->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", sv.host)->capture_default_str();
  serve_cmd->add_option("--port", sv.port)->capture_default_str();
  serve_cmd->add_option("--static-dir", sv.static_dir, "Also serve static files from this directory");

  ServeArgs ch;
  auto* chat_cmd = app.add_subcommand("chat", "Talk to a checkpoint on the terminal");
  chat_cmd->add_option("--checkpoint", ch.checkpoint)->required();
  chat_cmd->add_option("--kb", ch.kb)->required()->check(CLI::ExistingFile);
  chat_cmd->add_flag("--debug", ch.debug, "Show API calls and fallbacks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*pre_cmd) return cmd_preprocess(pre);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*grad_cmd) return cmd_gradcheck(gc);
    if (*serve_cmd) return cmd_serve(sv);
    if (*chat_cmd) return cmd_chat(ch);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
