// Python extension: thin wrappers over the C++ library. Structured values
// cross the boundary as JSON text; the taskbot package decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "taskbot/checkpoint.hpp"
#include "taskbot/errors.hpp"
#include "taskbot/service.hpp"
#include "taskbot/synthetic.hpp"
#include "taskbot/train.hpp"

namespace py = pybind11;
using namespace taskbot;
using nlohmann::json;

namespace {

struct Bot {
  std::shared_ptr<const InferenceBundle> bundle;
};

Bot load_bot(const std::string& checkpoint, const std::string& kb_path) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  KnowledgeBase kb = KnowledgeBase::load(kb_path, ckpt.config.slots);
  return Bot{std::make_shared<const InferenceBundle>(make_bundle(std::move(ckpt), std::move(kb)))};
}

// Owns the session registry and the HTTP server so both live as long as the
// Python object.
class Server {
 public:
  Server(const Bot& bot, const std::string& host, int port)
      : sessions_(bot.bundle), service_(sessions_), port_(service_.start(host, port)) {}
  int port() const { return port_; }
  void stop() { service_.stop(); }

 private:
  SessionManager sessions_;
  HttpService service_;
  int port_;
};

std::pair<std::string, std::string> gen_synthetic(std::size_t dialogs, std::size_t entities, std::uint64_t seed,
                                                  std::uint64_t kb_seed) {
  const KnowledgeBase kb = make_synthetic_kb(restaurant_schema(), entities, kb_seed);
  const auto corpus = generate_synthetic_corpus(kb, dialogs, seed);
  return {serialize_jsonl(corpus), kb.to_json().dump()};
}

std::vector<Dialog> read_corpus(const std::string& path, const SlotSchema& schema) {
  return parse_corpus(path, CorpusFormat::Jsonl, schema);
}

std::string train_model(const std::string& corpus, const std::string& kb_path, const std::string& out,
                        const std::string& model_json, const std::string& training_json) {
  const SlotSchema schema = restaurant_schema();
  const KnowledgeBase kb = KnowledgeBase::load(kb_path, schema);
  const auto dialogs = read_corpus(corpus, schema);
  const json m = json::parse(model_json);
  const TrainingConfig tc = training_config_from_json(json::parse(training_json));
  tc.validate();
  const auto [train_d, dev_d] = split_train_dev(dialogs, tc.dev_fraction, tc.seed);
  const Preprocessor prep = make_preprocessor(train_d, schema, Lexicon::build(schema, kb.entities()),
                                              m.value("max_entities", std::size_t{8}));
  ModelConfig base;
  base.embedding_dim = m.value("embedding_dim", base.embedding_dim);
  base.utterance_hidden = m.value("utterance_hidden", base.utterance_hidden);
  base.dialog_hidden = m.value("dialog_hidden", base.dialog_hidden);
  base.head_hidden = m.value("head_hidden", base.head_hidden);
  base.variant = parse_variant(m.value("variant", std::string("base")));
  const ModelConfig config = configure_model(base, prep);
  const TrainResult r = train(config, prep, train_d, dev_d, tc);
  json info = {{"seed", tc.seed},
               {"best_epoch", r.best_epoch},
               {"epochs_run", r.history.size()},
               {"corpus_sha1", corpus_checksum(dialogs)},
               {"training_config", to_json(tc)}};
  save_checkpoint(out, make_checkpoint(config, r.params, prep, info));
  json history = json::array();
  for (const auto& e : r.history) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_loss", e.dev_loss}});
  }
  return json{{"best_epoch", r.best_epoch}, {"history", history}}.dump();
}

std::string evaluate_model(const std::string& checkpoint, const std::string& kb_path, const std::string& corpus,
                           const std::string& mode) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  const KnowledgeBase kb = KnowledgeBase::load(kb_path, ckpt.config.slots);
  const Preprocessor prep = checkpoint_preprocessor(ckpt, kb);
  const auto dialogs = read_corpus(corpus, prep.schema);
  const EvalReport r = evaluate(ckpt.config, ckpt.params, prep, kb, dialogs, parse_eval_mode(mode));
  return to_json(r).dump();
}

std::string gradcheck(const std::string& variant, std::uint64_t seed) {
  const GradCheckFixture f = miniature_fixture(parse_variant(variant), seed);
  const GradCheckResult r = gradient_check(f.config, f.params, f.dialog);
  return json{{"max_relative_error", r.max_relative_error},
              {"worst_parameter", r.worst_parameter},
              {"checked", r.checked}}
      .dump();
}

}  // namespace

PYBIND11_MODULE(_taskbot, m) {
  m.doc() = "taskbot native module";

  // Translators run newest first, so the base class goes in first.
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());

  m.def("gen_synthetic", &gen_synthetic, py::arg("dialogs"), py::arg("entities") = 200, py::arg("seed") = 1,
        py::arg("kb_seed") = 1);
  m.def("corpus_checksum", [](const std::string& path) {
    return corpus_checksum(read_corpus(path, restaurant_schema()));
  });
  m.def("train", &train_model, py::arg("corpus"), py::arg("kb"), py::arg("out"), py::arg("model_json"),
        py::arg("training_json"), py::call_guard<py::gil_scoped_release>());
  m.def("evaluate", &evaluate_model, py::arg("checkpoint"), py::arg("kb"), py::arg("corpus"), py::arg("mode"),
        py::call_guard<py::gil_scoped_release>());
  m.def("gradcheck", &gradcheck, py::arg("variant"), py::arg("seed") = 1);

  py::class_<Bot>(m, "Bot")
      .def(py::init(&load_bot), py::arg("checkpoint"), py::arg("kb"))
      .def("meta", [](const Bot& b) { return meta_json(*b.bundle).dump(); });

  py::class_<Session>(m, "Session")
      .def(py::init([](const Bot& b) { return std::make_unique<Session>(b.bundle); }), py::arg("bot"))
      .def("step", [](Session& s, const std::string& text) { return s.step(text).payload.dump(); }, py::arg("text"))
      .def("state", [](const Session& s) { return s.state_json().dump(); })
      .def("transcript", &Session::transcript);

  py::class_<Server>(m, "Server")
      .def(py::init<const Bot&, const std::string&, int>(), py::arg("bot"), py::arg("host") = "127.0.0.1",
           py::arg("port") = 0)
      .def_property_readonly("port", &Server::port)
      .def("stop", &Server::stop);
}
