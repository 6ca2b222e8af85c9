// Shared test utilities: finite-difference checks and small fixtures.
#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "taskbot/checkpoint.hpp"
#include "taskbot/rng.hpp"
#include "taskbot/synthetic.hpp"
#include "taskbot/tensor.hpp"
#include "taskbot/train.hpp"

namespace tb_test {

using taskbot::Tape;
using taskbot::Tensor;
using taskbot::Var;

inline Tensor random_tensor(taskbot::Shape shape, taskbot::Rng& rng, double range = 1.0) {
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = rng.uniform(-range, range);
  return t;
}

// Builds a scalar from the leaves; the same function runs for the analytic
// pass and every perturbed evaluation.
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Max relative error |a - n| / max(|a| + |n|, floor) of tape gradients
// against central differences, over every element of every input.
inline double fd_max_rel_error(std::vector<Tensor>& inputs, const Builder& f, double eps = 1e-5,
                               double floor = 1e-6) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    std::vector<Var> leaves;
    for (auto& t : inputs) leaves.push_back(tape.leaf(t));
    tape.backward(f(tape, leaves));
  }
  auto eval = [&]() {
    Tape tape(false);
    std::vector<Var> leaves;
    for (auto& t : inputs) leaves.push_back(tape.leaf(static_cast<const Tensor&>(t)));
    return f(tape, leaves).value().item();
  };
  double worst = 0.0;
  for (auto& t : inputs) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + eps;
      const double up = eval();
      t[i] = saved - eps;
      const double down = eval();
      t[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = t.grad()[i];
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor));
    }
  }
  return worst;
}

// Random linear functional sum(x * w) so that every output element matters.
inline Var project(Tape& tape, Var x, std::uint64_t seed = 99) {
  taskbot::Rng rng(seed);
  return taskbot::sum(taskbot::mul(x, tape.constant(random_tensor(x.value().shape(), rng))));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("taskbot_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Small synthetic corpus with a matching preprocessor and a tiny model.
struct Tiny {
  taskbot::KnowledgeBase kb;
  std::vector<taskbot::Dialog> dialogs;
  taskbot::Preprocessor prep;
  taskbot::ModelConfig config;
};

inline Tiny tiny_setup(std::size_t n_dialogs = 30, std::uint64_t seed = 11) {
  Tiny t;
  const taskbot::SlotSchema schema = taskbot::restaurant_schema();
  t.kb = taskbot::make_synthetic_kb(schema, 40, seed);
  t.dialogs = taskbot::generate_synthetic_corpus(t.kb, n_dialogs, seed + 1);
  t.prep = taskbot::make_preprocessor(t.dialogs, schema, taskbot::Lexicon::build(schema, t.kb.entities()));
  taskbot::ModelConfig base;
  base.embedding_dim = 8;
  base.utterance_hidden = 6;
  base.dialog_hidden = 8;
  base.head_hidden = {6};
  t.config = taskbot::configure_model(base, t.prep);
  return t;
}

inline taskbot::TrainingConfig quick_training(std::size_t epochs = 2) {
  taskbot::TrainingConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 8;
  tc.dropout = 0.2;
  tc.patience = 0;
  tc.adam.learning_rate = 0.01;
  return tc;
}

// Tiny model trained briefly once per process; good enough to follow the
// synthetic flow on the greeting turn.
inline std::shared_ptr<const taskbot::InferenceBundle> trained_bundle() {
  static const std::shared_ptr<const taskbot::InferenceBundle> bundle = [] {
    Tiny t = tiny_setup(60, 21);
    taskbot::TrainingConfig tc = quick_training(30);
    tc.dropout = 0.0;
    tc.adam.learning_rate = 0.02;
    const auto trained = taskbot::train(t.config, t.prep, t.dialogs, {}, tc);
    auto ckpt = taskbot::make_checkpoint(t.config, trained.params, t.prep, nlohmann::json{{"seed", 1}});
    return std::make_shared<const taskbot::InferenceBundle>(taskbot::make_bundle(std::move(ckpt), t.kb));
  }();
  return bundle;
}

// Copy of `bundle` whose response head always picks `response`.
inline std::shared_ptr<const taskbot::InferenceBundle> forced_response(const taskbot::InferenceBundle& bundle,
                                                                        std::size_t response) {
  auto out = std::make_shared<taskbot::InferenceBundle>(bundle);
  auto& head = out->params.response_head;
  for (auto& w : head.weights.back().data()) w = 0.0;
  for (auto& b : head.biases.back().data()) b = 0.0;
  head.biases.back()[response] = 50.0;
  return out;
}

}  // namespace tb_test
