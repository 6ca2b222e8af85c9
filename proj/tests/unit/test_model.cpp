#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "taskbot/errors.hpp"
#include "taskbot/model.hpp"
#include "taskbot/synthetic.hpp"

using namespace taskbot;

namespace {

ModelConfig restaurant_config(Variant v = Variant::Base) {
  ModelConfig c;
  c.slots = restaurant_schema();
  c.response_count = 78;
  c.vocab_size = 20;
  c.embedding_dim = 6;
  c.utterance_hidden = 5;
  c.dialog_hidden = 7;
  c.head_hidden = {4};
  c.variant = v;
  return c;
}

EncodedDialog random_dialog(const ModelConfig& c, std::size_t turns, std::uint64_t seed) {
  Rng rng(seed);
  EncodedDialog d;
  for (std::size_t k = 0; k < turns; ++k) {
    std::vector<std::size_t> u(1 + rng.below(4));
    for (auto& t : u) t = 1 + rng.below(c.vocab_size - 1);
    d.utterances.push_back(u);
    TurnLabels l;
    for (const auto& s : c.slots) l.slots.push_back(static_cast<long>(rng.below(s.candidates.size())));
    l.entity = static_cast<long>(rng.below(c.entity_arity()));
    l.response = static_cast<long>(rng.below(c.response_count));
    l.kb_indicator = static_cast<int>(rng.below(2));
    d.labels.push_back(l);
  }
  return d;
}

std::vector<TurnOutput> run(Tape& tape, const ModelConfig& c, const ModelParams& p, const EncodedDialog& d) {
  const BoundModel m = bind(tape, p);
  const EncodedDialog* batch[] = {&d};
  return forward_teacher_forced(c, m, batch);
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (Variant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variant("feed_everything"), ConfigError);
}

TEST_CASE("slot specs carry dontcare and none") {
  const SlotSpec s = SlotSpec::from_domain("area", {"north", "south"});
  CHECK(s.candidates.size() == 4);
  CHECK(s.candidates[s.none_index()] == kNone);
  CHECK(s.candidates[s.dontcare_index()] == kDontCare);
  CHECK(s.index_of("south") == 1u);
  CHECK_FALSE(s.index_of("east").has_value());
}

TEST_CASE("restaurant schema sizes") {
  const SlotSchema schema = restaurant_schema();
  REQUIRE(schema.size() == 3);
  CHECK(schema[0].name == "area");
  CHECK(schema[0].candidates.size() == 5 + 2);
  CHECK(schema[1].name == "food");
  CHECK(schema[1].candidates.size() == 91 + 2);
  CHECK(schema[2].name == "pricerange");
  CHECK(schema[2].candidates.size() == 3 + 2);
}

TEST_CASE("config validation") {
  ModelConfig c = restaurant_config();
  CHECK_NOTHROW(c.validate());
  ModelConfig empty = c;
  empty.slots[1].candidates.clear();
  CHECK_THROWS_AS(empty.validate(), ConfigError);
  CHECK_THROWS_AS(init_model(empty, 1), ConfigError);
  ModelConfig no_slots = c;
  no_slots.slots.clear();
  CHECK_THROWS_AS(no_slots.validate(), ConfigError);
  ModelConfig weights = c;
  weights.slot_weights = {1.0};
  CHECK_THROWS_AS(weights.validate(), ConfigError);
  CHECK(model_config_from_json(to_json(c)) == c);
}

TEST_CASE("default sizes and input widths") {
  ModelConfig c;
  CHECK(c.dialog_hidden == 200);
  CHECK(c.utterance_hidden == 150);
  CHECK(c.embedding_dim == 300);
  CHECK(c.max_entities == 8);
  c.slots = restaurant_schema();
  c.response_count = 78;
  c.vocab_size = 50;
  c.variant = Variant::Base;
  CHECK(c.dialog_input_dim() == 300 + 1);
  c.variant = Variant::FeedResponse;
  CHECK(c.dialog_input_dim() == 300 + 1 + 78);
  c.variant = Variant::FeedSlots;
  CHECK(c.dialog_input_dim() == 300 + 1 + 7 + 93 + 5);
  c.variant = Variant::FeedBoth;
  CHECK(c.dialog_input_dim() == 300 + 1 + 78 + 7 + 93 + 5);
  const ModelParams p = init_model(c, 1);
  CHECK(p.dialog.w_input.shape() == Shape{800, 300 + 1 + 78 + 105});
  CHECK(p.utterance_fwd.w_hidden.shape() == Shape{600, 150});
  CHECK(p.embedding.weight.shape() == Shape{50, 300});
  CHECK(p.slot_heads.size() == 3);
  CHECK(p.slot_heads[1].output_size() == 93);
  CHECK(p.entity_head.output_size() == 9);
  CHECK(p.response_head.output_size() == 78);
}

TEST_CASE("init is reproducible from the seed") {
  const ModelConfig c = restaurant_config();
  const ModelParams a = init_model(c, 5);
  const ModelParams b = init_model(c, 5);
  const ModelParams other = init_model(c, 6);
  const auto na = a.named();
  const auto nb = b.named();
  const auto no = other.named();
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(*na[i].second == *nb[i].second);
    any_diff = any_diff || !(*na[i].second == *no[i].second);
  }
  CHECK(any_diff);
  for (double w : a.dialog.w_input.data()) CHECK(std::abs(w) <= 0.08);
  for (double w : a.embedding.weight.data()) CHECK(std::abs(w) <= 0.25);
}

TEST_CASE("zero heads give uniform distributions and the closed-form loss") {
  ModelConfig c = restaurant_config();
  c.zero_init_heads = true;
  const ModelParams p = init_model(c, 3);
  const EncodedDialog d = random_dialog(c, 1, 4);
  Tape tape(false);
  const auto outs = run(tape, c, p, d);
  const TurnDistributions dist = distributions(outs[0], 0);
  for (double x : dist.slots[0]) CHECK(x == doctest::Approx(1.0 / 7).epsilon(1e-12));
  for (double x : dist.slots[1]) CHECK(x == doctest::Approx(1.0 / 93).epsilon(1e-12));
  for (double x : dist.slots[2]) CHECK(x == doctest::Approx(1.0 / 5).epsilon(1e-12));
  for (double x : dist.response) CHECK(x == doctest::Approx(1.0 / 78).epsilon(1e-12));
  const EncodedDialog* batch[] = {&d};
  const double loss = joint_loss(c, outs, batch).value().item();
  CHECK(std::abs(loss - (std::log(7.0) + std::log(93.0) + std::log(5.0) + std::log(9.0) + std::log(78.0))) < 1e-9);
}

TEST_CASE("every head is a probability vector") {
  for (Variant v : kAllVariants) {
    const ModelConfig c = restaurant_config(v);
    const ModelParams p = init_model(c, 9);
    const EncodedDialog d = random_dialog(c, 4, 10);
    Tape tape(false);
    for (const TurnOutput& o : run(tape, c, p, d)) {
      const TurnDistributions dist = distributions(o, 0);
      auto check = [](const std::vector<double>& xs) {
        double s = 0;
        for (double x : xs) {
          CHECK(x >= 0.0);
          s += x;
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
      };
      for (const auto& s : dist.slots) check(s);
      check(dist.entity);
      check(dist.response);
    }
  }
}

TEST_CASE("base variant ignores feedback; feedback variants use it") {
  for (Variant v : kAllVariants) {
    const ModelConfig c = restaurant_config(v);
    const ModelParams p = init_model(c, 11);
    Tape tape(false);
    const BoundModel m = bind(tape, p);
    const std::vector<std::size_t> toks = {3, 4};
    StepInput in;
    in.utterance = bilstm_encode(m.embedding, m.utterance_fwd, m.utterance_bwd, toks);
    in.kb_indicator = {1.0};
    in.feedback = {Feedback{}};
    const TurnOutput a = dialog_step(c, m, initial_state(tape, c, 1), in);
    in.feedback = {Feedback{std::size_t{5}, {1, 2, 3}}};
    const TurnOutput b = dialog_step(c, m, initial_state(tape, c, 1), in);
    const bool same = a.state.h.value() == b.state.h.value();
    CHECK(same == (v == Variant::Base));
  }
}

TEST_CASE("feedback arity mismatch is a config error") {
  const ModelConfig c = restaurant_config(Variant::FeedSlots);
  const ModelParams p = init_model(c, 12);
  Tape tape(false);
  const BoundModel m = bind(tape, p);
  StepInput in;
  in.utterance = bilstm_encode(m.embedding, m.utterance_fwd, m.utterance_bwd, std::vector<std::size_t>{3});
  in.kb_indicator = {0.0};
  in.feedback = {Feedback{std::nullopt, {1, 2}}};
  CHECK_THROWS_AS(dialog_step(c, m, initial_state(tape, c, 1), in), ConfigError);
  in.feedback = {};
  CHECK_THROWS_AS(dialog_step(c, m, initial_state(tape, c, 1), in), ConfigError);
}

TEST_CASE("KB indicator changes the dialog state") {
  const ModelConfig c = restaurant_config();
  const ModelParams p = init_model(c, 13);
  Tape tape(false);
  const BoundModel m = bind(tape, p);
  StepInput in;
  in.utterance = bilstm_encode(m.embedding, m.utterance_fwd, m.utterance_bwd, std::vector<std::size_t>{2, 7});
  in.feedback = {Feedback{}};
  in.kb_indicator = {0.0};
  const TurnOutput a = dialog_step(c, m, initial_state(tape, c, 1), in);
  in.kb_indicator = {1.0};
  const TurnOutput b = dialog_step(c, m, initial_state(tape, c, 1), in);
  CHECK_FALSE(a.state.h.value() == b.state.h.value());
}

TEST_CASE("causality: later turns do not affect earlier outputs") {
  const ModelConfig c = restaurant_config();
  const ModelParams p = init_model(c, 14);
  EncodedDialog d = random_dialog(c, 4, 15);
  Tape t1(false);
  const auto a = run(t1, c, p, d);
  d.utterances[3] = {9, 9, 9, 9, 9};
  d.labels[3].kb_indicator = 1 - d.labels[3].kb_indicator;
  Tape t2(false);
  const auto b = run(t2, c, p, d);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(a[k].response_logits.value() == b[k].response_logits.value());
    CHECK(a[k].state.h.value() == b[k].state.h.value());
  }
  CHECK_FALSE(a[3].state.h.value() == b[3].state.h.value());
}

TEST_CASE("batched forward equals one dialog at a time") {
  const ModelConfig c = restaurant_config(Variant::FeedBoth);
  const ModelParams p = init_model(c, 16);
  const EncodedDialog d1 = random_dialog(c, 2, 17);
  const EncodedDialog d2 = random_dialog(c, 5, 18);
  Tape tape(false);
  const BoundModel m = bind(tape, p);
  const EncodedDialog* batch[] = {&d1, &d2};
  const auto both = forward_teacher_forced(c, m, batch);
  const auto solo = run(tape, c, p, d2);
  REQUIRE(both.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    const auto x = distributions(both[k], 1).response;
    const auto y = distributions(solo[k], 0).response;
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == doctest::Approx(y[i]).epsilon(1e-12));
  }
  // loss is the per-dialog mean; padding turns of d1 are masked
  const EncodedDialog* b1[] = {&d1};
  const EncodedDialog* b2[] = {&d2};
  const double l_both = joint_loss(c, both, batch).value().item();
  const double l1 = joint_loss(c, run(tape, c, p, d1), b1).value().item();
  const double l2 = joint_loss(c, solo, b2).value().item();
  CHECK(l_both == doctest::Approx((l1 + l2) / 2).epsilon(1e-12));
}

TEST_CASE("perfect predictions give zero loss") {
  const ModelConfig c = restaurant_config();
  const EncodedDialog d = random_dialog(c, 2, 19);
  Tape tape(false);
  std::vector<TurnOutput> outs;
  for (std::size_t k = 0; k < 2; ++k) {
    TurnOutput o;
    auto one_hot = [&](std::size_t n, long label) {
      Tensor t(Shape{1, n}, -1e4);
      t[static_cast<std::size_t>(label)] = 1e4;
      return tape.constant(t);
    };
    for (std::size_t m = 0; m < c.slots.size(); ++m) {
      o.slot_logits.push_back(one_hot(c.slots[m].candidates.size(), d.labels[k].slots[m]));
    }
    o.entity_logits = one_hot(c.entity_arity(), d.labels[k].entity);
    o.response_logits = one_hot(c.response_count, d.labels[k].response);
    outs.push_back(o);
  }
  const EncodedDialog* batch[] = {&d};
  CHECK(joint_loss(c, outs, batch).value().item() == doctest::Approx(0.0));
}

TEST_CASE("missing labels are a data error") {
  const ModelConfig c = restaurant_config();
  const ModelParams p = init_model(c, 20);
  EncodedDialog d = random_dialog(c, 2, 21);
  d.labels[1].slots.pop_back();
  Tape tape(false);
  const auto outs = run(tape, c, p, d);
  const EncodedDialog* batch[] = {&d};
  CHECK_THROWS_AS(joint_loss(c, outs, batch), DataError);
}

TEST_CASE("zero entity and response weights decouple their heads") {
  ModelConfig c = restaurant_config();
  c.entity_weight = 0.0;
  c.response_weight = 0.0;
  ModelParams p = init_model(c, 22);
  p.set_requires_grad(true);
  const EncodedDialog d = random_dialog(c, 3, 23);
  Tape tape;
  const BoundModel m = bind(tape, p);
  const EncodedDialog* batch[] = {&d};
  tape.backward(joint_loss(c, forward_teacher_forced(c, m, batch), batch));
  auto all_zero = [](const MlpHead& h) {
    for (const auto& w : h.weights) {
      for (double g : w.grad()) {
        if (g != 0.0) return false;
      }
    }
    return true;
  };
  CHECK(all_zero(p.entity_head));
  CHECK(all_zero(p.response_head));
  CHECK_FALSE(all_zero(p.slot_heads[0]));
  double trunk = 0;
  for (double g : p.dialog.w_input.grad()) trunk += std::abs(g);
  CHECK(trunk > 0.0);
}

TEST_CASE("decode_turn takes the lowest index on ties") {
  TurnDistributions d;
  d.slots = {{0.25, 0.25, 0.25, 0.25}, {0.1, 0.6, 0.3}};
  d.entity = std::vector<double>(9, 1.0 / 9);
  d.response = {0.2, 0.4, 0.4};
  const TurnDecision t = decode_turn(d);
  CHECK(t.slots == std::vector<std::size_t>{0, 1});
  CHECK(t.entity == 0);
  CHECK(t.response == 1);

  Rng rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> logits(12);
    for (auto& x : logits) x = rng.uniform(-5, 5);
    const Tensor p = softmax(Tensor::vector(logits));
    CHECK(argmax(p.data()) == argmax(logits));
  }
}

TEST_CASE("teacher feedback comes from the previous turn's labels") {
  const ModelConfig c = restaurant_config();
  const EncodedDialog d = random_dialog(c, 3, 25);
  const Feedback f0 = teacher_feedback(d, 0);
  CHECK_FALSE(f0.response.has_value());
  CHECK(f0.slots.empty());
  const Feedback f2 = teacher_feedback(d, 2);
  CHECK(f2.response == static_cast<std::size_t>(d.labels[1].response));
  REQUIRE(f2.slots.size() == 3);
  CHECK(f2.slots[1] == static_cast<std::size_t>(d.labels[1].slots[1]));
}
