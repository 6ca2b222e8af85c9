#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "taskbot/corpus.hpp"
#include "taskbot/errors.hpp"
#include "taskbot/synthetic.hpp"
#include "taskbot/train.hpp"

using namespace taskbot;

namespace {

const std::string kFixtures = TASKBOT_FIXTURES;

KnowledgeBase kb10() { return KnowledgeBase::load(kFixtures + "/kb10.json", restaurant_schema()); }

std::vector<Dialog> parse_string(const std::string& text, const ParseOptions& opts = {}, ParseReport* rep = nullptr) {
  std::istringstream in(text);
  return parse_jsonl(in, restaurant_schema(), opts, rep);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, '\t')) out.push_back(field);
  return out;
}

}  // namespace

TEST_CASE("tokenize") {
  CHECK(tokenize("Hello, World!") == std::vector<std::string>{"hello", ",", "world", "!"});
  CHECK(tokenize("  api_call  west <R_name>.") == std::vector<std::string>{"api_call", "west", "<R_name>", "."});
  CHECK(tokenize("") .empty());
  CHECK(normalize_text("Prezzo is   NICE.") == "prezzo is nice .");
}

TEST_CASE("jsonl parsing") {
  CHECK(parse_string("").empty());
  CHECK(parse_string("\n\n").empty());

  const auto ds = parse_string(
      R"({"id": "a", "turns": [{"speaker": "user", "text": "hi", "state": {"area": "west"}}, {"speaker": "system", "text": "api_call west dontcare dontcare", "api_call": true, "kb_result": [{"name": "prezzo", "attrs": {"area": "west"}}]}, {"speaker": "system", "text": "prezzo is nice"}]})");
  REQUIRE(ds.size() == 1);
  REQUIRE(ds[0].turns.size() == 2);
  CHECK(ds[0].turns[0].user == "hi");
  CHECK(ds[0].turns[0].state->at("area") == "west");
  CHECK(ds[0].turns[0].api_call);
  CHECK(ds[0].turns[0].kb_result->front().name == "prezzo");
  CHECK(ds[0].turns[1].user == kSilence);

  CHECK_THROWS_AS(parse_string(R"({"id": "b", "turns": [{"speaker": "user", "text": "x", "state": {"colour": "red"}}, {"speaker": "system", "text": "y"}]})"),
                  SchemaError);
  CHECK_THROWS_AS(parse_string(R"({"id": "b", "turns": [{"speaker": "user", "text": "x", "state": {"area": "mars"}}, {"speaker": "system", "text": "y"}]})"),
                  SchemaError);
  CHECK_THROWS_AS(parse_string(R"({"id": "c", "turns": [{"speaker": "user", "text": "x"}, {"speaker": "system", "text": "y", "kb_result": []}]})"),
                  StructureError);
  CHECK_THROWS_AS(parse_string("{not json"), ParseError);
}

TEST_CASE("lenient parsing skips malformed dialogs with line numbers") {
  const std::string text =
      R"({"id": "ok1", "turns": [{"speaker": "user", "text": "a"}, {"speaker": "system", "text": "b"}]})"
      "\n"
      R"({"id": "bad", "turns": [{"speaker": "user", "text": "a"}, {"speaker": "system", "text": "b", "kb_result": []}]})"
      "\n"
      R"({"id": "ok2", "turns": [{"speaker": "user", "text": "c"}, {"speaker": "system", "text": "d"}]})"
      "\n";
  ParseReport rep;
  const auto ds = parse_string(text, ParseOptions{true}, &rep);
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].id == "ok1");
  CHECK(ds[1].id == "ok2");
  CHECK(rep.skipped == 1);
  REQUIRE(rep.diagnostics.size() == 1);
  CHECK(rep.diagnostics[0].find("line 2") != std::string::npos);
}

TEST_CASE("babi dialog text import") {
  const auto ds = parse_corpus(kFixtures + "/tiny.babi", CorpusFormat::BabiDialog, restaurant_schema());
  REQUIRE(ds.size() == 2);
  const Dialog& d = ds[0];
  REQUIRE(d.turns.size() == 4);
  CHECK(d.turns[1].api_call);
  CHECK(d.turns[1].system == "api_call west italian cheap");
  REQUIRE(d.turns[1].kb_result.has_value());
  REQUIRE(d.turns[1].kb_result->size() == 1);
  const KBEntity& e = d.turns[1].kb_result->front();
  CHECK(e.name == "la margherita");
  CHECK(e.attributes.at("food") == "italian");
  CHECK(e.attributes.at("phone") == "01223 315232");
  CHECK(d.turns[2].user == kSilence);
  CHECK(ds[1].turns[1].kb_result->empty());

  std::istringstream dangling("1 hi\thello\n2 la_margherita R_phone 1\n");
  CHECK_THROWS_AS(parse_babi(dangling, restaurant_schema()), StructureError);
  std::istringstream dangling2("1 hi\thello\n2 la_margherita R_phone 1\n\n1 a\tb\n");
  ParseReport rep;
  CHECK(parse_babi(dangling2, restaurant_schema(), ParseOptions{true}, &rep).size() == 1);
  CHECK(rep.skipped == 1);
}

TEST_CASE("serialisation round trip") {
  const auto kb = make_synthetic_kb(restaurant_schema(), 40, 3);
  const auto ds = generate_synthetic_corpus(kb, 30, 4);
  const std::string text = serialize_jsonl(ds);
  CHECK(parse_string(text) == ds);
  for (const auto& d : ds) CHECK(parse_string(serialize_dialog(d)).front() == d);
}

TEST_CASE("delexicalise and lexicalise") {
  Lexicon lex = Lexicon::build(restaurant_schema(), kb10().entities());
  const Delexicalised d = lex.delexicalise("prezzo is a nice italian restaurant");
  CHECK(d.text() == "<R_name> is a nice <food> restaurant");
  REQUIRE(d.bindings.size() == 2);
  CHECK(d.bindings[0] == Binding{"<R_name>", "prezzo"});
  CHECK(d.bindings[1] == Binding{"<food>", "italian"});

  CHECK(lex.delexicalise("thank you very much").text() == "thank you very much");
  CHECK(lex.delexicalise("i want north american food in the north").text() == "i want <food> food in the <area>");
  CHECK(lex.delexicalise("the phone number is 01223 350111").text() == "the phone number is <R_phone>");

  for (const std::string u : {"Prezzo is a nice italian restaurant", "graffiti  is on hotel felix whitehouse lane .",
                              "no hits here at all", "la mimosa serves mediterranean food in the centre"}) {
    const Delexicalised x = lex.delexicalise(u);
    CHECK(lexicalise(x.tokens, x.bindings) == normalize_text(u));
  }

  const SlotSchema schema = restaurant_schema();
  const KBEntity prezzo = *kb10().find("prezzo");
  CHECK(lexicalise("<R_name> is a nice <food> restaurant", schema, {{"food", "italian"}}, &prezzo) ==
        "prezzo is a nice italian restaurant");
  CHECK(lexicalise("you are welcome !", schema, {}, nullptr) == "you are welcome !");
  CHECK_THROWS_AS(lexicalise("a <food> place", schema, {{"food", "dontcare"}}, nullptr), LexicalisationError);
  CHECK_THROWS_AS(lexicalise("a <food> place", schema, {{"food", "none"}}, nullptr), LexicalisationError);
  CHECK_THROWS_AS(lexicalise("<R_name> is nice", schema, {}, nullptr), LexicalisationError);
  CHECK_THROWS_AS(lexicalise("<R_website> please", schema, {}, &prezzo), LexicalisationError);
  CHECK(lexicalise("api_call <area> <food> <pricerange>", schema, {{"area", "west"}, {"food", "italian"}}, nullptr) ==
        "api_call west italian dontcare");
}

TEST_CASE("lexicon TSV round trip") {
  const auto dir = tb_test::temp_dir("lex");
  Lexicon lex = Lexicon::build(restaurant_schema(), kb10().entities());
  lex.save_tsv(dir / "lex.tsv");
  const Lexicon back = Lexicon::load_tsv(dir / "lex.tsv");
  CHECK(back.size() == lex.size());
  CHECK(back.lookup("la margherita") == "<R_name>");
  CHECK(back.lookup("north american") == "<food>");
  {
    std::ofstream bad(dir / "bad.tsv");
    bad << "no tab here\n";
  }
  CHECK_THROWS_AS(Lexicon::load_tsv(dir / "bad.tsv"), ParseError);
}

TEST_CASE("candidates") {
  const SlotSchema schema = restaurant_schema();
  const Lexicon lex = Lexicon::build(schema, kb10().entities());
  auto dialog = [](std::vector<std::string> responses) {
    Dialog d;
    for (auto& r : responses) d.turns.push_back(DialogTurn{"hi", r, std::nullopt, false, std::nullopt});
    return d;
  };
  std::vector<Dialog> ds = {dialog({"prezzo is nice", "bye"}), dialog({"graffiti is nice", "api_call west italian cheap"})};
  const auto c = build_candidates(ds, lex, schema);
  CHECK(c == std::vector<std::string>{"<R_name> is nice", "api_call <area> <food> <pricerange>", "bye"});
  std::swap(ds[0], ds[1]);
  CHECK(build_candidates(ds, lex, schema) == c);
  CHECK(std::is_sorted(c.begin(), c.end()));
}

TEST_CASE("vocabulary") {
  Dialog d;
  d.turns.push_back(DialogTurn{"cheap food please", "x", std::nullopt, false, std::nullopt});
  d.turns.push_back(DialogTurn{"cheap cheap food", "y", std::nullopt, false, std::nullopt});
  const std::vector<Dialog> ds = {d};
  const Vocabulary v = build_vocab(ds);
  // <silence> is always present: it is the user turn after an API call.
  REQUIRE(v.size() == 6);
  CHECK(v.tokens()[kPadIndex] == kPadToken);
  CHECK(v.tokens()[kUnkIndex] == kUnkToken);
  CHECK(v.tokens()[2] == "cheap");
  CHECK(v.index("<silence>") != kUnkIndex);
  CHECK(v.tokens()[3] == "food");
  CHECK(v.tokens()[4] == "<silence>");
  CHECK(v.tokens()[5] == "please");
  CHECK(v.index("expensive") == kUnkIndex);
  CHECK(v.encode("cheap expensive food") == std::vector<std::size_t>{2, 1, 3});
  const Vocabulary v2 = build_vocab(ds, 2);
  CHECK(v2.size() == 5);
  CHECK(v2.index("please") == kUnkIndex);
  CHECK(v2.index("<silence>") != kUnkIndex);
}

TEST_CASE("hand-derived labels") {
  const SlotSchema schema = restaurant_schema();
  const auto ds = parse_corpus(kFixtures + "/hand_dialog.jsonl", CorpusFormat::Jsonl, schema);
  REQUIRE(ds.size() == 1);
  const Preprocessor prep = make_preprocessor(ds, schema, Lexicon::build(schema, kb10().entities()), 8);
  const DerivedDialog derived = derive_labels(ds[0], prep);

  std::ifstream table(kFixtures + "/hand_labels.tsv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(table, line)) {
    const auto f = split_tabs(line);
    REQUIRE(f.size() == 7);
    const std::size_t k = std::stoul(f[0]);
    CAPTURE(k);
    const TurnLabels& l = derived.labels.at(k);
    for (std::size_t m = 0; m < 3; ++m) CHECK(schema[m].candidates[static_cast<std::size_t>(l.slots[m])] == f[1 + m]);
    CHECK(l.entity == (f[4] == "none" ? 8 : std::stol(f[4])));
    CHECK(l.kb_indicator == std::stoi(f[5]));
    REQUIRE(l.response >= 0);
    CHECK(prep.candidates[static_cast<std::size_t>(l.response)] == f[6]);
    CHECK_FALSE(derived.context[k].unknown_response);
    ++rows;
  }
  CHECK(rows == ds[0].turns.size());
}

TEST_CASE("unknown responses are flagged") {
  const SlotSchema schema = restaurant_schema();
  const auto ds = parse_corpus(kFixtures + "/hand_dialog.jsonl", CorpusFormat::Jsonl, schema);
  Preprocessor prep = make_preprocessor(ds, schema, Lexicon::build(schema, kb10().entities()), 8);
  prep.candidates.erase(prep.candidates.begin());
  const DerivedDialog derived = derive_labels(ds[0], prep);
  std::size_t unknown = 0;
  for (std::size_t k = 0; k < derived.labels.size(); ++k) {
    if (derived.context[k].unknown_response) {
      ++unknown;
      CHECK(derived.labels[k].response == -1);
    }
  }
  CHECK(unknown >= 1);
}

TEST_CASE("slot labels carry forward on synthetic dialogs") {
  const SlotSchema schema = restaurant_schema();
  const auto kb = make_synthetic_kb(schema, 60, 5);
  const auto ds = generate_synthetic_corpus(kb, 100, 6);
  const Preprocessor prep = make_preprocessor(ds, schema, Lexicon::build(schema, kb.entities()));
  for (const auto& d : ds) {
    const DerivedDialog a = derive_labels(d, prep);
    const DerivedDialog b = derive_labels(d, prep);
    CHECK(a.labels == b.labels);
    for (std::size_t k = 0; k < d.turns.size(); ++k) {
      for (std::size_t m = 0; m < schema.size(); ++m) {
        const long prev = k == 0 ? static_cast<long>(schema[m].none_index()) : a.labels[k - 1].slots[m];
        const auto& st = d.turns[k].state;
        if (st && st->count(schema[m].name)) {
          CHECK(a.labels[k].slots[m] == static_cast<long>(*schema[m].index_of(st->at(schema[m].name))));
        } else {
          CHECK(a.labels[k].slots[m] == prev);
        }
      }
      CHECK_FALSE(a.context[k].unknown_response);
    }
  }
}

TEST_CASE("pointer advance") {
  CHECK(advance_pointer(0, 0) == 1);
  CHECK(advance_pointer(3, 1) == 3);
  CHECK(advance_pointer(1, 4) == 5);
}
