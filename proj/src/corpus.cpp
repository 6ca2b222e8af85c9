// SPDX-License-Identifier: Apache-2.0
#include "taskbot/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "taskbot/errors.hpp"

namespace taskbot {

using nlohmann::json;

namespace {

bool is_split_punct(char ch) {
  switch (ch) {
    case '.':
    case ',':
    case '!':
    case '?':
    case ';':
    case ':':
    case '"':
    case '(':
    case ')':
      return true;
    default:
      return false;
  }
}

bool is_placeholder(const std::string& token) {
  return token.size() > 2 && token.front() == '<' && token.back() == '>';
}

std::string placeholder_name(const std::string& token) { return token.substr(1, token.size() - 2); }

const SlotSpec* find_slot(const SlotSchema& schema, const std::string& name) {
  for (const auto& s : schema) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

void check_state(const std::map<std::string, std::string>& state, const SlotSchema& schema) {
  for (const auto& [slot, value] : state) {
    const SlotSpec* spec = find_slot(schema, slot);
    if (spec == nullptr) throw SchemaError("unknown slot '" + slot + "'");
    if (!spec->index_of(value)) throw SchemaError("'" + value + "' is not a value of slot '" + slot + "'");
  }
}

std::vector<KBEntity> entities_from_json(const json& j) {
  std::vector<KBEntity> out;
  for (const auto& item : j) {
    KBEntity e;
    e.name = item.at("name").get<std::string>();
    if (item.contains("attrs")) {
      for (const auto& [k, v] : item.at("attrs").items()) e.attributes[k] = v.get<std::string>();
    }
    out.push_back(std::move(e));
  }
  return out;
}

Dialog dialog_from_json(const json& j, const SlotSchema& schema) {
  Dialog d;
  d.id = j.value("id", std::string());
  std::optional<std::string> pending_user;
  std::optional<std::map<std::string, std::string>> pending_state;
  for (const auto& t : j.at("turns")) {
    const auto speaker = t.at("speaker").get<std::string>();
    const auto text = t.value("text", std::string());
    std::optional<std::map<std::string, std::string>> state;
    if (t.contains("state")) {
      state = t.at("state").get<std::map<std::string, std::string>>();
      check_state(*state, schema);
    }
    const bool api = t.value("api_call", false);
    if (t.contains("kb_result") && (speaker != "system" || !api)) {
      throw StructureError("KB result without a preceding API call in dialog '" + d.id + "'");
    }
    if (speaker == "user") {
      if (pending_user) throw StructureError("consecutive user turns in dialog '" + d.id + "'");
      pending_user = text;
      pending_state = std::move(state);
    } else if (speaker == "system") {
      DialogTurn turn;
      turn.user = pending_user.value_or(kSilence);
      turn.system = text;
      turn.state = std::move(pending_state);
      if (state) {
        if (!turn.state) turn.state.emplace();
        for (auto& [k, v] : *state) (*turn.state)[k] = v;
      }
      turn.api_call = api;
      if (t.contains("kb_result")) turn.kb_result = entities_from_json(t.at("kb_result"));
      d.turns.push_back(std::move(turn));
      pending_user.reset();
      pending_state.reset();
    } else {
      throw StructureError("unknown speaker '" + speaker + "' in dialog '" + d.id + "'");
    }
  }
  if (pending_user) throw StructureError("dialog '" + d.id + "' ends with an unanswered user turn");
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    if (!is_placeholder(cur)) {
      for (char& c : cur) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else if (is_split_punct(ch)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      cur += ch;
    }
  }
  flush();
  return tokens;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::string normalize_text(std::string_view text) { return join_tokens(tokenize(text)); }

CorpusFormat parse_corpus_format(const std::string& name) {
  if (name == "jsonl") return CorpusFormat::Jsonl;
  if (name == "babi" || name == "babi-dialog-text") return CorpusFormat::BabiDialog;
  throw ConfigError("unknown corpus format '" + name + "' (expected jsonl or babi-dialog-text)");
}

std::vector<Dialog> parse_jsonl(std::istream& in, const SlotSchema& schema, const ParseOptions& opts,
                                ParseReport* report) {
  std::vector<Dialog> dialogs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      dialogs.push_back(dialog_from_json(json::parse(line), schema));
    } catch (const std::exception& e) {
      const std::string msg = "line " + std::to_string(line_no) + ": " + e.what();
      if (!opts.lenient) {
        if (dynamic_cast<const SchemaError*>(&e)) throw SchemaError(msg);
        if (dynamic_cast<const StructureError*>(&e)) throw StructureError(msg);
        throw ParseError(msg);
      }
      if (report) {
        report->diagnostics.push_back(msg);
        ++report->skipped;
      }
    }
  }
  return dialogs;
}

std::vector<Dialog> parse_babi(std::istream& in, const SlotSchema& schema, const ParseOptions& opts,
                               ParseReport* report) {
  static const std::map<std::string, std::string> kAttrNames = {
      {"R_cuisine", "food"},   {"R_location", "area"}, {"R_price", "pricerange"}, {"R_rating", "rating"},
      {"R_phone", "phone"},    {"R_address", "address"}, {"R_post_code", "postcode"}, {"R_number", "number"}};
  static const std::vector<std::string> kBabiApiOrder = {"food", "area", "pricerange"};

  std::vector<Dialog> dialogs;
  Dialog cur;
  bool broken = false;
  std::string error;
  std::size_t line_no = 0;
  std::size_t dialog_start = 1;

  auto finish = [&] {
    if (cur.turns.empty() && !broken) return;
    if (broken) {
      const std::string msg = "dialog starting at line " + std::to_string(dialog_start) + ": " + error;
      if (!opts.lenient) throw StructureError(msg);
      if (report) {
        report->diagnostics.push_back(msg);
        ++report->skipped;
      }
    } else {
      cur.id = "babi-" + std::to_string(dialogs.size() + 1);
      dialogs.push_back(std::move(cur));
    }
    cur = Dialog{};
    broken = false;
  };

  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) {
      finish();
      dialog_start = line_no + 1;
      continue;
    }
    if (broken) continue;
    std::size_t pos = 0;
    while (pos < t.size() && std::isdigit(static_cast<unsigned char>(t[pos]))) ++pos;
    while (pos < t.size() && t[pos] == ' ') ++pos;
    const std::string body = t.substr(pos);
    const auto tab = body.find('\t');
    if (tab != std::string::npos) {
      DialogTurn turn;
      turn.user = trim(body.substr(0, tab));
      if (turn.user.empty()) turn.user = kSilence;
      turn.system = trim(body.substr(tab + 1));
      if (is_api_call_text(turn.system)) {
        turn.api_call = true;
        std::istringstream ss(turn.system);
        std::string head;
        ss >> head;
        std::map<std::string, std::string> belief;
        std::string v;
        for (std::size_t i = 0; ss >> v && i < kBabiApiOrder.size(); ++i) belief[kBabiApiOrder[i]] = api_value(v);
        bool known = true;
        for (const auto& name : kBabiApiOrder) known = known && find_slot(schema, name) != nullptr;
        if (known && belief.size() == kBabiApiOrder.size()) turn.system = format_api_call(schema, belief);
      }
      cur.turns.push_back(std::move(turn));
      continue;
    }
    // KB result line: "<name> <R_attr> <value>" or "api_call no result".
    if (cur.turns.empty() || !cur.turns.back().api_call) {
      broken = true;
      error = "line " + std::to_string(line_no) + ": KB result without a preceding API call";
      continue;
    }
    auto& result = cur.turns.back().kb_result;
    if (!result) result.emplace();
    if (body == "api_call no result") continue;
    std::istringstream ss(body);
    std::string name, attr, value;
    ss >> name >> attr;
    std::getline(ss, value);
    value = api_value(trim(value));
    name = api_value(name);
    auto it = std::find_if(result->begin(), result->end(), [&](const KBEntity& e) { return e.name == name; });
    if (it == result->end()) {
      result->push_back(KBEntity{name, {}});
      it = result->end() - 1;
    }
    auto mapped = kAttrNames.find(attr);
    it->attributes[mapped != kAttrNames.end() ? mapped->second : attr] = value;
  }
  finish();
  return dialogs;
}

std::vector<Dialog> parse_corpus(const std::filesystem::path& path, CorpusFormat format, const SlotSchema& schema,
                                 const ParseOptions& opts, ParseReport* report) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus " + path.string());
  return format == CorpusFormat::Jsonl ? parse_jsonl(in, schema, opts, report) : parse_babi(in, schema, opts, report);
}

std::string serialize_dialog(const Dialog& d) {
  json turns = json::array();
  for (const auto& t : d.turns) {
    json user = {{"speaker", "user"}, {"text", t.user}};
    if (t.state) user["state"] = *t.state;
    turns.push_back(std::move(user));
    json sys = {{"speaker", "system"}, {"text", t.system}};
    if (t.api_call) sys["api_call"] = true;
    if (t.kb_result) {
      json r = json::array();
      for (const auto& e : *t.kb_result) r.push_back({{"name", e.name}, {"attrs", e.attributes}});
      sys["kb_result"] = std::move(r);
    }
    turns.push_back(std::move(sys));
  }
  return json{{"id", d.id}, {"turns", std::move(turns)}}.dump();
}

std::string serialize_jsonl(std::span<const Dialog> dialogs) {
  std::string out;
  for (const auto& d : dialogs) {
    out += serialize_dialog(d);
    out += '\n';
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Dialog> dialogs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << serialize_jsonl(dialogs);
}

// ---------------------------------------------------------------------------
// Lexicon

void Lexicon::add(std::string_view surface, const std::string& placeholder) {
  auto key = tokenize(surface);
  if (key.empty()) return;
  max_len_ = std::max(max_len_, key.size());
  entries_.emplace(std::move(key), placeholder);
}

Lexicon Lexicon::build(const SlotSchema& schema, std::span<const KBEntity> entities) {
  Lexicon lex;
  std::set<std::string> slot_names;
  for (const auto& slot : schema) {
    slot_names.insert(slot.name);
    for (const auto& v : domain_values(slot)) lex.add(v, "<" + slot.name + ">");
  }
  for (const auto& e : entities) lex.add(e.name, "<R_name>");
  for (const auto& e : entities) {
    for (const auto& [attr, value] : e.attributes) {
      if (slot_names.count(attr) || attr == "rating") continue;
      lex.add(value, "<R_" + attr + ">");
    }
  }
  return lex;
}

Lexicon Lexicon::load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon " + path.string());
  Lexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": missing tab");
    lex.add(line.substr(0, tab), trim(line.substr(tab + 1)));
  }
  return lex;
}

void Lexicon::save_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& [key, placeholder] : entries_) out << join_tokens(key) << '\t' << placeholder << '\n';
}

std::optional<std::string> Lexicon::lookup(std::string_view surface) const {
  auto it = entries_.find(tokenize(surface));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

Delexicalised Lexicon::delexicalise(std::string_view utterance) const {
  const auto tokens = tokenize(utterance);
  Delexicalised out;
  std::size_t i = 0;
  std::vector<std::string> key;
  while (i < tokens.size()) {
    bool matched = false;
    for (std::size_t len = std::min(max_len_, tokens.size() - i); len >= 1; --len) {
      key.assign(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i + len));
      auto it = entries_.find(key);
      if (it != entries_.end()) {
        out.tokens.push_back(it->second);
        out.bindings.push_back(Binding{it->second, join_tokens(key)});
        i += len;
        matched = true;
        break;
      }
    }
    if (!matched) out.tokens.push_back(tokens[i++]);
  }
  return out;
}

std::string lexicalise(std::span<const std::string> template_tokens, std::span<const Binding> bindings) {
  std::vector<std::string> out;
  std::size_t next = 0;
  for (const auto& tok : template_tokens) {
    if (next < bindings.size() && tok == bindings[next].placeholder) {
      out.push_back(bindings[next++].surface);
    } else {
      out.push_back(tok);
    }
  }
  return join_tokens(out);
}

std::string api_call_template(const SlotSchema& schema) {
  std::string out = "api_call";
  for (const auto& s : schema) out += " <" + s.name + ">";
  return out;
}

bool is_api_call_text(std::string_view text) {
  const auto tokens = tokenize(text);
  return !tokens.empty() && tokens.front() == "api_call";
}

std::string lexicalise(const std::string& template_text, const SlotSchema& schema,
                       const std::map<std::string, std::string>& belief, const KBEntity* entity) {
  if (is_api_call_text(template_text)) return format_api_call(schema, belief);
  std::vector<std::string> out;
  for (const auto& tok : tokenize(template_text)) {
    if (!is_placeholder(tok)) {
      out.push_back(tok);
      continue;
    }
    const std::string name = placeholder_name(tok);
    if (name.rfind("R_", 0) == 0) {
      if (entity == nullptr) throw LexicalisationError("placeholder " + tok + " needs an entity but none is selected");
      auto v = entity->attribute(name.substr(2));
      if (!v) throw LexicalisationError("entity '" + entity->name + "' has no attribute for " + tok);
      for (auto& t : tokenize(*v)) out.push_back(std::move(t));
    } else if (find_slot(schema, name) != nullptr) {
      auto it = belief.find(name);
      if (it == belief.end() || it->second == kDontCare || it->second == kNone) {
        throw LexicalisationError("slot " + tok + " has no concrete value in the belief state");
      }
      for (auto& t : tokenize(it->second)) out.push_back(std::move(t));
    } else {
      out.push_back(tok);
    }
  }
  return join_tokens(out);
}

std::string delexicalise_response(const std::string& system_text, const Lexicon& lexicon,
                                  const SlotSchema& schema) {
  if (is_api_call_text(system_text)) return api_call_template(schema);
  return lexicon.delexicalise(system_text).text();
}

std::vector<std::string> build_candidates(std::span<const Dialog> dialogs, const Lexicon& lexicon,
                                          const SlotSchema& schema) {
  std::set<std::string> unique;
  for (const auto& d : dialogs) {
    for (const auto& t : d.turns) unique.insert(delexicalise_response(t.system, lexicon, schema));
  }
  return {unique.begin(), unique.end()};
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[kPadIndex] != kPadToken || tokens[kUnkIndex] != kUnkToken) {
    tokens.insert(tokens.begin(), {kPadToken, kUnkToken});
  }
  tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
}

std::size_t Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkIndex : it->second;
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text) const {
  std::vector<std::size_t> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(index(tok));
  if (ids.empty()) ids.push_back(index(kSilence));
  return ids;
}

Vocabulary build_vocab(std::span<const Dialog> dialogs, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& d : dialogs) {
    for (const auto& t : d.turns) {
      for (auto& tok : tokenize(t.user)) ++counts[tok];
    }
  }
  ++counts[kSilence];
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens = {kPadToken, kUnkToken};
  for (const auto& [tok, n] : items) {
    if ((n >= min_count || tok == kSilence) && tok != kPadToken && tok != kUnkToken) tokens.push_back(tok);
  }
  return Vocabulary(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Labels

std::optional<std::size_t> Preprocessor::candidate_index(const std::string& delex) const {
  auto it = std::lower_bound(candidates.begin(), candidates.end(), delex);
  if (it != candidates.end() && *it == delex) return static_cast<std::size_t>(it - candidates.begin());
  auto lin = std::find(candidates.begin(), candidates.end(), delex);
  if (lin != candidates.end()) return static_cast<std::size_t>(lin - candidates.begin());
  return std::nullopt;
}

std::size_t advance_pointer(std::size_t pointer, std::size_t offered_rank) {
  return std::max(pointer, offered_rank + 1);
}

DerivedDialog derive_labels(const Dialog& dialog, const Preprocessor& prep) {
  const SlotSchema& schema = prep.schema;
  DerivedDialog out;
  std::vector<long> current;
  for (const auto& s : schema) current.push_back(static_cast<long>(s.none_index()));
  std::optional<std::size_t> result_turn;
  std::size_t pointer = 0;

  for (std::size_t k = 0; k < dialog.turns.size(); ++k) {
    const DialogTurn& turn = dialog.turns[k];
    if (turn.state) {
      for (const auto& [slot, value] : *turn.state) {
        std::size_t m = 0;
        while (m < schema.size() && schema[m].name != slot) ++m;
        if (m == schema.size()) throw SchemaError("unknown slot '" + slot + "' in dialog '" + dialog.id + "'");
        auto idx = schema[m].index_of(value);
        if (!idx) throw SchemaError("'" + value + "' is not a value of slot '" + slot + "'");
        current[m] = static_cast<long>(*idx);
      }
    }
    TurnLabels labels;
    TurnContext ctx;
    labels.slots = current;
    labels.entity = static_cast<long>(prep.max_entities);
    ctx.result = result_turn;
    ctx.pointer = pointer;

    static const std::vector<KBEntity> kEmpty;
    const std::vector<KBEntity>* result = nullptr;
    if (result_turn) {
      const auto& r = dialog.turns[*result_turn].kb_result;
      result = r ? &*r : &kEmpty;
    }
    const std::size_t offerable = result ? std::min(result->size(), prep.max_entities) : 0;
    labels.kb_indicator = (result != nullptr && pointer < offerable) ? 1 : 0;

    ctx.reference = normalize_text(turn.system);
    Delexicalised delex;
    if (is_api_call_text(turn.system)) {
      ctx.reference_template = api_call_template(schema);
    } else {
      delex = prep.lexicon.delexicalise(turn.system);
      ctx.reference_template = delex.text();
    }
    auto r = prep.candidate_index(ctx.reference_template);
    labels.response = r ? static_cast<long>(*r) : -1;
    ctx.unknown_response = !r.has_value();

    if (result != nullptr) {
      for (const auto& b : delex.bindings) {
        if (b.placeholder != "<R_name>") continue;
        for (std::size_t rank = 0; rank < result->size(); ++rank) {
          if (normalize_text((*result)[rank].name) != b.surface) continue;
          if (rank < prep.max_entities) {
            labels.entity = static_cast<long>(rank);
            pointer = advance_pointer(pointer, rank);
          }
          break;
        }
        break;
      }
    }

    if (turn.api_call) {
      result_turn = k;
      pointer = 0;
    }
    out.labels.push_back(std::move(labels));
    out.context.push_back(std::move(ctx));
  }
  return out;
}

EncodedDialog encode_dialog(const Dialog& dialog, const Preprocessor& prep) {
  EncodedDialog enc;
  for (const auto& t : dialog.turns) enc.utterances.push_back(prep.vocab.encode(t.user));
  enc.labels = derive_labels(dialog, prep).labels;
  return enc;
}

}  // namespace taskbot
