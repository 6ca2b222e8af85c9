// SPDX-License-Identifier: Apache-2.0
//
// Dialog corpora: parsing/serialising, tokenization, delexicalisation and
// lexicalisation of responses, response-candidate lists, vocabulary, and
// per-turn supervision labels.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "taskbot/kb.hpp"
#include "taskbot/model.hpp"

namespace taskbot {

/// User utterance of a turn whose system response is not preceded by user
/// input (e.g. the response after an API call).
inline constexpr const char* kSilence = "<silence>";
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";

/// Lowercases, splits on whitespace, and separates the punctuation
/// characters . , ! ? ; : " ( ) into their own tokens. `<...>` placeholder
/// tokens survive intact.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);
std::string normalize_text(std::string_view text);

/// One exchange: a user utterance followed by the system response.
struct DialogTurn {
  std::string user;
  std::string system;
  /// Belief annotation after the user utterance (slot → value).
  std::optional<std::map<std::string, std::string>> state;
  bool api_call = false;
  /// Ranked entities returned by this turn's API call.
  std::optional<std::vector<KBEntity>> kb_result;

  bool operator==(const DialogTurn&) const = default;
};

struct Dialog {
  std::string id;
  std::vector<DialogTurn> turns;

  bool operator==(const Dialog&) const = default;
};

enum class CorpusFormat { Jsonl, BabiDialog };

CorpusFormat parse_corpus_format(const std::string& name);

struct ParseOptions {
  /// Skip malformed dialogs (recording a diagnostic) instead of throwing.
  bool lenient = false;
};

struct ParseReport {
  std::vector<std::string> diagnostics;
  std::size_t skipped = 0;
};

std::vector<Dialog> parse_jsonl(std::istream& in, const SlotSchema& schema, const ParseOptions& opts = {},
                                ParseReport* report = nullptr);
std::vector<Dialog> parse_babi(std::istream& in, const SlotSchema& schema, const ParseOptions& opts = {},
                               ParseReport* report = nullptr);
std::vector<Dialog> parse_corpus(const std::filesystem::path& path, CorpusFormat format, const SlotSchema& schema,
                                 const ParseOptions& opts = {}, ParseReport* report = nullptr);

std::string serialize_dialog(const Dialog& dialog);
std::string serialize_jsonl(std::span<const Dialog> dialogs);
void write_jsonl(const std::filesystem::path& path, std::span<const Dialog> dialogs);

struct Binding {
  std::string placeholder;
  std::string surface;
  bool operator==(const Binding&) const = default;
};

struct Delexicalised {
  std::vector<std::string> tokens;
  std::vector<Binding> bindings;

  std::string text() const { return join_tokens(tokens); }
};

/// Surface forms (token sequences) → placeholder tokens such as `<food>` or
/// `<R_phone>`. Matching is longest-first, left to right, on token
/// boundaries.
class Lexicon {
 public:
  /// Keeps the first placeholder registered for a surface form.
  void add(std::string_view surface, const std::string& placeholder);

  /// Slot values map to `<slot>`; entity names to `<R_name>`; other entity
  /// attributes (except slot-valued ones and `rating`) to `<R_attr>`.
  static Lexicon build(const SlotSchema& schema, std::span<const KBEntity> entities);

  static Lexicon load_tsv(const std::filesystem::path& path);
  void save_tsv(const std::filesystem::path& path) const;

  Delexicalised delexicalise(std::string_view utterance) const;
  std::optional<std::string> lookup(std::string_view surface) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::vector<std::string>, std::string> entries_;
  std::size_t max_len_ = 0;
};

/// Substitutes bindings back in order (inverse of delexicalise).
std::string lexicalise(std::span<const std::string> template_tokens, std::span<const Binding> bindings);

/// Fills `<slot>` tokens from the belief argmax and `<R_attr>` tokens from the
/// selected entity. The API-call template yields format_api_call(belief).
/// Throws LexicalisationError when a placeholder cannot be resolved (no
/// entity, missing attribute, or a "dontcare"/"none" slot value).
std::string lexicalise(const std::string& template_text, const SlotSchema& schema,
                       const std::map<std::string, std::string>& belief, const KBEntity* entity);

/// "api_call <area> <food> <pricerange>" for the schema's slot order.
std::string api_call_template(const SlotSchema& schema);
bool is_api_call_text(std::string_view text);

/// Delexicalised form of a system response (API calls collapse to the
/// API-call template).
std::string delexicalise_response(const std::string& system_text, const Lexicon& lexicon, const SlotSchema& schema);

/// Deduplicated delexicalised system responses, sorted.
std::vector<std::string> build_candidates(std::span<const Dialog> dialogs, const Lexicon& lexicon,
                                          const SlotSchema& schema);

class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t index(const std::string& token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::size_t> encode(std::string_view text) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// PAD=0, UNK=1, then user-utterance tokens with count ≥ min_count ordered by
/// count descending, then token.
Vocabulary build_vocab(std::span<const Dialog> dialogs, std::size_t min_count = 1);

/// Everything needed to turn dialogs into model inputs and back.
struct Preprocessor {
  SlotSchema schema;
  Lexicon lexicon;
  Vocabulary vocab;
  std::vector<std::string> candidates;
  std::size_t max_entities = 8;

  std::optional<std::size_t> candidate_index(const std::string& delex) const;
};

/// Extra per-turn facts next to the labels, used by evaluation.
struct TurnContext {
  std::string reference;              // normalized system text
  std::string reference_template;     // delexicalised system text
  bool unknown_response = false;      // reference template not a candidate
  std::optional<std::size_t> result;  // index of the turn holding the last KB result
  std::size_t pointer = 0;            // entities offered since the last API call
};

struct DerivedDialog {
  std::vector<TurnLabels> labels;
  std::vector<TurnContext> context;
};

/// Slot labels carry forward from the last annotation ("none" until set); the
/// entity label is the rank, in the last KB result, of the entity named in
/// the response; the indicator follows compute_kb_indicator with the pointer
/// advanced past every entity already offered.
DerivedDialog derive_labels(const Dialog& dialog, const Preprocessor& prep);

EncodedDialog encode_dialog(const Dialog& dialog, const Preprocessor& prep);

/// Pointer after the system offers the entity at `offered_rank`.
std::size_t advance_pointer(std::size_t pointer, std::size_t offered_rank);

}  // namespace taskbot
