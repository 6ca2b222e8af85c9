// SPDX-License-Identifier: Apache-2.0
//
// Structured knowledge base: API-call formatting/execution, ranked results,
// the binary KB indicator and entity resolution from a pointer distribution.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "taskbot/model.hpp"

namespace taskbot {

/// Slot specs in API-call order; candidates include "dontcare" and "none".
using SlotSchema = std::vector<SlotSpec>;

/// Domain values of a slot (candidates without "dontcare"/"none").
std::vector<std::string> domain_values(const SlotSpec& slot);

/// Loads `{"area": [...], "food": [...], ...}` preserving key order of the
/// file; "dontcare"/"none" are appended to each slot.
SlotSchema load_schema(const std::filesystem::path& path);
SlotSchema schema_from_json(const nlohmann::json& j);
nlohmann::json schema_to_json(const SlotSchema& schema);

struct KBEntity {
  std::string name;
  std::map<std::string, std::string> attributes;

  /// Attribute value; "name" resolves to the entity name.
  std::optional<std::string> attribute(const std::string& key) const;
  bool operator==(const KBEntity&) const = default;
};

/// One value per schema slot, in schema order. "dontcare" is a wildcard.
struct ApiCall {
  std::vector<std::string> values;
  bool operator==(const ApiCall&) const = default;
};

struct KBResult {
  ApiCall call;
  /// Ranked (rating descending, then name ascending), truncated to the
  /// configured pointer arity.
  std::vector<KBEntity> entities;
  /// Number of matches before truncation.
  std::size_t matched = 0;

  std::size_t count() const { return entities.size(); }
};

/// Values containing spaces are written with underscores so the command stays
/// one token per slot.
std::string api_token(const std::string& value);
std::string api_value(const std::string& token);

/// "api_call {v1} {v2} ..." from the per-slot argmax values in schema order;
/// "none" is written as "dontcare".
std::string format_api_call(const SlotSchema& schema, const std::map<std::string, std::string>& belief);
ApiCall make_api_call(const SlotSchema& schema, const std::map<std::string, std::string>& belief);
std::string format_api_call(const ApiCall& call);
ApiCall parse_api_call(const std::string& command, const SlotSchema& schema);

class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  /// Validates unique names and that slot-named attributes hold domain values.
  KnowledgeBase(std::vector<KBEntity> entities, const SlotSchema& schema);

  /// JSON array of entities (`{"name", "attrs": {...}}` or flat objects), or
  /// CSV with a header row whose first column is `name`.
  static KnowledgeBase load(const std::filesystem::path& path, const SlotSchema& schema);
  static KnowledgeBase from_json(const nlohmann::json& j, const SlotSchema& schema);
  static KnowledgeBase from_csv(const std::string& text, const SlotSchema& schema);
  nlohmann::json to_json() const;

  const std::vector<KBEntity>& entities() const { return entities_; }
  const SlotSchema& schema() const { return schema_; }
  const KBEntity* find(const std::string& name) const;

  KBResult execute(const ApiCall& call, std::size_t max_entities) const;
  KBResult execute(const std::string& command, std::size_t max_entities) const;

 private:
  std::vector<KBEntity> entities_;
  SlotSchema schema_;
};

/// Ranking order used by KnowledgeBase::execute.
bool ranks_before(const KBEntity& a, const KBEntity& b);
void rank_entities(std::vector<KBEntity>& entities);

/// 1 iff a result exists and an entity at rank ≥ pointer remains to offer.
int compute_kb_indicator(const KBResult* result, std::size_t pointer);

/// Entity at the argmax of `pointer_dist` (arity max_entities + 1, the last
/// index meaning "none"). Out-of-range ranks and "none" yield no entity.
std::optional<std::size_t> resolve_entity_rank(const KBResult& result, std::span<const double> pointer_dist);
std::optional<KBEntity> resolve_entity(const KBResult& result, std::span<const double> pointer_dist);

}  // namespace taskbot
