// SPDX-License-Identifier: Apache-2.0
#include "taskbot/kb.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "taskbot/errors.hpp"

namespace taskbot {

using nlohmann::json;

std::vector<std::string> domain_values(const SlotSpec& slot) {
  std::vector<std::string> out;
  for (const auto& c : slot.candidates) {
    if (c != kDontCare && c != kNone) out.push_back(c);
  }
  return out;
}

SlotSchema schema_from_json(const json& j) {
  SlotSchema schema;
  if (!j.is_array()) throw SchemaError("slot schema must be an array of {name, values}");
  for (const auto& s : j) {
    schema.push_back(SlotSpec::from_domain(s.at("name").get<std::string>(),
                                           s.at("values").get<std::vector<std::string>>()));
  }
  if (schema.empty()) throw SchemaError("slot schema is empty");
  return schema;
}

json schema_to_json(const SlotSchema& schema) {
  json out = json::array();
  for (const auto& s : schema) out.push_back({{"name", s.name}, {"values", domain_values(s)}});
  return out;
}

SlotSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open slot schema " + path.string());
  const auto j = nlohmann::ordered_json::parse(in);
  if (j.is_array()) return schema_from_json(json::parse(j.dump()));
  SlotSchema schema;
  for (const auto& [name, values] : j.items()) {
    schema.push_back(SlotSpec::from_domain(name, values.get<std::vector<std::string>>()));
  }
  if (schema.empty()) throw SchemaError("slot schema is empty");
  return schema;
}

std::optional<std::string> KBEntity::attribute(const std::string& key) const {
  if (key == "name") return name;
  auto it = attributes.find(key);
  if (it == attributes.end()) return std::nullopt;
  return it->second;
}

std::string api_token(const std::string& value) {
  std::string t = value;
  std::replace(t.begin(), t.end(), ' ', '_');
  return t;
}

std::string api_value(const std::string& token) {
  std::string v = token;
  std::replace(v.begin(), v.end(), '_', ' ');
  return v;
}

ApiCall make_api_call(const SlotSchema& schema, const std::map<std::string, std::string>& belief) {
  ApiCall call;
  for (const auto& slot : schema) {
    auto it = belief.find(slot.name);
    const std::string v = (it == belief.end() || it->second == kNone) ? std::string(kDontCare) : it->second;
    call.values.push_back(v);
  }
  return call;
}

std::string format_api_call(const ApiCall& call) {
  std::string out = "api_call";
  for (const auto& v : call.values) out += " " + api_token(v);
  return out;
}

std::string format_api_call(const SlotSchema& schema, const std::map<std::string, std::string>& belief) {
  return format_api_call(make_api_call(schema, belief));
}

ApiCall parse_api_call(const std::string& command, const SlotSchema& schema) {
  std::istringstream ss(command);
  std::string head;
  ss >> head;
  if (head != "api_call") throw ParseError("not an API call: '" + command + "'");
  ApiCall call;
  std::string tok;
  while (ss >> tok) call.values.push_back(api_value(tok));
  if (call.values.size() != schema.size()) {
    throw ParseError("API call '" + command + "' has " + std::to_string(call.values.size()) + " values, expected " +
                     std::to_string(schema.size()));
  }
  for (std::size_t m = 0; m < schema.size(); ++m) {
    const auto& v = call.values[m];
    if (v == kNone) throw ParseError("API call value 'none' for slot " + schema[m].name);
    if (!schema[m].index_of(v)) {
      throw ParseError("API call value '" + v + "' is not a " + schema[m].name + " value");
    }
  }
  return call;
}

namespace {

double rating_of(const KBEntity& e) {
  auto it = e.attributes.find("rating");
  if (it == e.attributes.end()) return -std::numeric_limits<double>::infinity();
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    return -std::numeric_limits<double>::infinity();
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  cells.push_back(cell);
  return cells;
}

}  // namespace

bool ranks_before(const KBEntity& a, const KBEntity& b) {
  const double ra = rating_of(a);
  const double rb = rating_of(b);
  if (ra != rb) return ra > rb;
  return a.name < b.name;
}

void rank_entities(std::vector<KBEntity>& entities) { std::sort(entities.begin(), entities.end(), ranks_before); }

KnowledgeBase::KnowledgeBase(std::vector<KBEntity> entities, const SlotSchema& schema)
    : entities_(std::move(entities)), schema_(schema) {
  std::set<std::string> names;
  for (const auto& e : entities_) {
    if (e.name.empty()) throw SchemaError("KB entity without a name");
    if (!names.insert(e.name).second) throw SchemaError("duplicate KB entity name '" + e.name + "'");
    for (const auto& slot : schema_) {
      auto it = e.attributes.find(slot.name);
      if (it == e.attributes.end()) continue;
      if (it->second == kDontCare || it->second == kNone || !slot.index_of(it->second)) {
        throw SchemaError("KB entity '" + e.name + "': '" + it->second + "' is not a " + slot.name + " value");
      }
    }
  }
}

KnowledgeBase KnowledgeBase::from_json(const json& j, const SlotSchema& schema) {
  if (!j.is_array()) throw ParseError("KB JSON must be an array of entities");
  std::vector<KBEntity> entities;
  for (const auto& item : j) {
    KBEntity e;
    e.name = item.at("name").get<std::string>();
    if (item.contains("attrs")) {
      for (const auto& [k, v] : item.at("attrs").items()) e.attributes[k] = v.is_string() ? v.get<std::string>() : v.dump();
    } else {
      for (const auto& [k, v] : item.items()) {
        if (k != "name") e.attributes[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
    entities.push_back(std::move(e));
  }
  return KnowledgeBase(std::move(entities), schema);
}

KnowledgeBase KnowledgeBase::from_csv(const std::string& text, const SlotSchema& schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) return KnowledgeBase({}, schema);
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "name") throw ParseError("KB CSV header must start with 'name'");
  std::vector<KBEntity> entities;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("KB CSV line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " columns, got " + std::to_string(cells.size()));
    }
    KBEntity e;
    e.name = cells[0];
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (!cells[c].empty()) e.attributes[header[c]] = cells[c];
    }
    entities.push_back(std::move(e));
  }
  return KnowledgeBase(std::move(entities), schema);
}

KnowledgeBase KnowledgeBase::load(const std::filesystem::path& path, const SlotSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open KB file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') return from_json(json::parse(text), schema);
  return from_csv(text, schema);
}

json KnowledgeBase::to_json() const {
  json out = json::array();
  for (const auto& e : entities_) out.push_back({{"name", e.name}, {"attrs", e.attributes}});
  return out;
}

const KBEntity* KnowledgeBase::find(const std::string& name) const {
  for (const auto& e : entities_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

KBResult KnowledgeBase::execute(const ApiCall& call, std::size_t max_entities) const {
  if (call.values.size() != schema_.size()) {
    throw ParseError("API call has " + std::to_string(call.values.size()) + " values for " +
                     std::to_string(schema_.size()) + " slots");
  }
  KBResult result;
  result.call = call;
  for (const auto& e : entities_) {
    bool match = true;
    for (std::size_t m = 0; m < schema_.size() && match; ++m) {
      const auto& want = call.values[m];
      if (want == kDontCare) continue;
      auto it = e.attributes.find(schema_[m].name);
      match = it != e.attributes.end() && it->second == want;
    }
    if (match) result.entities.push_back(e);
  }
  rank_entities(result.entities);
  result.matched = result.entities.size();
  if (result.entities.size() > max_entities) result.entities.resize(max_entities);
  return result;
}

KBResult KnowledgeBase::execute(const std::string& command, std::size_t max_entities) const {
  return execute(parse_api_call(command, schema_), max_entities);
}

int compute_kb_indicator(const KBResult* result, std::size_t pointer) {
  return (result != nullptr && pointer < result->count()) ? 1 : 0;
}

std::optional<std::size_t> resolve_entity_rank(const KBResult& result, std::span<const double> pointer_dist) {
  if (pointer_dist.empty()) return std::nullopt;
  const std::size_t rank = argmax(pointer_dist);
  if (rank + 1 == pointer_dist.size() || rank >= result.count()) return std::nullopt;
  return rank;
}

std::optional<KBEntity> resolve_entity(const KBResult& result, std::span<const double> pointer_dist) {
  auto rank = resolve_entity_rank(result, pointer_dist);
  if (!rank) return std::nullopt;
  return result.entities[*rank];
}

}  // namespace taskbot
