// SPDX-License-Identifier: Apache-2.0
#include "taskbot/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "taskbot/errors.hpp"
#include "taskbot/rng.hpp"

namespace taskbot {

namespace {

const std::vector<std::string> kAreas = {"centre", "north", "south", "east", "west"};

const std::vector<std::string> kFoods = {
    "afghan",          "african",         "afternoon tea",      "asian oriental",   "australasian",
    "australian",      "austrian",        "barbeque",           "basque",           "belgian",
    "bistro",          "brazilian",       "british",            "canapes",          "cantonese",
    "caribbean",       "catalan",         "chinese",            "christmas",        "corsica",
    "creative",        "crossover",       "cuban",              "danish",           "eastern european",
    "english",         "eritrean",        "european",           "french",           "fusion",
    "gastropub",       "german",          "greek",              "halal",            "hungarian",
    "indian",          "indonesian",      "international",      "irish",            "italian",
    "jamaican",        "japanese",        "korean",             "kosher",           "latin american",
    "lebanese",        "light bites",     "malaysian",          "mediterranean",    "mexican",
    "middle eastern",  "modern american", "modern eclectic",    "modern european",  "modern global",
    "molecular gastronomy", "moroccan",   "new zealand",        "north african",    "north american",
    "north indian",    "northern european", "panasian",         "persian",          "polish",
    "polynesian",      "portuguese",      "romanian",           "russian",          "scandinavian",
    "scottish",        "seafood",         "singaporean",        "south african",    "south indian",
    "spanish",         "sri lankan",      "steakhouse",         "swedish",          "swiss",
    "thai",            "the americas",    "traditional",        "turkish",          "tuscan",
    "unusual",         "vegetarian",      "venetian",           "vietnamese",       "welsh",
    "world"};

const std::vector<std::string> kPrices = {"cheap", "moderate", "expensive"};

const std::vector<std::string> kNameFirst = {
    "golden", "silver", "copper", "blue",   "red",    "green",  "royal", "hidden",
    "little", "old",    "lucky",  "jade",   "crimson", "velvet", "rusty", "quiet",
    "amber",  "ivory",  "hazel",  "scarlet", "willow", "maple", "cedar", "coral"};
const std::vector<std::string> kNameSecond = {
    "lantern", "kettle", "oak",   "garden", "anchor", "fig",    "lotus", "pearl",
    "dragon",  "crown",  "bell",  "door",   "table",  "spoon",  "olive", "orchard",
    "harbour", "mill",   "fox",   "swan",   "barrel", "candle", "compass", "ladle"};
const std::vector<std::string> kStreets = {"regent", "hills",   "mill",    "trumpington", "chesterton", "newmarket",
                                           "castle", "bridge",  "station", "huntingdon",  "milton",     "histon"};
const std::vector<std::string> kStreetKinds = {"road", "street", "lane"};

// Phrase banks for the simulated user.
const std::vector<std::string> kGreetings = {"hello", "hi", "hello there", "good evening", "hi , can you help me"};
const std::vector<std::string> kOpeners = {"", "i want ", "i am looking for ", "i need ", "looking for ",
                                           "i would like "};
const std::vector<std::string> kDontCareShort = {"i don't care", "it doesn't matter", "any", "anything is fine",
                                                 "i don't mind"};
const std::vector<std::string> kAnythingElse = {"anything else ?", "is there anything else ?",
                                                "what else do you have ?", "can you suggest another one ?"};
const std::vector<std::string> kGoodbyes = {"thank you good bye", "thanks , bye", "thank you goodbye",
                                            "ok thank you bye"};

// Fixed system utterances.
const std::string kWelcome = "hello , welcome to the cambridge restaurant system . how may i help you ?";
const std::string kNoMore = "i am sorry but there are no other restaurants matching your request .";
const std::string kBye = "you are welcome !";

std::string format_digits(std::size_t value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, value);
  return buf;
}

struct Belief {
  // Schema slot name → value ("dontcare" allowed); absent means not yet set.
  std::map<std::string, std::string> values;

  bool has(const std::string& slot) const { return values.count(slot) != 0; }
  bool concrete(const std::string& slot) const {
    auto it = values.find(slot);
    return it != values.end() && it->second != kDontCare;
  }
  const std::string& at(const std::string& slot) const { return values.at(slot); }
};

std::string slot_clause(const std::string& slot, const std::string& value, Rng& rng) {
  if (value == kDontCare) {
    if (slot == "food") return rng.pick<std::string>({"any kind of food", "i don't care about the food"});
    if (slot == "area") return rng.pick<std::string>({"any area", "anywhere in town", "i don't care about the area"});
    return rng.pick<std::string>({"any price range", "i don't care about the price"});
  }
  if (slot == "food") return rng.pick<std::string>({value + " food", "serving " + value + " food"});
  if (slot == "area") {
    return rng.pick<std::string>({"in the " + value, "in the " + value + " part of town", value + " part of town"});
  }
  return rng.pick<std::string>({value + " price range", "in the " + value + " price range", "it should be " + value});
}

// One user utterance informing `slots` (a subset of the goal).
std::string inform_utterance(const std::vector<std::string>& slots, const Belief& goal, Rng& rng) {
  auto value = [&](const std::string& s) { return goal.at(s); };
  bool all_concrete = true;
  for (const auto& s : slots) all_concrete = all_concrete && value(s) != kDontCare;

  if (all_concrete && rng.bernoulli(0.5)) {
    // Compact noun phrase: "[a] [price] [food] [restaurant] [in the area]".
    std::string np;
    auto contains = [&](const std::string& s) { return std::find(slots.begin(), slots.end(), s) != slots.end(); };
    if (contains("pricerange")) np += value("pricerange") + " ";
    if (contains("food")) np += value("food") + " ";
    const bool word_restaurant = !contains("food") || rng.bernoulli(0.5);
    if (word_restaurant) np += "restaurant ";
    if (contains("area")) {
      np += rng.pick<std::string>({"in the " + value("area"), "in the " + value("area") + " of town"});
    }
    while (!np.empty() && np.back() == ' ') np.pop_back();
    std::string opener = rng.pick(kOpeners);
    if (!opener.empty() && word_restaurant) np = "a " + np;
    return opener + np;
  }

  std::vector<std::string> order = slots;
  rng.shuffle(order);
  std::string out = rng.pick(kOpeners) + "a restaurant";
  for (std::size_t i = 0; i < order.size(); ++i) {
    out += (i == 0 ? " , " : " and ");
    out += slot_clause(order[i], value(order[i]), rng);
  }
  return out;
}

std::string answer_utterance(const std::string& slot, const std::string& value, Rng& rng) {
  if (value == kDontCare) return rng.pick(kDontCareShort);
  if (slot == "food") return rng.pick<std::string>({value, value + " food", value + " please"});
  if (slot == "area") return rng.pick<std::string>({value, "the " + value, value + " please"});
  return rng.pick<std::string>({value, value + " please", "something " + value});
}

std::string revise_utterance(const std::string& slot, const std::string& value, Rng& rng) {
  if (value == kDontCare) {
    if (slot == "food") return "what about any kind of food ?";
    if (slot == "area") return "how about any area ?";
    return "i don't care about the price range";
  }
  if (slot == "food") return rng.pick<std::string>({"how about " + value + " food ?", "what about " + value + " food ?"});
  if (slot == "area") return rng.pick<std::string>({"how about the " + value + " ?", "what about the " + value + " ?"});
  return rng.pick<std::string>({"how about " + value + " ?", "what about something " + value + " ?"});
}

std::string ask_response(const std::string& slot) {
  if (slot == "food") return "what kind of food would you like ?";
  if (slot == "area") return "what part of town do you have in mind ?";
  return "what price range would you like ?";
}

std::string offer_response(const std::string& name, const Belief& b) {
  std::string out = name + " is a nice ";
  if (b.concrete("pricerange")) out += b.at("pricerange") + " ";
  out += "restaurant";
  if (b.concrete("area")) out += " in the " + b.at("area") + " of town";
  if (b.concrete("food")) out += " serving " + b.at("food") + " food";
  return out + " .";
}

std::string no_match_response(const Belief& b) {
  std::string out = "i am sorry but there is no ";
  if (b.concrete("pricerange")) out += b.at("pricerange") + " ";
  if (b.concrete("food")) out += b.at("food") + " ";
  out += "restaurant";
  if (b.concrete("area")) out += " in the " + b.at("area") + " of town";
  return out + " .";
}

struct AttributeRequest {
  std::string key;
  std::vector<std::string> asks;
};

const std::vector<AttributeRequest> kAttributeRequests = {
    {"phone", {"what is the phone number ?", "can i have the phone number ?", "phone number please"}},
    {"address", {"what is the address ?", "can i have the address ?", "address please"}},
    {"postcode", {"what is the post code ?", "can i have the post code please ?"}},
};

std::string attribute_response(const std::string& key, const KBEntity& e) {
  if (key == "phone") return "the phone number of " + e.name + " is " + *e.attribute("phone") + " .";
  if (key == "address") return e.name + " is on " + *e.attribute("address") + " .";
  return "the post code of " + e.name + " is " + *e.attribute("postcode") + " .";
}

class DialogWriter {
 public:
  DialogWriter(const KnowledgeBase& kb, const SyntheticOptions& opts, Rng& rng, std::string id)
      : kb_(kb), opts_(opts), rng_(rng) {
    dialog_.id = std::move(id);
  }

  Dialog run() {
    const SlotSchema& schema = kb_.schema();
    Belief goal = sample_goal();

    if (rng_.bernoulli(0.5)) turn(rng_.pick(kGreetings), kWelcome, false);

    // Constraint phase: an opening inform, then the system asks for each
    // missing slot in food, area, pricerange order.
    std::vector<std::string> pending;
    for (const auto& s : schema) pending.push_back(s.name);
    std::vector<std::string> first;
    for (const auto& s : pending) {
      if (rng_.bernoulli(0.55)) first.push_back(s);
    }
    if (first.empty()) first.push_back(rng_.pick(pending));
    inform(first, goal);
    turn_with_state(inform_utterance(first, goal, rng_));

    while (true) {
      auto missing = missing_slot();
      if (!missing) break;
      const std::string text = answer_utterance(*missing, goal.at(*missing), rng_);
      inform({*missing}, goal);
      set_response(ask_response(*missing));
      turn_with_state(text);
    }
    // The last user turn so far has no system response yet: it gets the API call.
    issue_api_call();

    std::size_t revisions = 0;
    while (true) {
      // Result turn: "<silence>" → offer or no-match.
      if (result_.entities.empty()) {
        turn(kSilence, no_match_response(belief_), false);
        if (revisions >= 3) break;
        ++revisions;
        revise_after_no_match();
        continue;
      }
      offer(kSilence);
      if (revisions < 3 && rng_.bernoulli(opts_.revise)) {
        ++revisions;
        revise_after_offer();
        continue;
      }
      follow_ups();
      break;
    }
    turn(rng_.pick(kGoodbyes), kBye, false);
    return std::move(dialog_);
  }

 private:
  Belief sample_goal() {
    Belief g;
    const auto& entities = kb_.entities();
    if (!entities.empty() && rng_.bernoulli(opts_.matchable_goal)) {
      const KBEntity& e = rng_.pick(entities);
      for (const auto& s : kb_.schema()) g.values[s.name] = *e.attribute(s.name);
    } else {
      for (const auto& s : kb_.schema()) g.values[s.name] = rng_.pick(domain_values(s));
    }
    for (auto& [slot, v] : g.values) {
      if (rng_.bernoulli(opts_.dontcare)) v = kDontCare;
    }
    return g;
  }

  void inform(const std::vector<std::string>& slots, const Belief& goal) {
    for (const auto& s : slots) belief_.values[s] = goal.at(s);
  }

  std::optional<std::string> missing_slot() const {
    for (const char* s : {"food", "area", "pricerange"}) {
      if (!belief_.has(s)) return std::string(s);
    }
    for (const auto& s : kb_.schema()) {
      if (!belief_.has(s.name)) return s.name;
    }
    return std::nullopt;
  }

  // A user turn whose system response is filled by the next set_response /
  // issue_api_call call.
  void turn_with_state(const std::string& user) {
    DialogTurn t;
    t.user = user;
    t.state = belief_.values;
    dialog_.turns.push_back(std::move(t));
  }

  void set_response(const std::string& system) { dialog_.turns.back().system = system; }

  void turn(const std::string& user, const std::string& system, bool with_state) {
    DialogTurn t;
    t.user = user;
    t.system = system;
    if (with_state) t.state = belief_.values;
    dialog_.turns.push_back(std::move(t));
  }

  void issue_api_call() {
    DialogTurn& t = dialog_.turns.back();
    const ApiCall call = make_api_call(kb_.schema(), belief_.values);
    t.system = format_api_call(call);
    t.api_call = true;
    result_ = kb_.execute(call, opts_.max_entities);
    t.kb_result = result_.entities;
    pointer_ = 0;
  }

  void offer(const std::string& user) {
    const KBEntity& e = result_.entities[pointer_];
    offered_ = pointer_;
    turn(user, offer_response(e.name, belief_), false);
    ++pointer_;
  }

  void revise_after_no_match() {
    // Relax one concrete constraint, or move it to a value some restaurant has.
    std::vector<std::string> concrete;
    for (const auto& s : kb_.schema()) {
      if (belief_.concrete(s.name)) concrete.push_back(s.name);
    }
    const std::string slot = rng_.pick(concrete);
    std::string value = kDontCare;
    if (rng_.bernoulli(0.4)) {
      const KBEntity& e = rng_.pick(kb_.entities());
      const std::string candidate = *e.attribute(slot);
      if (candidate != belief_.at(slot)) value = candidate;
    }
    belief_.values[slot] = value;
    turn_with_state(revise_utterance(slot, value, rng_));
    issue_api_call();
  }

  void revise_after_offer() {
    // Switch one slot to another value, usually one that exists in the KB.
    const auto& schema = kb_.schema();
    const std::string slot = schema[rng_.below(schema.size())].name;
    std::string value;
    for (int attempt = 0; attempt < 8; ++attempt) {
      value = rng_.bernoulli(0.7) ? *rng_.pick(kb_.entities()).attribute(slot)
                                  : rng_.pick(domain_values(schema[*find_slot(slot)]));
      if (value != belief_.at(slot)) break;
    }
    if (value == belief_.at(slot)) value = kDontCare;
    belief_.values[slot] = value;
    turn_with_state(revise_utterance(slot, value, rng_));
    issue_api_call();
  }

  std::optional<std::size_t> find_slot(const std::string& name) const {
    const auto& schema = kb_.schema();
    for (std::size_t m = 0; m < schema.size(); ++m) {
      if (schema[m].name == name) return m;
    }
    return std::nullopt;
  }

  void follow_ups() {
    const std::size_t n = 1 + rng_.below(3);
    for (std::size_t i = 0; i < n; ++i) {
      if (rng_.bernoulli(0.35)) {
        if (pointer_ < result_.count()) {
          offer(rng_.pick(kAnythingElse));
        } else {
          turn(rng_.pick(kAnythingElse), kNoMore, false);
          return;
        }
      } else {
        const auto& req = rng_.pick(kAttributeRequests);
        turn(rng_.pick(req.asks), attribute_response(req.key, result_.entities[offered_]), false);
      }
    }
  }

  const KnowledgeBase& kb_;
  const SyntheticOptions& opts_;
  Rng& rng_;
  Dialog dialog_;
  Belief belief_;
  KBResult result_;
  std::size_t pointer_ = 0;
  std::size_t offered_ = 0;
};

}  // namespace

SlotSchema restaurant_schema() {
  return {SlotSpec::from_domain("area", kAreas), SlotSpec::from_domain("food", kFoods),
          SlotSpec::from_domain("pricerange", kPrices)};
}

KnowledgeBase make_synthetic_kb(const SlotSchema& schema, std::size_t n_entities, std::uint64_t seed) {
  if (n_entities > kNameFirst.size() * kNameSecond.size()) {
    throw ConfigError("synthetic KB supports at most " + std::to_string(kNameFirst.size() * kNameSecond.size()) +
                      " entities");
  }
  Rng rng(seed);
  std::vector<std::string> names;
  for (const auto& a : kNameFirst) {
    for (const auto& b : kNameSecond) names.push_back("the " + a + " " + b);
  }
  rng.shuffle(names);

  // A handful of popular foods so that partial constraints return several
  // ranked matches.
  std::vector<std::vector<std::string>> domains;
  for (const auto& s : schema) domains.push_back(domain_values(s));
  std::vector<std::vector<std::string>> popular = domains;
  for (auto& d : popular) {
    rng.shuffle(d);
    d.resize(std::max<std::size_t>(1, std::min<std::size_t>(d.size(), 12)));
  }

  std::set<std::string> phones;
  std::set<std::string> addresses;
  std::vector<KBEntity> entities;
  for (std::size_t i = 0; i < n_entities; ++i) {
    KBEntity e;
    e.name = names[i];
    for (std::size_t m = 0; m < schema.size(); ++m) {
      const auto& pool = rng.bernoulli(0.6) ? popular[m] : domains[m];
      e.attributes[schema[m].name] = rng.pick(pool);
    }
    std::string phone;
    do {
      phone = "01223 " + format_digits(100000 + rng.below(900000), 6);
    } while (!phones.insert(phone).second);
    std::string address;
    do {
      address = std::to_string(1 + rng.below(199)) + " " + rng.pick(kStreets) + " " + rng.pick(kStreetKinds);
    } while (!addresses.insert(address).second);
    e.attributes["phone"] = phone;
    e.attributes["address"] = address;
    e.attributes["postcode"] = "cb" + std::to_string(1 + rng.below(5)) + " " + std::to_string(rng.below(10)) +
                               static_cast<char>('a' + rng.below(26)) + static_cast<char>('a' + rng.below(26));
    e.attributes["rating"] = std::to_string(1 + rng.below(10));
    entities.push_back(std::move(e));
  }
  return KnowledgeBase(std::move(entities), schema);
}

std::vector<Dialog> generate_synthetic_corpus(const KnowledgeBase& kb, std::size_t n_dialogs, std::uint64_t seed,
                                              const SyntheticOptions& opts) {
  if (kb.entities().empty()) throw ConfigError("synthetic corpus needs a non-empty KB");
  Rng rng(seed);
  std::vector<Dialog> out;
  out.reserve(n_dialogs);
  for (std::size_t i = 0; i < n_dialogs; ++i) {
    DialogWriter writer(kb, opts, rng, "synth-" + format_digits(i, 5));
    out.push_back(writer.run());
  }
  return out;
}

}  // namespace taskbot
