// SPDX-License-Identifier: Apache-2.0
//
// Restaurant-domain fixtures: a slot schema with 5 areas, 91 food types and 3
// price ranges, a random restaurant KB, and a rule-based user simulator
// paired with an oracle system policy that writes dialogs in corpus format.
#pragma once

#include <cstdint>
#include <vector>

#include "taskbot/corpus.hpp"
#include "taskbot/kb.hpp"

namespace taskbot {

SlotSchema restaurant_schema();

/// `n_entities` restaurants with unique names, phone numbers and addresses.
KnowledgeBase make_synthetic_kb(const SlotSchema& schema, std::size_t n_entities, std::uint64_t seed);

struct SyntheticOptions {
  std::size_t max_entities = 8;
  /// Probability that a goal is copied from an existing KB entity (so the
  /// API call has at least one match).
  double matchable_goal = 0.75;
  double dontcare = 0.15;
  double revise = 0.15;
};

/// Dialog flow: greeting, slot constraints (possibly revised), API call,
/// entity offer or no-match notice, attribute requests / alternatives, and
/// closing. Every system response belongs to a closed template set, so all
/// labels are derivable.
std::vector<Dialog> generate_synthetic_corpus(const KnowledgeBase& kb, std::size_t n_dialogs, std::uint64_t seed,
                                              const SyntheticOptions& opts = {});

}  // namespace taskbot
