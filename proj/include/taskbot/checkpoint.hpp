// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints: model parameters plus a JSON manifest (model config, slot
// schema, vocabulary, response candidates and training info) in one file.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "taskbot/corpus.hpp"
#include "taskbot/model.hpp"
#include "taskbot/session.hpp"

namespace taskbot {

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::vector<std::string> vocab;
  std::vector<std::string> candidates;
  nlohmann::json info = nlohmann::json::object();
};

Checkpoint make_checkpoint(const ModelConfig& config, const ModelParams& params, const Preprocessor& prep,
                           nlohmann::json info = nlohmann::json::object());

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Preprocessor for a checkpoint and KB; throws ConfigError when the KB
/// schema differs from the checkpoint's slots.
Preprocessor checkpoint_preprocessor(const Checkpoint& ckpt, const KnowledgeBase& kb);

InferenceBundle make_bundle(Checkpoint ckpt, KnowledgeBase kb);

}  // namespace taskbot
