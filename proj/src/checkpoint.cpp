// SPDX-License-Identifier: Apache-2.0
#include "taskbot/checkpoint.hpp"

#include <fstream>

#include "taskbot/errors.hpp"
#include "taskbot/tensor_io.hpp"

namespace taskbot {

using nlohmann::json;

namespace {
constexpr const char* kFormat = "taskbot-checkpoint";
}

Checkpoint make_checkpoint(const ModelConfig& config, const ModelParams& params, const Preprocessor& prep,
                           json info) {
  Checkpoint c;
  c.config = config;
  c.params = params;
  c.params.set_requires_grad(false);
  c.vocab = prep.vocab.tokens();
  c.candidates = prep.candidates;
  c.info = std::move(info);
  return c;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ParamFile file;
  const json manifest = {{"format", kFormat},
                         {"model_config", to_json(ckpt.config)},
                         {"vocab", ckpt.vocab},
                         {"candidates", ckpt.candidates},
                         {"info", ckpt.info}};
  file.metadata = manifest.dump();
  for (const auto& [name, t] : ckpt.params.named()) {
    Tensor copy(t->shape(), std::vector<double>(t->data().begin(), t->data().end()));
    file.tensors.emplace_back(name, std::move(copy));
  }
  return encode_param_file(file);
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  ParamFile file = decode_param_file(bytes);
  json manifest;
  try {
    manifest = json::parse(file.metadata);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  if (manifest.value("format", "") != kFormat) throw ParseError("not a taskbot checkpoint");
  Checkpoint c;
  c.config = model_config_from_json(manifest.at("model_config"));
  c.config.validate();
  c.vocab = manifest.at("vocab").get<std::vector<std::string>>();
  c.candidates = manifest.at("candidates").get<std::vector<std::string>>();
  c.info = manifest.value("info", json::object());
  if (c.vocab.size() != c.config.vocab_size) throw ParseError("checkpoint vocabulary size does not match its config");
  if (c.candidates.size() != c.config.response_count) {
    throw ParseError("checkpoint candidate count does not match its config");
  }

  c.params = init_model(c.config, 0);
  auto named = c.params.named();
  if (named.size() != file.tensors.size()) {
    throw ParseError("checkpoint has " + std::to_string(file.tensors.size()) + " tensors, model expects " +
                     std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, tensor] = file.tensors[i];
    if (name != named[i].first) throw ParseError("checkpoint tensor '" + name + "' where '" + named[i].first + "' expected");
    if (tensor.shape() != named[i].second->shape()) {
      throw ParseError("checkpoint tensor '" + name + "' has shape " + shape_str(tensor.shape()) + ", expected " +
                       shape_str(named[i].second->shape()));
    }
    *named[i].second = std::move(tensor);
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Preprocessor checkpoint_preprocessor(const Checkpoint& ckpt, const KnowledgeBase& kb) {
  if (kb.schema() != ckpt.config.slots) throw ConfigError("KB slot schema does not match the checkpoint's slots");
  Preprocessor prep;
  prep.schema = ckpt.config.slots;
  prep.lexicon = Lexicon::build(prep.schema, kb.entities());
  prep.vocab = Vocabulary(ckpt.vocab);
  prep.candidates = ckpt.candidates;
  prep.max_entities = ckpt.config.max_entities;
  return prep;
}

InferenceBundle make_bundle(Checkpoint ckpt, KnowledgeBase kb) {
  Preprocessor prep = checkpoint_preprocessor(ckpt, kb);
  json info = ckpt.info;
  info["variant"] = to_string(ckpt.config.variant);
  info["vocab_size"] = ckpt.config.vocab_size;
  info["max_entities"] = ckpt.config.max_entities;
  return InferenceBundle{std::move(ckpt.config), std::move(ckpt.params), std::move(prep), std::move(kb),
                         std::move(info)};
}

}  // namespace taskbot
