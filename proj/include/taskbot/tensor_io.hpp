// SPDX-License-Identifier: Apache-2.0
//
// Flat parameter container.
//
//   magic    "TBPARAMS"            8 bytes
//   version  u32                   currently 1
//   metadata u64 length + bytes    free-form text (the model manifest)
//   count    u32
//   count × { name: u32 length + bytes, rank: u32, dims: rank × u64,
//             data: numel × f64 }
//
// All integers and doubles are little-endian.
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "taskbot/tensor.hpp"

namespace taskbot {

inline constexpr std::uint32_t kParamFileVersion = 1;

struct ParamFile {
  std::string metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

std::string encode_param_file(const ParamFile& file);
ParamFile decode_param_file(const std::string& bytes);

void write_param_file(const std::filesystem::path& path, const ParamFile& file);
ParamFile read_param_file(const std::filesystem::path& path);

}  // namespace taskbot
