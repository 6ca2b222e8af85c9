// SPDX-License-Identifier: Apache-2.0
#include "taskbot/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "taskbot/errors.hpp"

namespace taskbot {

namespace {

constexpr char kMagic[8] = {'T', 'B', 'P', 'A', 'R', 'A', 'M', 'S'};

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
  }

  std::string get_string(std::size_t len) {
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ParseError("parameter file truncated at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_param_file(const ParamFile& file) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kParamFileVersion);
  put<std::uint64_t>(out, file.metadata.size());
  out += file.metadata;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double x : t.data()) put<double>(out, x);
  }
  return out;
}

ParamFile decode_param_file(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("not a parameter file (bad magic)");
  }
  Reader r(bytes);
  r.get_string(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kParamFileVersion) {
    throw ParseError("unsupported parameter file version " + std::to_string(version));
  }
  ParamFile file;
  file.metadata = r.get_string(r.get<std::uint64_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 2) throw ParseError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<double> data(shape_numel(shape));
    for (double& x : data) x = r.get<double>();
    file.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw ParseError("trailing bytes after parameter file");
  return file;
}

void write_param_file(const std::filesystem::path& path, const ParamFile& file) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_param_file(file);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

ParamFile read_param_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_param_file(ss.str());
}

}  // namespace taskbot
