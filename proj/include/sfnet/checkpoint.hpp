#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <map>
#include <sstream>
#include <string>

#include "sfnet/corpus.hpp"
#include "sfnet/model.hpp"

namespace sfnet {

// Checkpoint file: "SFCK", u32 version, u32 metadata length, metadata text
// ("key=value" lines), u32 block count, then per parameter block: u32 name
// length, name, u32 rank, u32 dims[rank], float64 values. Integers and floats
// are little-endian.
inline constexpr char kCheckpointMagic[4] = {'S', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  SFNetParams<double> params;
  std::map<std::string, std::string> metadata;
};

inline std::string serialize_checkpoint(const SFNetParams<double>& params,
                                        std::map<std::string, std::string> metadata) {
  metadata["feature_dim"] = std::to_string(params.dims.feature_dim);
  metadata["hidden"] = std::to_string(params.dims.hidden);
  metadata["num_classes"] = std::to_string(params.dims.num_classes);
  metadata["conv_width"] = std::to_string(params.dims.conv_width);
  std::string meta;
  for (const auto& [k, v] : metadata) meta += k + "=" + v + "\n";

  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  const auto tensors = params.tensors();
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::string& name = SFNetParams<double>::names()[i];
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(tensors[i]->rank()));
    for (std::size_t d : tensors[i]->shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : tensors[i]->data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      detail::put_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffu));
      detail::put_u32(out, static_cast<std::uint32_t>(bits >> 32));
    }
  }
  return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t off = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (off + n > bytes.size()) throw ParseError(std::string("checkpoint truncated in ") + what, off);
  };
  auto u32 = [&](const char* what) {
    need(4, what);
    const std::uint32_t v = detail::get_u32(data + off);
    off += 4;
    return v;
  };
  need(4, "magic");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw ParseError("not a checkpoint file: bad magic bytes", 0);
  }
  off = 4;
  const std::uint32_t version = u32("version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint32_t meta_len = u32("metadata length");
  need(meta_len, "metadata");
  Checkpoint ck;
  {
    std::istringstream in(std::string(bytes.substr(off, meta_len)));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("malformed checkpoint metadata", off);
      ck.metadata[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  off += meta_len;
  auto dim = [&](const char* key) -> std::size_t {
    auto it = ck.metadata.find(key);
    if (it == ck.metadata.end()) throw ParseError(std::string("checkpoint metadata lacks ") + key, 12);
    return std::stoull(it->second);
  };
  ck.params.dims = ModelDims{dim("feature_dim"), dim("hidden"), dim("num_classes"), dim("conv_width")};
  validate(ck.params.dims);
  const SFNetParams<double> expected = init_params<double>(ck.params.dims, 0);

  const std::uint32_t blocks = u32("block count");
  auto slots = ck.params.tensors();
  if (blocks != slots.size()) {
    throw ParseError("checkpoint holds " + std::to_string(blocks) + " blocks, expected " +
                         std::to_string(slots.size()),
                     off - 4);
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::size_t block_start = off;
    const std::uint32_t name_len = u32("block name");
    need(name_len, "block name");
    const std::string name(bytes.substr(off, name_len));
    off += name_len;
    if (name != SFNetParams<double>::names()[i]) {
      throw ParseError("unexpected parameter block '" + name + "'", block_start);
    }
    Shape shape(u32("block rank"));
    for (auto& d : shape) d = u32("block shape");
    if (shape != expected.tensors()[i]->shape()) {
      throw ParseError("parameter block '" + name + "' has shape " + to_string(shape), block_start);
    }
    Tensor<double> t(shape);
    need(8 * t.size(), "parameter values");
    for (auto& v : t.data()) {
      const std::uint64_t lo = detail::get_u32(data + off);
      const std::uint64_t hi = detail::get_u32(data + off + 4);
      v = std::bit_cast<double>(lo | (hi << 32));
      if (!std::isfinite(v)) throw ParseError("non-finite parameter in '" + name + "'", off);
      off += 8;
    }
    *slots[i] = std::move(t);
  }
  if (off != bytes.size()) throw ParseError("trailing bytes after checkpoint", off);
  return ck;
}

inline void save_checkpoint(const std::string& path, const SFNetParams<double>& params,
                            std::map<std::string, std::string> metadata = {}) {
  detail::write_file(path, serialize_checkpoint(params, std::move(metadata)));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(detail::read_file(path));
}

}  // namespace sfnet
