#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "crosslmm/error.hpp"
#include "crosslmm/model.hpp"

// Checkpoint layout (all integers and floats little-endian):
//
//   "XLMMCKPT"                      8 bytes
//   version                         u32 (currently 1)
//   entry count                     u32
//   per entry: name length u32, name bytes, rank u32, extents u64 × rank
//   values: every entry's data as f64, entries in header order
//
// Entries appear in the model's canonical parameter order.

namespace crosslmm {

inline constexpr std::array<char, 8> kCheckpointMagic = {'X', 'L', 'M', 'M',
                                                        'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size()))
    throw ContractError("checkpoint is truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::vector<NamedParam>& params) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const NamedParam& p : params) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t e : p.tensor.shape()) detail::put_le<std::uint64_t>(os, e);
  }
  for (const NamedParam& p : params)
    for (double v : p.tensor.data()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw Error("failed writing checkpoint");
}

inline std::vector<CheckpointEntry> read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw ContractError("not a checkpoint file (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw ContractError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(is);
  std::vector<CheckpointEntry> entries(count);
  for (CheckpointEntry& e : entries) {
    const auto len = detail::get_le<std::uint32_t>(is);
    e.name.resize(len);
    if (!is.read(e.name.data(), len)) throw ContractError("checkpoint is truncated");
    const auto rank = detail::get_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < rank; ++i)
      e.shape.push_back(static_cast<std::size_t>(detail::get_le<std::uint64_t>(is)));
  }
  for (CheckpointEntry& e : entries) {
    e.values.resize(shape_numel(e.shape));
    for (double& v : e.values) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw ContractError("checkpoint has trailing bytes");
  return entries;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_checkpoint(os, model.named_params());
}

/// Copies checkpoint values into `model`; names and shapes must match the
/// model's canonical layout exactly.
inline void load_checkpoint(std::istream& is, Model& model) {
  const auto entries = read_checkpoint(is);
  auto params = model.named_params();
  if (entries.size() != params.size())
    throw ContractError("checkpoint has " + std::to_string(entries.size()) +
                        " entries, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (entries[i].name != params[i].name || entries[i].shape != params[i].tensor.shape())
      throw ContractError("checkpoint entry " + std::to_string(i) + " is " + entries[i].name +
                          shape_str(entries[i].shape) + ", model expects " + params[i].name +
                          shape_str(params[i].tensor.shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    std::copy(entries[i].values.begin(), entries[i].values.end(), dst.begin());
  }
}

inline void load_checkpoint(const std::filesystem::path& path, Model& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  load_checkpoint(is, model);
}

}  // namespace crosslmm
