#pragma once

// Parameter checkpoint file, all integers and floats little-endian:
//
//   bytes 0..7   magic "SRWDCKP1"
//   u32          entry count N
//   N times:
//     u32        name length L
//     L bytes    name (UTF-8, e.g. "rewarder.emb_x.weight")
//     u32        rank R
//     R x u64    dimensions
//     P x f64    values in row-major order, P = product of dimensions
//
// Values are stored as raw IEEE-754 bit patterns, so save/load is bitwise exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "semireward/error.hpp"
#include "semireward/optim.hpp"
#include "semireward/tensor.hpp"

namespace semireward {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'S', 'R', 'W', 'D', 'C', 'K', 'P', '1'};

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFFu);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  static_assert(std::is_unsigned_v<T>);
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw IoError("checkpoint truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) detail::write_le<std::uint64_t>(out, d);
    for (double v : tensor.data()) detail::write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[sizeof(detail::kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError("'" + path.string() + "' is not a parameter checkpoint");
  }
  const auto count = detail::read_le<std::uint32_t>(in);
  std::vector<NamedTensor> entries;
  entries.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = detail::read_le<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("checkpoint truncated");
    const auto rank = detail::read_le<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::read_le<std::uint64_t>(in));
    std::vector<double> values(numel(shape));
    for (double& v : values) v = std::bit_cast<double>(detail::read_le<std::uint64_t>(in));
    entries.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return entries;
}

// Flattens parameter groups into entries named "<prefix>.<parameter name>".
inline void append_parameters(std::vector<NamedTensor>& entries, const std::string& prefix,
                              const ParameterSet& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor copy(params[i].shape(), params[i].values());
    entries.push_back({prefix + "." + params.name(i), std::move(copy)});
  }
}

// Overwrites every parameter in `params` from entries "<prefix>.<name>".
inline void load_parameters(const std::vector<NamedTensor>& entries, const std::string& prefix,
                            ParameterSet& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string key = prefix + "." + params.name(i);
    const NamedTensor* found = nullptr;
    for (const auto& e : entries) {
      if (e.name == key) {
        found = &e;
        break;
      }
    }
    if (!found) throw IoError("checkpoint has no entry '" + key + "'");
    if (found->tensor.shape() != params[i].shape()) {
      throw ShapeError("checkpoint entry '" + key + "' has shape " + to_string(found->tensor.shape()) +
                       ", expected " + to_string(params[i].shape()));
    }
    params[i].values() = found->tensor.values();
  }
}

inline const Tensor* find_entry(const std::vector<NamedTensor>& entries, const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

}  // namespace semireward
