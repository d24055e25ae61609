#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "pemb/tensor.hpp"

// Named-tensor container:
//
//   magic "PEMBTNSR" | u32 version | u32 count
//   count x { u32 name_len | name | u8 elem_bytes (4 or 8) | u32 rank |
//             rank x u64 extent | values }
//
// All integers and values are little-endian; values are IEEE-754.
namespace pemb::checkpoint {

inline constexpr char kMagic[8] = {'P', 'E', 'M', 'B', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class U>
U to_little(U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
    return v;
  }
}

template <class U>
void put(std::ostream& out, U v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& in) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw FormatError("truncated checkpoint");
  return to_little(v);
}

}  // namespace detail

/// Writes tensors in map (name) order so identical contents give identical bytes.
template <class T>
void write(std::ostream& out, const std::map<std::string, Tensor<T>>& tensors) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  out.write(kMagic, sizeof kMagic);
  detail::put<std::uint32_t>(out, kVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint8_t>(out, sizeof(T));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put<std::uint64_t>(out, e);
    for (T v : t.values()) detail::put<T>(out, v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

template <class T>
std::map<std::string, Tensor<T>> read(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw FormatError("not a tensor checkpoint");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get<std::uint32_t>(in);
  std::map<std::string, Tensor<T>> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = detail::get<std::uint32_t>(in);
    if (len > (1u << 16)) throw FormatError("implausible tensor name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto elem = detail::get<std::uint8_t>(in);
    const auto rank = detail::get<std::uint32_t>(in);
    if (rank > 8) throw FormatError("implausible rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(detail::get<std::uint64_t>(in));
    std::vector<T> values(shape_size(shape));
    for (auto& v : values) {
      if (elem == 4) v = static_cast<T>(detail::get<float>(in));
      else if (elem == 8) v = static_cast<T>(detail::get<double>(in));
      else throw FormatError("unsupported element width for " + name);
    }
    out.emplace(name, Tensor<T>(std::move(shape), std::move(values)));
  }
  return out;
}

template <class T>
void save(const std::string& path, const std::map<std::string, Tensor<T>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write(out, tensors);
}

template <class T>
std::map<std::string, Tensor<T>> load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read<T>(in);
}

}  // namespace pemb::checkpoint
