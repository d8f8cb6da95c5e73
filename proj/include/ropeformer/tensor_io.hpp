#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ropeformer/tensor.hpp"

namespace ropeformer {

// Binary tensor dump:
//   8 bytes  magic "RPFTNSR1"
//   u32      rank
//   u32      dims[rank]
//   f64      payload, row-major
// All integers and doubles little-endian.

inline constexpr std::array<char, 8> kTensorMagic = {'R', 'P', 'F', 'T', 'N', 'S', 'R', '1'};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline std::uint64_t get_le(const std::vector<std::uint8_t>& in, std::size_t& pos, int bytes) {
  if (pos + static_cast<std::size_t>(bytes) > in.size()) throw Error("tensor dump truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out(kTensorMagic.begin(), kTensorMagic.end());
  out.reserve(8 + 4 * (1 + t.rank()) + 8 * t.size());
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) detail::put_f64(out, v);
  return out;
}

inline Tensor decode_tensor(const std::vector<std::uint8_t>& in) {
  if (in.size() < 12 || std::memcmp(in.data(), kTensorMagic.data(), kTensorMagic.size()) != 0) {
    throw Error("not a tensor dump (bad magic)");
  }
  std::size_t pos = 8;
  const auto rank = static_cast<std::size_t>(detail::get_le(in, pos, 4));
  Tensor::Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(detail::get_le(in, pos, 4));
  std::size_t n = rank == 0 ? 0 : 1;
  for (std::size_t d : shape) n *= d;
  if (in.size() != pos + 8 * n) throw Error("tensor dump payload length does not match its header");
  std::vector<double> data(n);
  for (auto& v : data) v = std::bit_cast<double>(detail::get_le(in, pos, 8));
  if (rank == 0) return Tensor();
  return Tensor(std::move(shape), std::move(data));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path.string());
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

}  // namespace ropeformer
