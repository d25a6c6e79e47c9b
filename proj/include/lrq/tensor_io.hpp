#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "lrq/tensor.hpp"

// Little-endian primitives shared by every binary format in the library, plus
// the LRQT tensor block: "LRQT", u32 rank, u64 extents, f64 row-major payload.

namespace lrq::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw DataError(std::string("truncated input while reading ") + what);
  }
  return v;
}

inline void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4] = {};
  is.read(got, 4);
  if (is.gcount() != 4) throw DataError(std::string("truncated input: missing ") + magic + " header");
  if (std::memcmp(got, magic, 4) != 0) {
    throw DataError(std::string("bad magic: expected ") + magic + ", got '" + std::string(got, 4) + "'");
  }
}

inline void write_doubles(std::ostream& os, std::span<const double> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::istream& is, std::span<double> v, const char* what) {
  const auto bytes = static_cast<std::streamsize>(v.size() * sizeof(double));
  is.read(reinterpret_cast<char*>(v.data()), bytes);
  if (is.gcount() != bytes) throw DataError(std::string("truncated input while reading ") + what);
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
  write_magic(os, "LRQT");
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) write_pod<std::uint64_t>(os, e);
  write_doubles(os, t.values());
}

inline Tensor read_tensor(std::istream& is) {
  expect_magic(is, "LRQT");
  const auto rank = read_pod<std::uint32_t>(is, "tensor rank");
  if (rank > 8) throw DataError("tensor rank " + std::to_string(rank) + " is implausible");
  Shape shape(rank);
  std::uint64_t total = 1;
  for (auto& e : shape) {
    e = read_pod<std::uint64_t>(is, "tensor extent");
    total *= e;
    if (total > (std::uint64_t{1} << 36)) throw DataError("tensor extents too large");
  }
  Buffer data(shape_numel(shape));
  read_doubles(is, data, "tensor payload");
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace lrq::io
