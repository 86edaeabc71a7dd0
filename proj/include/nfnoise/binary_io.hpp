#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "nfnoise/error.hpp"

namespace nfnoise::io {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

template <class T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <class T>
T read_le(std::istream& in, const char* what) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) throw DataError(std::string("truncated input while reading ") + what);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  if (!in.read(dst, static_cast<std::streamsize>(n))) {
    throw DataError(std::string("truncated input while reading ") + what);
  }
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const char* what) {
  char got[4];
  read_exact(in, got, 4, what);
  if (std::memcmp(got, magic, 4) != 0) throw DataError(std::string("bad magic in ") + what);
}

}  // namespace nfnoise::io
