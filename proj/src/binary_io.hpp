#pragma once

// Little helpers for the fixed-layout binary containers (bundles, stores,
// checkpoints, feature summaries). Values are written in host byte order;
// all supported targets are little-endian.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "puzzlegan/errors.hpp"

namespace puzzlegan::detail {

template <typename T>
  requires std::is_trivially_copyable_v<T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
  requires std::is_trivially_copyable_v<T>
T get(std::istream& in, std::string_view what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ValidationError("truncated " + std::string(what));
  return value;
}

template <typename T>
void put_span(std::ostream& out, std::span<const T> values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
}

template <typename T>
void get_span(std::istream& in, std::span<T> values, std::string_view what) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!in) throw ValidationError("truncated " + std::string(what));
}

inline void put_string(std::ostream& out, std::string_view s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, std::string_view what, std::uint64_t limit = 1u << 30) {
  const auto n = get<std::uint64_t>(in, what);
  if (n > limit) throw ValidationError("corrupt " + std::string(what) + ": string too long");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ValidationError("truncated " + std::string(what));
  return s;
}

inline void expect_magic(std::istream& in, std::string_view magic, std::string_view what) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!in || got != magic) throw ValidationError("not a " + std::string(what) + " (bad magic)");
}

}  // namespace puzzlegan::detail
