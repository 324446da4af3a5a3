#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

namespace canet {

inline constexpr std::uint64_t kFnv1a64Offset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnv1a64Prime = 1099511628211ull;

inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t state = kFnv1a64Offset) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state ^= bytes[i];
    state *= kFnv1a64Prime;
  }
  return state;
}

inline std::uint64_t fnv1a64(const std::string& text, std::uint64_t state = kFnv1a64Offset) {
  return fnv1a64(text.data(), text.size(), state);
}

inline std::uint64_t fnv1a64_file(const std::string& path,
                                  std::uint64_t state = kFnv1a64Offset) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("fnv1a64_file: cannot open " + path);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    state = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), state);
  }
  return state;
}

inline std::string hex64(std::uint64_t value) {
  static const char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace canet
