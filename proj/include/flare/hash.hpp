#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace flare {

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

// SHA-256 of a whole file's contents.
std::string sha256_file(const std::filesystem::path& path);

// 64-bit FNV-1a. Used for token bucketing, where a stable and cheap hash is
// all that is needed.
constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace flare
