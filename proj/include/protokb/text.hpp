#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace protokb {

/// Lowercases, replaces punctuation (other than '-' and '/') with spaces,
/// collapses whitespace runs and trims. Idempotent.
std::string normalize_phrase(std::string_view raw);

/// Splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);

/// Splits report text into sentences on '.', ';' and newlines; empty pieces dropped.
std::vector<std::string> split_sentences(std::string_view text);

/// 64-bit FNV-1a. Used wherever a hash must be stable across platforms.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Mixes a global seed with a string key into a per-key seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view key);

}  // namespace protokb
