#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace avdiff {

// 64-bit FNV-1a. Used as the content digest for configs, layouts,
// parameter stores and file payloads.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t state = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t state = 0xcbf29ce484222325ULL);

/// 16 lowercase hex digits.
std::string digest_hex(std::uint64_t digest);
std::uint64_t parse_digest_hex(std::string_view hex);

}  // namespace avdiff
