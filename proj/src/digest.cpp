#include "avdiff/digest.hpp"

#include "avdiff/types.hpp"

#include <charconv>
#include <cstdio>

namespace avdiff {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t state) {
    for (std::uint8_t b : bytes) {
        state ^= b;
        state *= 0x100000001b3ULL;
    }
    return state;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t state) {
    return fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()),
                   state);
}

std::string digest_hex(std::uint64_t digest) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
    return std::string(buf, 16);
}

std::uint64_t parse_digest_hex(std::string_view hex) {
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), value, 16);
    if (ec != std::errc() || ptr != hex.data() + hex.size() || hex.size() != 16) {
        throw FormatError("malformed digest '" + std::string(hex) + "'");
    }
    return value;
}

}  // namespace avdiff
