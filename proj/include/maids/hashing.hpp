#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

#include <zlib.h>

namespace maids {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// 64-bit FNV-1a. A non-zero seed is folded into the offset basis so that
/// different seeds give independent bucket assignments.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0) {
    std::uint64_t h = kFnvOffset ^ seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::uint32_t crc32_update(std::uint32_t crc, std::span<const unsigned char> bytes) {
    // zlib takes uInt lengths; feed in chunks for very large buffers.
    constexpr std::size_t kChunk = 1u << 30;
    std::size_t off = 0;
    while (off < bytes.size()) {
        std::size_t n = std::min(kChunk, bytes.size() - off);
        crc = static_cast<std::uint32_t>(::crc32(crc, bytes.data() + off, static_cast<uInt>(n)));
        off += n;
    }
    return crc;
}

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
    return crc32_update(static_cast<std::uint32_t>(::crc32(0L, Z_NULL, 0)), bytes);
}

}  // namespace maids
