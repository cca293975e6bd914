#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace voxgan {

// FNV-1a 64-bit.
inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t h = 0xCBF29CE484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Hash of a file's bytes; throws std::runtime_error if unreadable.
std::uint64_t hash_file(const std::string& path);

std::string hash_hex(std::uint64_t h);

}  // namespace voxgan
