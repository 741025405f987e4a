#pragma once

#include <cstdint>
#include <string_view>

namespace stablegroups {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed. derive_seed(s, 0) == s so that a
/// single-point grid or a single stream reproduces the base run.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return stream == 0 ? base : base ^ mix64(stream);
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace stablegroups
