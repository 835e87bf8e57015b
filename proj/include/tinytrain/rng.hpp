#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tinytrain {

// One 64-bit run seed fans out into independent named streams
// ("sampler", "init", "augment", "selection", ...), each optionally indexed
// by trial or episode number.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(seed, stream, index));
}

// FNV-1a, used for stream names and config hashing.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL);

}  // namespace tinytrain
