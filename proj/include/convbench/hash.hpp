// Stable hashing and seeded RNG primitives. Everything here is fixed by
// definition and must never change: split assignments, shard routing and
// shuffle orders are derived from these exact bit patterns.
#pragma once

#include <cstdint>
#include <string_view>

namespace convbench {

inline constexpr uint64_t kFnvOffsetBasis = 14695981039346656037ULL;
inline constexpr uint64_t kFnvPrime = 1099511628211ULL;

// FNV-1a 64-bit over raw bytes. Identical input gives the identical hash on
// every platform and run; empty input hashes to the offset basis.
inline constexpr uint64_t stable_key_hash(std::string_view key) noexcept {
  uint64_t h = kFnvOffsetBasis;
  for (unsigned char byte : key) {
    h ^= byte;
    h *= kFnvPrime;
  }
  return h;
}

// splitmix64 finalizer; used to derive independent seeds from (seed, index).
inline constexpr uint64_t mix64(uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr uint64_t mix64(uint64_t seed, uint64_t index) noexcept {
  return mix64(seed + 0x9E3779B97F4A7C15ULL * (index + 1));
}

// Minimal splitmix64 generator. std::mt19937_64 is standardized too, but the
// distributions on top of it are not; this keeps every derived stream fully
// specified by this header alone.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(uint64_t seed) noexcept : state_(seed) {}

  constexpr uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  constexpr double next_unit() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  // uniform in [0, bound); bound > 0. Modulo bias is irrelevant here, the
  // contract is determinism, not exact uniformity.
  constexpr uint64_t next_below(uint64_t bound) noexcept { return next() % bound; }

 private:
  uint64_t state_;
};

// In-place Fisher-Yates permutation driven by SplitMix64.
template <typename Container>
void seeded_shuffle(Container& items, uint64_t seed) {
  SplitMix64 rng(seed);
  const size_t n = items.size();
  for (size_t i = n; i > 1; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace convbench
