#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace owdet {

// Deterministic randomness helpers. std::mt19937 itself produces a
// standardized sequence, but std::uniform_int_distribution and std::shuffle
// are implementation-defined, so seeded selections would differ across
// standard libraries. These replacements pin the exact draws.

// Unbiased draw from [0, n) via rejection sampling on the raw 32-bit output.
// A forced outcome (n <= 1) consumes no engine state.
inline std::uint32_t draw_below(std::mt19937& rng, std::uint32_t n) {
  if (n <= 1) return 0;
  const std::uint64_t span = 0x100000000ull;
  const std::uint32_t limit =
      static_cast<std::uint32_t>(span - span % n);  // wraps to 0 when n is a power of two divisor
  for (;;) {
    const std::uint32_t v = rng();
    if (limit == 0 || v < limit) return v % n;
  }
}

// Fisher-Yates with pinned draw order.
template <typename T>
void shuffle_deterministic(std::vector<T>& items, std::mt19937& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::uint32_t j = draw_below(rng, static_cast<std::uint32_t>(i));
    std::swap(items[i - 1], items[j]);
  }
}

// First k of a deterministic shuffle of [0, n).
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k,
                                               std::mt19937& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  shuffle_deterministic(idx, rng);
  if (k < n) idx.resize(k);
  return idx;
}

}  // namespace owdet
