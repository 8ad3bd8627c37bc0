#pragma once

// Seeded randomness shared by every stochastic step (splits, batch sampling,
// mutation actions, crawl frontier shuffles).
//
// The engine is std::mt19937 seeded with a single 32-bit integer, whose output
// sequence is fixed by the C++ standard (and matches numpy's legacy
// RandomState(seed)). Bounded draws use rejection sampling so they are
// reproducible outside C++:
//
//   limit = 2^32 - (2^32 mod bound); draw x until x < limit; return x mod bound
//
// Shuffles are Fisher-Yates from the last index down to 1 with
// j = uniform_below(i + 1).

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace dpguard {

using Rng = std::mt19937;

inline Rng make_rng(std::uint32_t seed) { return Rng(seed); }

std::uint32_t uniform_below(Rng& rng, std::uint32_t bound);

// Uniform double in [0, 1) with 32 bits of resolution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng()) * (1.0 / 4294967296.0);
}

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = uniform_below(rng, static_cast<std::uint32_t>(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  shuffle(std::span<T>(items), rng);
}

// k distinct picks from `pool`, uniformly, in draw order (partial Fisher-Yates).
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t k,
                                          Rng& rng) {
  if (k > pool.size()) k = pool.size();
  const std::size_t n = pool.size();
  for (std::size_t i = 0; i < k; ++i) {
    const auto j =
        i + uniform_below(rng, static_cast<std::uint32_t>(n - i));
    using std::swap;
    swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace dpguard
