#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

namespace dtfl {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Derives an independent generator from a base seed and a tuple of keys,
/// e.g. (seed, round, client). Streams for distinct key tuples do not depend
/// on how many numbers any other stream consumed, which is what keeps
/// concurrent client training reproducible.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = detail::splitmix64(seed);
  for (std::uint64_t k : keys) h = detail::splitmix64(h ^ detail::splitmix64(k + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

/// Fisher-Yates with explicit bounded draws, so a permutation depends only on
/// the generator state.
template <class T>
void shuffle_in_place(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(items[i - 1], items[pick(rng)]);
  }
}

// Stream domains, so that e.g. sampling and shuffling for the same round never
// share a generator.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kSampling = 2;
inline constexpr std::uint64_t kLocalTrain = 3;
inline constexpr std::uint64_t kPartition = 4;
inline constexpr std::uint64_t kSplit = 5;
inline constexpr std::uint64_t kScenario = 6;
inline constexpr std::uint64_t kTwin = 7;
inline constexpr std::uint64_t kSlices = 8;
inline constexpr std::uint64_t kMeta = 9;
}  // namespace stream

}  // namespace dtfl
