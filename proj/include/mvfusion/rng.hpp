#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>
#include <vector>

namespace mvf::rng {

// Counter-based generator: every draw is a pure function of a key tuple, so
// identical keys give identical draws regardless of call order.  Determinism
// holds per machine (libm cos/log may differ across platforms).

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash(std::initializer_list<std::uint64_t> key) {
  std::uint64_t h = 0x6a09e667f3bcc909ull;
  for (std::uint64_t k : key) h = mix(h ^ mix(k));
  return h;
}

inline std::uint64_t name_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

// Distinct draw-site tags keep independent random streams from colliding.
enum Tag : std::uint64_t {
  kInit = 1,
  kLatent,
  kMissingNoise,
  kShuffle,
  kSplit,
  kLabelMask,
  kViewMask,
  kSynth,
  kMc,
};

inline double to_unit(std::uint64_t h) {  // [0,1)
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double uniform(std::initializer_list<std::uint64_t> key) { return to_unit(hash(key)); }

inline double normal(std::initializer_list<std::uint64_t> key) {
  const std::uint64_t h = hash(key);
  // Box-Muller; u1 shifted into (0,1] so the log stays finite.
  const double u1 = static_cast<double>((mix(h ^ 0x243f6a8885a308d3ull) >> 11) + 1) * 0x1.0p-53;
  const double u2 = to_unit(mix(h ^ 0x13198a2e03707344ull));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Fisher-Yates keyed by (key..., position); bias ~n/2^53, irrelevant here.
inline std::vector<int> shuffled_indices(std::size_t n, std::initializer_list<std::uint64_t> key) {
  std::vector<std::uint64_t> base(key);
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  for (std::size_t i = n; i > 1; --i) {
    std::uint64_t h = 0x6a09e667f3bcc909ull;
    for (std::uint64_t k : base) h = mix(h ^ mix(k));
    h = mix(h ^ mix(i));
    const auto j = static_cast<std::size_t>(to_unit(h) * static_cast<double>(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace mvf::rng
