#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace gfnal {

using Engine = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Mixes a master seed with any number of integer labels. Used to give every
/// (iteration, purpose) pair its own stream so that adding a consumer never
/// shifts the draws of another.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> labels) noexcept {
  std::uint64_t h = splitmix64(master);
  for (auto l : labels) h = splitmix64(h ^ splitmix64(l + 0x632BE59BD9B4E019ULL));
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t label, std::string_view purpose) noexcept {
  return derive_seed(master, {label, fnv1a64(purpose)});
}

/// A reproducible source of randomness: identical (seed, stream) pairs always
/// produce identical draw sequences.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  [[nodiscard]] Engine engine() const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Engine(seq);
  }

  [[nodiscard]] RngStream substream(std::uint64_t id) const noexcept {
    return {seed, derive_seed(stream, {id})};
  }

  friend bool operator==(const RngStream&, const RngStream&) = default;
};

inline double uniform01(Engine& eng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(eng);
}

inline bool bernoulli(Engine& eng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform01(eng) < p;
}

}  // namespace gfnal
