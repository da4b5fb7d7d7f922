#pragma once

// Deterministic seed derivation and the few random streams the toolkit needs.
// Every stream is a pure function of (root seed, purpose, index), so results
// never depend on call order or thread interleaving.

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace hestia::rng {

// SplitMix64 step; used both as a PRNG seeder and as a cheap hash mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over arbitrary bytes; used for dataset fingerprints and config hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), seed);
}

// Derive a child seed from a root seed plus a label and indices.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t s = root ^ fnv1a(purpose);
  splitmix64(s);
  s ^= 0x632be59bd9b4e019ULL + a;
  splitmix64(s);
  s ^= 0x9e3779b97f4a7c15ULL + b;
  return splitmix64(s);
}

inline std::mt19937_64 engine(std::uint64_t seed) { return std::mt19937_64(seed); }

inline std::vector<double> gaussian(std::size_t n, std::uint64_t seed,
                                    double mean = 0.0, double stddev = 1.0) {
  auto eng = engine(seed);
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(eng);
  return out;
}

inline std::vector<double> uniform(std::size_t n, std::uint64_t seed,
                                   double lo, double hi) {
  auto eng = engine(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(eng);
  return out;
}

// Rademacher +/-1 entries.
inline std::vector<double> rademacher(std::size_t n, std::uint64_t seed) {
  auto eng = engine(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = (eng() & 1u) ? 1.0 : -1.0;
  return out;
}

inline std::vector<std::size_t> sample_indices(std::size_t count, std::size_t range,
                                               std::uint64_t seed) {
  auto eng = engine(seed);
  std::uniform_int_distribution<std::size_t> dist(0, range - 1);
  std::vector<std::size_t> out(count);
  for (auto& v : out) v = dist(eng);
  return out;
}

}  // namespace hestia::rng
