#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace mlsm {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t seed = 0xCBF29CE484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

/// Stateless seed derivation: (master, stream name, counter) -> independent seed.
/// Keeps training/validation/evaluation reproducible and resumable without
/// persisting generator state.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                                 std::uint64_t counter) {
  std::uint64_t h = fnv1a64(stream.data(), stream.size(), splitmix64(master));
  return splitmix64(h ^ splitmix64(counter + 0x51ED270B2D4C4B21ull));
}

/// Thin wrapper over mt19937_64 with the handful of draws the toolkit needs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    return d(eng_);
  }

  double uniform() {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(eng_);
  }

  double normal() {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(eng_);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace mlsm
