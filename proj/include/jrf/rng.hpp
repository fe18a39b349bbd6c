#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace jrf {

// Seeded random stream. Named substreams let every subsystem draw from an
// independent, reproducible sequence derived from one master seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  static Rng derive(std::uint64_t seed, std::string_view stream) {
    return Rng(mix(seed, fnv1a(stream)));
  }

  Rng derive(std::string_view stream) const {
    return Rng(mix(seed_, fnv1a(stream)));
  }

  double normal() { return normal_(eng_); }
  double uniform() { return uniform_(eng_); }  // [0,1)
  std::uint64_t integer(std::uint64_t n) {  // [0,n)
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(eng_);
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : s) {
      h ^= std::uint64_t(static_cast<unsigned char>(c));
      h *= 1099511628211ull;
    }
    return h;
  }

  // splitmix64 finalizer over the combined words.
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b | 1ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_ = 0;
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace jrf
