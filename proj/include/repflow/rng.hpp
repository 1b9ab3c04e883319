#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace repflow {

// Counter-based splittable generator. Every output is a pure function of
// (stream seed, counter), so derived streams can be consumed in parallel
// without changing any value. Uniform and normal draws are reproducible
// across platforms (no libm dependence beyond sqrt/log/cos/sin).
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {}

  // Independent child stream identified by a label.
  Rng derive(std::string_view label) const {
    return Rng(mix(seed_ ^ mix(fnv1a(label))));
  }

  // Independent child stream identified by an index (replication, draw id).
  Rng derive(uint64_t index) const {
    return Rng(mix(seed_ ^ mix(index + kGolden)));
  }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return mix(seed_ + kGolden * ++counter_); }

  // Uniform on (0, 1].
  double uniform() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; generates pairs, caches the second.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * kPi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n), n > 0. Multiply-shift mapping.
  uint64_t uniform_int(uint64_t n) {
    const unsigned __int128 wide =
        static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
    return static_cast<uint64_t>(wide >> 64);
  }

  // Bernoulli(p).
  bool bernoulli(double p) { return uniform() <= p; }

 private:
  static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  static constexpr double kPi = 3.14159265358979323846;

  // SplitMix64 finalizer.
  static uint64_t mix(uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001B3ull;
    }
    return h;
  }

  uint64_t seed_;
  uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace repflow
