#ifndef DAOVFL_RNG_HPP_
#define DAOVFL_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace daovfl {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seeded generator with portable uniform/normal draws. The standard
// distributions are implementation-defined, which would make golden
// files depend on the C++ library, so only the engine bits are used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : Rng(splitmix64(seed), 0) {}

  // Independent child stream identified by `tag`.
  Rng fork(std::uint64_t tag) const {
    return Rng(splitmix64(seed_mix_ ^ splitmix64(tag + 0x632be59bd9b4e019ULL)),
               0);
  }

  static Rng derive(std::uint64_t seed, std::uint64_t tag) {
    return Rng(seed).fork(tag);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  Rng(std::uint64_t mixed, int) : engine_(mixed), seed_mix_(mixed) {}

  std::mt19937_64 engine_;
  std::uint64_t seed_mix_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace daovfl

#endif  // DAOVFL_RNG_HPP_
