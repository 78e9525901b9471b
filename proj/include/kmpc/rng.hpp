#pragma once

#include <cmath>
#include <cstdint>

namespace kmpc {

// xoshiro-style splitmix generator with platform-independent uniform/normal
// draws, so seeded runs are bit-reproducible everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : base_seed_(seed), state_(splitmix(seed + 0x9e3779b97f4a7c15ull)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return splitmix(state_);
  }

  // uniform in [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // inclusive integer range
  long uniform_int(long lo, long hi) {
    return lo + static_cast<long>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1, u2;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  // Independent deterministic substream; depends only on the original seed
  // and the salt, not on how much this stream has been consumed.
  Rng fork(std::uint64_t salt) const { return Rng(splitmix(base_seed_ ^ (0xbf58476d1ce4e5b9ull * (salt + 1)))); }

  std::uint64_t base_seed() const { return base_seed_; }

 private:
  static std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t base_seed_;
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace kmpc
