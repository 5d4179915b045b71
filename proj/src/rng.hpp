// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

namespace dvnc {

// Counter-style generator: splitmix64 advance with full-avalanche output.
// State is a single word, so it serializes into checkpoints trivially and
// per-worker streams can be derived without coordination.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Box-Muller without spare caching; keeps the state a single word.
  double gaussian(double mean = 0.0, double stddev = 1.0) {
    double u1;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) *
                      std::cos(6.283185307179586 * u2);
  }

  // Unbiased integer in [0, bound) via rejection.
  uint64_t below(uint64_t bound) {
    uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

  // Decorrelated stream seed for (seed, salt) pairs.
  static uint64_t derive(uint64_t seed, uint64_t salt) {
    Rng r(seed ^ (0x632be59bd9b4e019ULL * (salt + 1)));
    return r.next_u64();
  }

 private:
  uint64_t state_;
};

}  // namespace dvnc
