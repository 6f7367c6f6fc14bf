#pragma once

#include <cmath>
#include <cstdint>

#include "tgda/common.hpp"

namespace tgda {

namespace detail {
// splitmix64 finalizer.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

// Counter-based generator: the i-th output is a pure function of (key, i).
// Streams are cheap values; deriving a stream never perturbs its parent,
// so results are independent of evaluation order and thread scheduling.
class RngStream {
 public:
  RngStream() : key_(0), counter_(0) {}
  explicit RngStream(uint64_t key) : key_(key), counter_(0) {}

  // Derived stream for a tagged substream (per-sample, per-epoch, ...).
  RngStream derive(uint64_t tag) const {
    return RngStream(detail::mix64(key_ ^ (tag * 0xd1b54a32d192ed03ull + 0x9e3779b97f4a7c15ull)));
  }
  RngStream derive(uint64_t a, uint64_t b) const { return derive(a).derive(b); }
  RngStream derive(uint64_t a, uint64_t b, uint64_t c) const {
    return derive(a).derive(b).derive(c);
  }

  uint64_t next_u64() { return detail::mix64(key_ + counter_++ * 0x9e3779b97f4a7c15ull); }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    check(n > 0, ErrorKind::kParameter, "next_below: n must be positive");
    // 128-bit multiply keeps the map unbiased enough for data augmentation
    // and initialization purposes.
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<uint64_t>(m >> 64);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  bool bernoulli(double p) { return next_double() < p; }

  // Box-Muller; consumes two counter steps, no rejection loop.
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  uint64_t state_key() const { return key_; }
  uint64_t state_counter() const { return counter_; }
  void restore(uint64_t key, uint64_t counter) {
    key_ = key;
    counter_ = counter;
  }

 private:
  uint64_t key_;
  uint64_t counter_;
};

}  // namespace tgda
