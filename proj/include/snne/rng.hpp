#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace snne {

// SplitMix64 generator. Used for every source of randomness in the library so
// that seeds reproduce bit-exactly across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [-bound, bound).
  double uniform_signed(double bound) { return (2.0 * uniform() - 1.0) * bound; }

  // Uniform integer in [0, n). Modulo bias is negligible for the index ranges
  // used here (n << 2^64).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  // Derives an independent stream, e.g. per epoch or per subsystem.
  Rng fork(std::uint64_t salt) {
    Rng r(state_ ^ (0xA0761D6478BD642FULL * (salt + 1)));
    r.next_u64();
    return r;
  }

 private:
  std::uint64_t state_;
};

}  // namespace snne
