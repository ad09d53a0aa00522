#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace qdet {

/// xoshiro256** stream whose state is derived from a (seed, stream index)
/// pair through SplitMix64, so that scenario i of a batch gets the same
/// draws no matter which thread produces it or in which order.
///
/// Satisfies UniformRandomBitGenerator. The floating-point helpers are
/// implemented here rather than through <random> distributions, whose
/// output is implementation-defined; batches are bit-reproducible across
/// standard libraries.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  /// Uniform on the open interval (0, 1).
  double uniform();

  /// Exponential variate with the given rate (> 0).
  double exponential(double rate);

 private:
  std::array<std::uint64_t, 4> s_{};
};

/// SplitMix64 finalizer; used for seed derivation and hashing.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace qdet
