#pragma once

// Philox4x32-10 counter-based generator.
//
// A generator is identified by (seed, stream). The 64-bit seed is the key;
// the stream id occupies the upper half of the 128-bit counter and the lower
// half counts blocks, so streams never overlap. Simulation code uses one
// stream per realization or per window, which makes results independent of
// how the work is split between threads.

#include <array>
#include <cstdint>
#include <limits>

namespace qimg {

class Philox4x32 {
 public:
  using result_type = std::uint32_t;
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  Philox4x32(std::uint64_t seed = 0, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  /// Uniform double in [0, 1) from 53 random bits.
  double uniform();
  void discard(unsigned long long z);

  /// The raw 10-round bijection.
  static Counter block(Counter ctr, Key key);

 private:
  Key key_{};
  Counter ctr_{};
  Counter buf_{};
  int used_ = 4;
};

}  // namespace qimg
