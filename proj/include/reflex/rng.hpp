#pragma once

// Counter-based random streams.
//
// Every stochastic task (a calibration region, one iid draw, one particle
// at one step, ...) owns a stream addressed by (seed, tag, a, b). Two tasks
// with different addresses never share random numbers, and a task's output
// does not depend on which worker ran it or in which order.

#include <array>
#include <cstdint>
#include <limits>
#include <random>

namespace reflex {

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter apply(Counter ctr, Key key) noexcept;
};

/// SplitMix64 finaliser; used to turn (seed, tag) into a Philox key.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum class StreamTag : std::uint32_t {
  Calibration = 1,
  Draw = 2,
  Pilot = 3,
  Particle = 4,
  Resample = 5,
  Reward = 6,
  Policy = 7,
  Series = 8,
  Simulation = 9,
  Test = 99,
};

class Stream {
public:
  using result_type = std::uint64_t;

  Stream(std::uint64_t seed, StreamTag tag, std::uint64_t a = 0,
         std::uint32_t b = 0) noexcept;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept;

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1).
  double uniform_open() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_(*this); }

  double gamma(double shape) {
    return std::gamma_distribution<double>(shape, 1.0)(*this);
  }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  std::uint32_t block() const noexcept { return block_; }

private:
  void refill() noexcept;

  Philox4x32::Key key_;
  std::uint32_t a_lo_, a_hi_, b_;
  std::uint32_t block_ = 0;
  Philox4x32::Counter out_{};
  int used_ = 4;
  std::normal_distribution<double> normal_;
};

} // namespace reflex
