#include "reflex/rng.hpp"

namespace reflex {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) noexcept {
  std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

} // namespace

Philox4x32::Counter Philox4x32::apply(Counter ctr, Key key) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

Stream::Stream(std::uint64_t seed, StreamTag tag, std::uint64_t a,
               std::uint32_t b) noexcept
    : a_lo_(static_cast<std::uint32_t>(a)),
      a_hi_(static_cast<std::uint32_t>(a >> 32)), b_(b) {
  std::uint64_t k = mix64(seed ^ mix64(static_cast<std::uint64_t>(tag)));
  key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

void Stream::refill() noexcept {
  out_ = Philox4x32::apply({block_, b_, a_lo_, a_hi_}, key_);
  ++block_;
  used_ = 0;
}

Stream::result_type Stream::operator()() noexcept {
  if (used_ >= 4)
    refill();
  std::uint64_t v = (static_cast<std::uint64_t>(out_[used_]) << 32) | out_[used_ + 1];
  used_ += 2;
  return v;
}

} // namespace reflex
