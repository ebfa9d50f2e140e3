#include "reflex/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace reflex;

TEST_CASE("philox4x32-10 known-answer vectors") {
  using C = Philox4x32::Counter;
  using K = Philox4x32::Key;
  CHECK(Philox4x32::apply(C{0, 0, 0, 0}, K{0, 0}) ==
        C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(Philox4x32::apply(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                          K{0xffffffff, 0xffffffff}) ==
        C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(Philox4x32::apply(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                          K{0xa4093822, 0x299f31d0}) ==
        C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are reproducible by address") {
  Stream a(42, StreamTag::Draw, 7, 1);
  Stream b(42, StreamTag::Draw, 7, 1);
  for (int i = 0; i < 100; ++i)
    CHECK(a() == b());
}

TEST_CASE("distinct addresses give distinct streams") {
  std::set<std::uint64_t> first;
  for (std::uint64_t seed : {1u, 2u})
    for (auto tag : {StreamTag::Draw, StreamTag::Calibration})
      for (std::uint64_t a : {0u, 1u, 1000000u})
        for (std::uint32_t b : {0u, 1u}) {
          Stream s(seed, tag, a, b);
          first.insert(s());
        }
  CHECK(first.size() == 24);
  // High word of `a` participates.
  Stream lo(3, StreamTag::Test, 5), hi(3, StreamTag::Test, 5 + (std::uint64_t{1} << 40));
  CHECK(lo() != hi());
}

TEST_CASE("uniforms lie in their intervals and have the right moments") {
  Stream s(9, StreamTag::Test);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double u = s.uniform();
    double v = s.uniform_open();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
    sum += u;
    sum2 += u * u;
  }
  double mean = sum / n, var = sum2 / n - mean * mean;
  CHECK(std::abs(mean - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(var == doctest::Approx(1.0 / 12.0).epsilon(0.01));
}

TEST_CASE("normal and beta draws have the right moments") {
  Stream s(11, StreamTag::Test);
  const int n = 100000;
  double m = 0, m2 = 0, b = 0;
  for (int i = 0; i < n; ++i) {
    double z = s.normal();
    m += z;
    m2 += z * z;
    b += s.beta(2.0, 3.0);
  }
  CHECK(std::abs(m / n) < 4.0 / std::sqrt(double(n)));
  CHECK(m2 / n == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::abs(b / n - 0.4) < 4.0 * 0.2 / std::sqrt(double(n)));
}

TEST_CASE("mix64 is a bijection on a sample") {
  std::set<std::uint64_t> out;
  for (std::uint64_t i = 0; i < 10000; ++i)
    out.insert(mix64(i));
  CHECK(out.size() == 10000);
}
