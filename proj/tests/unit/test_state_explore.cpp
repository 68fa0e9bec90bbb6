#include <doctest.h>

#include <random>

#include "a2cr/error.hpp"
#include "a2cr/state_explore.hpp"
#include "oracles.hpp"

using namespace a2cr;

namespace {

ShiftEstimate shift_of(int dx, int dy) {
  ShiftEstimate s;
  s.dx = dx;
  s.dy = dy;
  return s;
}

}  // namespace

TEST_CASE("three-region breakdown matches explicit region bookkeeping on 50 random pairs") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> pick(-20, 20);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = trial % 2 == 0 ? 64 : 32;
    const int h = trial % 3 == 0 ? 64 : 32;
    const auto prev = oracle::random_floats(static_cast<std::size_t>(w * h), rng, 0.0f, 1.0f);
    const auto next = oracle::random_floats(static_cast<std::size_t>(w * h), rng, 0.0f, 1.0f);
    const int dx = pick(rng);
    const int dy = pick(rng);
    const auto got = state_exploration(prev, next, static_cast<std::size_t>(w), static_cast<std::size_t>(h),
                                       shift_of(dx, dy));
    const auto want = oracle::exploration_regions(prev, next, w, h, dx, dy);
    CHECK(std::abs(got.common_diff - want.common) < 1e-6);
    CHECK(std::abs(got.disappeared - want.disappeared) < 1e-6);
    CHECK(std::abs(got.appeared - want.appeared) < 1e-6);
    CHECK(std::abs(got.total - (want.common + want.disappeared + want.appeared)) < 1e-6);
  }
}

TEST_CASE("identical frames explore nothing") {
  std::mt19937_64 rng(2);
  const auto f = oracle::random_floats(64 * 64, rng, 0.0f, 1.0f);
  const auto e = state_exploration(f, f, 64, 64, shift_of(0, 0));
  CHECK(e.total == 0.0);
  CHECK(e.common_diff == 0.0);
  CHECK(e.appeared == 0.0);
  CHECK(e.disappeared == 0.0);
}

TEST_CASE("a pure translation leaves only the border strips") {
  // prev is a horizontal ramp; next(x) = prev(x + 2) on the overlap.
  std::vector<float> prev(8 * 4);
  std::vector<float> next(8 * 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 8; ++x) {
      prev[static_cast<std::size_t>(y * 8 + x)] = static_cast<float>(x);
      next[static_cast<std::size_t>(y * 8 + x)] = static_cast<float>(x + 2);
    }
  }
  const auto e = state_exploration(prev, next, 8, 4, shift_of(2, 0));
  CHECK(e.common_diff == 0.0);
  // Columns 0 and 1 of prev leave: 4 * (0 + 1).
  CHECK(e.disappeared == doctest::Approx(2.0));
  // Columns 6 and 7 of next enter: 4 * (64 + 81).
  CHECK(e.appeared == doctest::Approx(std::sqrt(580.0)));
}

TEST_CASE("state exploration argument checks") {
  const std::vector<float> f(16, 0.0f);
  CHECK_THROWS_AS(state_exploration(f, f, 4, 4, shift_of(4, 0)), ContractViolation);
  CHECK_THROWS_AS(state_exploration(f, f, 4, 4, shift_of(0, -4)), ContractViolation);
  CHECK_THROWS_AS(state_exploration(f, f, 8, 4, shift_of(0, 0)), ShapeError);
}

TEST_CASE("gain mixes value change and reward") {
  CHECK(gain({2.0, 1.0, 4.0, 0.5}) == doctest::Approx(2.5));
  CHECK(gain({2.0, 1.0, 4.0, 1.0}) == 1.0);
  CHECK(gain({2.0, 1.0, 4.0, 0.0}) == 4.0);
  CHECK(gain({0.0, 3.0, -1.0, 0.25}) == doctest::Approx(-1.5));
  CHECK_THROWS_AS(gain({0, 0, 0, 1.5}), ContractViolation);
  CHECK_THROWS_AS(gain({0, 0, 0, -0.1}), ContractViolation);
}
