#include <doctest.h>

#include <chrono>
#include <cmath>
#include <complex>
#include <random>

#include "a2cr/error.hpp"
#include "a2cr/phase_corr.hpp"
#include "oracles.hpp"

using namespace a2cr;
using cd = std::complex<double>;

namespace {

// next(x, y) = prev((x + dx) mod w, (y + dy) mod h).
std::vector<float> circular_shift(const std::vector<float>& prev, int w, int h, int dx, int dy) {
  std::vector<float> next(prev.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sx = ((x + dx) % w + w) % w;
      const int sy = ((y + dy) % h + h) % h;
      next[static_cast<std::size_t>(y * w + x)] = prev[static_cast<std::size_t>(sy * w + sx)];
    }
  }
  return next;
}

}  // namespace

TEST_CASE("Hamming window endpoints, centre and symmetry") {
  const auto w = hamming_window_2d(8, 4);
  REQUIRE(w.size() == 32);
  // Separable: w(x, y) = h8(x) h4(y); h(0) = 0.08 for every length.
  CHECK(w[0] == doctest::Approx(0.08 * 0.08).epsilon(1e-12));
  const double h4_1 = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi / 3.0);
  CHECK(w[1 * 8 + 0] == doctest::Approx(0.08 * h4_1).epsilon(1e-12));
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 8; ++x) CHECK(w[y * 8 + x] == doctest::Approx(w[(3 - y) * 8 + (7 - x)]));
  }
  CHECK_THROWS_AS(hamming_window_2d(1, 4), ShapeError);
}

TEST_CASE("fft1d of an impulse and of a constant") {
  std::vector<cd> a(8, 0.0);
  a[0] = 1.0;
  fft1d(a, false);
  for (const auto& v : a) CHECK(std::abs(v - cd(1.0, 0.0)) < 1e-12);
  std::vector<cd> b(8, 1.0);
  fft1d(b, false);
  CHECK(std::abs(b[0] - cd(8.0, 0.0)) < 1e-12);
  for (std::size_t i = 1; i < 8; ++i) CHECK(std::abs(b[i]) < 1e-12);
  std::vector<cd> bad(6);
  CHECK_THROWS_AS(fft1d(bad, false), ShapeError);
}

TEST_CASE("fft2 matches direct DFT summation on random 16x16 grids") {
  std::mt19937_64 rng(2024);
  double worst_forward = 0.0;
  double worst_roundtrip = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto re = oracle::random_floats(256, rng);
    const auto im = oracle::random_floats(256, rng);
    ComplexGrid g(16, 16);
    std::vector<cd> x(256);
    for (std::size_t i = 0; i < 256; ++i) x[i] = g.data[i] = cd(re[i], im[i]);
    const ComplexGrid f = fft2(g);
    const auto expect = oracle::dft2(x, 16, 16, false);
    for (std::size_t i = 0; i < 256; ++i) worst_forward = std::max(worst_forward, std::abs(f.data[i] - expect[i]));

    const ComplexGrid back = ifft2(f);
    for (std::size_t i = 0; i < 256; ++i) {
      worst_roundtrip = std::max(worst_roundtrip, std::abs(back.data[i] - x[i]) / std::max(std::abs(x[i]), 1e-300));
    }
    const auto inv = oracle::dft2(expect, 16, 16, true);
    for (std::size_t i = 0; i < 256; ++i) CHECK(std::abs(inv[i] - x[i]) < 1e-9);
  }
  CHECK(worst_forward < 1e-6);
  CHECK(worst_roundtrip < 1e-9);
}

TEST_CASE("real-input fft2 agrees with the complex overload") {
  std::mt19937_64 rng(5);
  const auto v = oracle::random_floats(32 * 8, rng);
  const std::vector<double> real(v.begin(), v.end());
  ComplexGrid g(32, 8);
  for (std::size_t i = 0; i < real.size(); ++i) g.data[i] = real[i];
  const auto a = fft2(real, 32, 8);
  const auto b = fft2(g);
  for (std::size_t i = 0; i < real.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-12);
}

TEST_CASE("non-power-of-two grids are rejected") {
  CHECK_THROWS_AS(fft2(ComplexGrid(12, 16)), ShapeError);
  CHECK_THROWS_AS(fft2(std::vector<double>(10 * 8), 10, 8), ShapeError);
  const std::vector<float> f(48 * 64, 0.5f);
  CHECK_THROWS_AS(estimate_shift(f, f, 48, 64), ShapeError);
  const std::vector<float> g(64 * 64, 0.5f);
  CHECK_THROWS_AS(estimate_shift(g, f, 64, 64), ShapeError);
}

TEST_CASE("cross power spectrum has unit magnitude and zeroes empty bins") {
  std::mt19937_64 rng(8);
  const auto a = oracle::random_floats(64, rng);
  const auto b = oracle::random_floats(64, rng);
  const auto fa = fft2(std::vector<double>(a.begin(), a.end()), 8, 8);
  const auto fb = fft2(std::vector<double>(b.begin(), b.end()), 8, 8);
  const auto r = cross_power_spectrum(fa, fb);
  for (const auto& v : r.data) CHECK(std::abs(v) == doctest::Approx(1.0).epsilon(1e-12));
  const auto zero = cross_power_spectrum(fa, ComplexGrid(8, 8));
  for (const auto& v : zero.data) CHECK(v == cd(0.0, 0.0));
  CHECK_THROWS_AS(cross_power_spectrum(fa, ComplexGrid(4, 8)), ShapeError);
}

TEST_CASE("phase correlation recovers 100 random circular shifts exactly") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> shift(-16, 16);
  const auto start = std::chrono::steady_clock::now();
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto prev = oracle::random_floats(64 * 64, rng, 0.0f, 1.0f);
    const int dx = shift(rng);
    const int dy = shift(rng);
    const auto next = circular_shift(prev, 64, 64, dx, dy);
    const ShiftEstimate e = estimate_shift(prev, next, 64, 64);
    exact += e.dx == dx && e.dy == dy;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(exact == 100);
  CHECK(seconds < 5.0);
}

TEST_CASE("content moving left reads as a positive horizontal shift") {
  std::mt19937_64 rng(3);
  const auto prev = oracle::random_floats(32 * 32, rng, 0.0f, 1.0f);
  const auto next = circular_shift(prev, 32, 32, 4, 0);
  // The pixel at x = 10 in prev now sits at x = 6.
  CHECK(next[6] == prev[10]);
  const ShiftEstimate e = estimate_shift(prev, next, 32, 32);
  CHECK(e.dx == 4);
  CHECK(e.dy == 0);
  CHECK(e.peak_sharpness > 1.0);
}

TEST_CASE("identical frames peak at zero shift") {
  std::mt19937_64 rng(4);
  const auto f = oracle::random_floats(64 * 64, rng, 0.0f, 1.0f);
  const ShiftEstimate e = estimate_shift(f, f, 64, 64);
  CHECK(e.dx == 0);
  CHECK(e.dy == 0);
  CHECK_FALSE(e.low_confidence);
  CHECK(e.peak_value == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("flat frames are flagged low confidence") {
  const std::vector<float> zero(16 * 16, 0.0f);
  const ShiftEstimate e = estimate_shift(zero, zero, 16, 16);
  CHECK(e.low_confidence);
  CHECK(e.dx == 0);
  CHECK(e.dy == 0);
}
