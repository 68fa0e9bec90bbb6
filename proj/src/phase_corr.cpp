#include "a2cr/phase_corr.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "a2cr/error.hpp"

namespace a2cr {

namespace {

bool power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

void require_pow2(std::size_t w, std::size_t h) {
  if (!power_of_two(w) || !power_of_two(h)) {
    throw ShapeError("FFT grid " + std::to_string(w) + "x" + std::to_string(h) + " is not a power of two");
  }
}

void transform(ComplexGrid& g, bool inverse) {
  require_pow2(g.width, g.height);
  for (std::size_t y = 0; y < g.height; ++y) {
    fft1d(std::span(g.data).subspan(y * g.width, g.width), inverse);
  }
  std::vector<std::complex<double>> column(g.height);
  for (std::size_t x = 0; x < g.width; ++x) {
    for (std::size_t y = 0; y < g.height; ++y) column[y] = g.at(x, y);
    fft1d(column, inverse);
    for (std::size_t y = 0; y < g.height; ++y) g.at(x, y) = column[y];
  }
}

int signed_index(std::size_t i, std::size_t n) {
  const auto v = static_cast<int>(i);
  return i > n / 2 ? v - static_cast<int>(n) : v;
}

}  // namespace

ComplexGrid::ComplexGrid(std::size_t w, std::size_t h) : width(w), height(h), data(w * h) {}

std::vector<double> hamming_window_2d(std::size_t width, std::size_t height) {
  if (width < 2 || height < 2) throw ShapeError("Hamming window needs at least 2 samples per axis");
  auto window = [](std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
    }
    return w;
  };
  const auto wx = window(width);
  const auto wy = window(height);
  std::vector<double> out(width * height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) out[y * width + x] = wy[y] * wx[x];
  }
  return out;
}

void fft1d(std::span<std::complex<double>> a, bool inverse) {
  const std::size_t n = a.size();
  if (!power_of_two(n)) throw ShapeError("FFT length " + std::to_string(n) + " is not a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        // Direct twiddles keep the error independent of the stage length.
        const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
  if (inverse) {
    const double s = 1.0 / static_cast<double>(n);
    for (auto& v : a) v *= s;
  }
}

ComplexGrid fft2(std::span<const double> real, std::size_t width, std::size_t height) {
  require_pow2(width, height);
  if (real.size() != width * height) throw ShapeError("fft2 input size does not match dimensions");
  ComplexGrid g(width, height);
  std::copy(real.begin(), real.end(), g.data.begin());
  transform(g, false);
  return g;
}

ComplexGrid fft2(const ComplexGrid& grid) {
  ComplexGrid g = grid;
  transform(g, false);
  return g;
}

ComplexGrid ifft2(const ComplexGrid& grid) {
  ComplexGrid g = grid;
  transform(g, true);
  return g;
}

ComplexGrid cross_power_spectrum(const ComplexGrid& f1, const ComplexGrid& f2) {
  if (f1.width != f2.width || f1.height != f2.height || f1.data.size() != f2.data.size()) {
    throw ShapeError("cross power spectrum of grids with different dimensions");
  }
  ComplexGrid r(f1.width, f1.height);
  for (std::size_t i = 0; i < f1.data.size(); ++i) {
    const auto p = f1.data[i] * std::conj(f2.data[i]);
    const double m = std::abs(p);
    r.data[i] = m < 1e-12 ? std::complex<double>{} : p / m;
  }
  return r;
}

namespace {

ComplexGrid windowed_spectrum(std::span<const float> frame, const std::vector<double>& window, std::size_t w,
                              std::size_t h) {
  ComplexGrid g(w, h);
  for (std::size_t i = 0; i < frame.size(); ++i) g.data[i] = static_cast<double>(frame[i]) * window[i];
  transform(g, false);
  return g;
}

}  // namespace

std::vector<double> correlation_surface(std::span<const float> prev, std::span<const float> next,
                                        std::size_t width, std::size_t height) {
  require_pow2(width, height);
  if (prev.size() != width * height || next.size() != width * height) {
    throw ShapeError("frames do not match the stated dimensions");
  }
  const auto window = hamming_window_2d(width, height);
  const auto r = ifft2(cross_power_spectrum(windowed_spectrum(prev, window, width, height),
                                            windowed_spectrum(next, window, width, height)));
  std::vector<double> surface(r.data.size());
  for (std::size_t i = 0; i < surface.size(); ++i) surface[i] = std::abs(r.data[i]);
  return surface;
}

ShiftEstimate estimate_shift(std::span<const float> prev, std::span<const float> next, std::size_t width,
                             std::size_t height) {
  const auto surface = correlation_surface(prev, next, width, height);
  ShiftEstimate est;
  double total = 0.0;
  std::size_t best = 0;
  for (std::size_t i = 0; i < surface.size(); ++i) {
    total += surface[i];
    if (surface[i] > surface[best]) best = i;
  }
  const double mean = total / static_cast<double>(surface.size());
  if (mean <= 0.0) {
    est.low_confidence = true;
    return est;
  }
  est.peak_value = surface[best];
  est.peak_sharpness = est.peak_value / mean;
  // next(x, y) = prev(x + dx, y + dy) puts the peak of ifft(F_prev conj F_next) at (dx, dy).
  est.dx = signed_index(best % width, width);
  est.dy = signed_index(best / width, height);
  return est;
}

}  // namespace a2cr
