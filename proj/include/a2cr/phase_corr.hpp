#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace a2cr {

/// Row-major W x H grid of complex doubles; both dimensions powers of two.
struct ComplexGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::complex<double>> data;

  ComplexGrid() = default;
  ComplexGrid(std::size_t w, std::size_t h);
  std::complex<double>& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  const std::complex<double>& at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
};

struct ShiftEstimate {
  int dx = 0;
  int dy = 0;
  double peak_value = 0.0;
  double peak_sharpness = 0.0;  // peak / mean of the correlation surface
  bool low_confidence = false;
};

/// Outer product of 1-D Hamming windows, row-major [H][W].
std::vector<double> hamming_window_2d(std::size_t width, std::size_t height);

/// In-place radix-2 transform of a length-2^k sequence; inverse includes 1/n.
void fft1d(std::span<std::complex<double>> a, bool inverse);

ComplexGrid fft2(std::span<const double> real, std::size_t width, std::size_t height);
ComplexGrid fft2(const ComplexGrid& grid);
ComplexGrid ifft2(const ComplexGrid& grid);

/// Normalized f1 * conj(f2); bins with magnitude below 1e-12 become 0.
ComplexGrid cross_power_spectrum(const ComplexGrid& f1, const ComplexGrid& f2);

/// Integer translation of `next` relative to `prev`. Content moving left by d
/// (camera scrolling right) gives dx = +d; likewise content moving up gives dy = +d.
ShiftEstimate estimate_shift(std::span<const float> prev, std::span<const float> next, std::size_t width,
                             std::size_t height);

/// |ifft2(R)| for the windowed pair, row-major [H][W]; exported for debugging.
std::vector<double> correlation_surface(std::span<const float> prev, std::span<const float> next,
                                        std::size_t width, std::size_t height);

}  // namespace a2cr
