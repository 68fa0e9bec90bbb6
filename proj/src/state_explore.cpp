#include "a2cr/state_explore.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

#include "a2cr/error.hpp"

namespace a2cr {

ExplorationBreakdown state_exploration(std::span<const float> prev, std::span<const float> next, std::size_t width,
                                       std::size_t height, const ShiftEstimate& shift) {
  if (prev.size() != width * height || next.size() != width * height) {
    throw ShapeError("state exploration frames do not match the stated dimensions");
  }
  const auto w = static_cast<long>(width);
  const auto h = static_cast<long>(height);
  if (std::labs(shift.dx) >= w || std::labs(shift.dy) >= h) {
    throw ContractViolation("shift (" + std::to_string(shift.dx) + ", " + std::to_string(shift.dy) +
                            ") out of range for the frame");
  }
  double common = 0.0;
  double appeared = 0.0;
  double disappeared = 0.0;
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y * w + x);
      const long sx = x + shift.dx;
      const long sy = y + shift.dy;
      const double n = next[i];
      if (sx >= 0 && sx < w && sy >= 0 && sy < h) {
        const double d = n - static_cast<double>(prev[static_cast<std::size_t>(sy * w + sx)]);
        common += d * d;
      } else {
        appeared += n * n;
      }
      const long tx = x - shift.dx;
      const long ty = y - shift.dy;
      if (tx < 0 || tx >= w || ty < 0 || ty >= h) {
        const double p = prev[i];
        disappeared += p * p;
      }
    }
  }
  ExplorationBreakdown out;
  out.common_diff = std::sqrt(common);
  out.disappeared = std::sqrt(disappeared);
  out.appeared = std::sqrt(appeared);
  out.total = out.common_diff + out.disappeared + out.appeared;
  return out;
}

double gain(const GainInput& in) {
  if (!(in.w1 >= 0.0 && in.w1 <= 1.0)) throw ContractViolation("gain weight w1 must lie in [0, 1]");
  return in.w1 * (in.v_next - in.v_prev) + (1.0 - in.w1) * in.reward;
}

}  // namespace a2cr
