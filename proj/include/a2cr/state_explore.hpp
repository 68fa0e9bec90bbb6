#pragma once

#include <cstddef>
#include <span>

#include "a2cr/phase_corr.hpp"

namespace a2cr {

struct ExplorationBreakdown {
  double common_diff = 0.0;
  double disappeared = 0.0;
  double appeared = 0.0;
  double total = 0.0;  // common_diff + disappeared + appeared
};

/// Aligns next pixel (x, y) with prev pixel (x + dx, y + dy). Pixels of prev
/// without a partner form the disappeared region, unmatched pixels of next the
/// appeared region; each region norm counts every pixel once.
ExplorationBreakdown state_exploration(std::span<const float> prev, std::span<const float> next, std::size_t width,
                                       std::size_t height, const ShiftEstimate& shift);

struct GainInput {
  double v_next = 0.0;
  double v_prev = 0.0;
  double reward = 0.0;
  double w1 = 0.5;
};

/// w1 (v_next - v_prev) + (1 - w1) reward.
double gain(const GainInput& in);

}  // namespace a2cr
