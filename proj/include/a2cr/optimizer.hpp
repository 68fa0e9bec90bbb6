#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "a2cr/tensor.hpp"

namespace a2cr {

enum class OptimizerKind { Adam, Sgd };

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  float learning_rate = 2.5e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// Adaptive-moment (or plain gradient) descent over one ParamSet.
/// Gradients are read, never cleared; the caller zeroes them between steps.
class Optimizer {
 public:
  Optimizer(const ParamSet& params, OptimizerConfig config);

  void step(ParamSet& params);

  const OptimizerConfig& config() const noexcept { return config_; }
  void set_learning_rate(float lr) noexcept { config_.learning_rate = lr; }
  std::uint64_t steps() const noexcept { return step_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<float>> first_;
  std::vector<std::vector<float>> second_;
  std::uint64_t step_ = 0;
};

}  // namespace a2cr
