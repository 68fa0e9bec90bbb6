#include "a2cr/optimizer.hpp"

#include <cmath>
#include <string>

#include "a2cr/error.hpp"

namespace a2cr {

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw ContractViolation("unknown optimizer '" + std::string(name) + "' (expected adam or sgd)");
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

Optimizer::Optimizer(const ParamSet& params, OptimizerConfig config) : config_(config) {
  first_.reserve(params.size());
  second_.reserve(params.size());
  for (const auto& e : params) {
    first_.emplace_back(config_.kind == OptimizerKind::Adam ? e.tensor.size() : 0, 0.0f);
    second_.emplace_back(config_.kind == OptimizerKind::Adam ? e.tensor.size() : 0, 0.0f);
  }
}

void Optimizer::step(ParamSet& params) {
  if (params.size() != first_.size()) throw ShapeError("optimizer state does not match parameter set");
  for (const auto& e : params) {
    if (!e.tensor.has_grad()) throw ContractViolation("parameter " + e.name + " has no gradient");
  }
  ++step_;
  const float lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::Sgd) {
    for (auto& e : params) {
      auto w = e.tensor.data();
      const auto g = e.tensor.grad();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    }
    return;
  }
  const double t = static_cast<double>(step_);
  const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(config_.beta1), t));
  const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(config_.beta2), t));
  const float b1 = config_.beta1;
  const float b2 = config_.beta2;
  std::size_t k = 0;
  for (auto& e : params) {
    auto w = e.tensor.data();
    const auto g = e.tensor.grad();
    auto& m = first_[k];
    auto& v = second_[k];
    if (m.size() != w.size()) throw ShapeError("optimizer moment size mismatch for " + e.name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      const float m_hat = m[i] / c1;
      const float v_hat = v[i] / c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
    ++k;
  }
}

}  // namespace a2cr
