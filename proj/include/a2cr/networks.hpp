#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "a2cr/graph.hpp"
#include "a2cr/tensor.hpp"

namespace a2cr {

/// Architecture of the shared conv trunk and the three heads.
struct NetConfig {
  std::size_t stack = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  std::array<std::size_t, 3> conv_channels{16, 32, 32};
  std::array<std::size_t, 3> conv_kernels{8, 4, 3};
  std::array<int, 3> conv_strides{4, 2, 1};
  std::size_t trunk_features = 256;
  std::size_t head_hidden = 128;
  std::size_t reasoner_hidden = 64;
  std::size_t actions = 12;
  std::size_t classes = 4;

  Shape state_shape() const { return {stack, height, width}; }
  std::size_t state_size() const { return stack * height * width; }
  /// Spatial size of the last conv activation.
  std::pair<std::size_t, std::size_t> last_conv_hw() const;
};

/// A probability vector over the discrete action set.
struct PolicyDistribution {
  std::vector<float> probs;
};

/// Shannon entropy in nats; p log p is taken as 0 at p = 0.
double policy_entropy(std::span<const float> probs);

/// Parameter indices of a three-conv + one-dense trunk inside a ParamSet.
struct TrunkLayout {
  std::array<std::size_t, 3> conv_kernel{};
  std::array<std::size_t, 3> conv_bias{};
  std::size_t fc_weight = 0;
  std::size_t fc_bias = 0;
};

struct DenseLayout {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

enum class Binding {
  Trainable,  ///< parameters receive gradients
  Frozen,     ///< read-only view
};

/// Shared-trunk actor-critic network: softmax policy head and linear value head.
class PolicyValueNet {
 public:
  struct Outputs {
    Var last_conv;  ///< trunk activation after the third conv + ReLU
    Var features;   ///< shared trunk feature vector
    Var logits;
    Var probs;
    Var log_probs;
    Var value;  ///< [B] for batched input, [1] otherwise
  };

  struct Evaluation {
    PolicyDistribution policy;
    float value = 0.0f;
  };

  explicit PolicyValueNet(NetConfig config = {}, std::uint64_t seed = 0);

  /// Records the forward pass on g. A Trainable binding requires a non-const net.
  Outputs forward(Graph& g, Var state, Binding binding);
  Outputs forward(Graph& g, Var state) const;

  Evaluation evaluate(std::span<const float> state) const;
  /// Inference for `batch` states laid out contiguously.
  std::vector<Evaluation> evaluate_batch(std::span<const float> states, std::size_t batch) const;

  const NetConfig& config() const noexcept { return config_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  const TrunkLayout& trunk() const noexcept { return trunk_; }
  const std::array<DenseLayout, 2>& policy_head() const noexcept { return policy_; }
  const std::array<DenseLayout, 2>& value_head() const noexcept { return value_; }

 private:
  template <typename Bind>
  Outputs build(Graph& g, Var state, Bind&& bind) const;

  NetConfig config_;
  ParamSet params_;
  TrunkLayout trunk_;
  std::array<DenseLayout, 2> policy_;
  std::array<DenseLayout, 2> value_;
};

/// Purpose classifier over state differences: same trunk shape, independent
/// parameters, three dense layers emitting raw logits (one per category).
class ReasonerNet {
 public:
  struct Outputs {
    Var last_conv;
    Var features;
    Var logits;
  };

  explicit ReasonerNet(NetConfig config = {}, std::uint64_t seed = 0);

  Outputs forward(Graph& g, Var delta, Binding binding);
  Outputs forward(Graph& g, Var delta) const;

  std::vector<float> logits(std::span<const float> delta) const;
  std::vector<float> logits_batch(std::span<const float> deltas, std::size_t batch) const;

  const NetConfig& config() const noexcept { return config_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  const TrunkLayout& trunk() const noexcept { return trunk_; }
  const std::array<DenseLayout, 3>& head() const noexcept { return head_; }

 private:
  template <typename Bind>
  Outputs build(Graph& g, Var delta, Bind&& bind) const;

  NetConfig config_;
  ParamSet params_;
  TrunkLayout trunk_;
  std::array<DenseLayout, 3> head_;
};

/// Glorot-uniform fill of every kernel / weight, zero biases.
void initialize_uniform(ParamSet& params, std::uint64_t seed);

}  // namespace a2cr
