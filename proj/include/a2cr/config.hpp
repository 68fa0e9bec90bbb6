#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "a2cr/graph.hpp"
#include "a2cr/networks.hpp"
#include "a2cr/optimizer.hpp"

namespace a2cr {

/// Every tunable of a training run. Field names double as config keys.
struct HyperParams {
  double gamma = 0.9;
  double rho1 = 0.5;
  double rho2 = 0.5;
  double w1 = 0.5;
  double lr_a2c = 2.5e-4;
  double lr_reasoner = 2.5e-4;
  std::uint64_t batch_size = 16;
  std::uint64_t pool_capacity = 1000;
  std::uint64_t a2c_workers = 4;
  std::uint64_t reasoner_workers = 2;
  std::uint64_t total_a2c_frames = 2'000'000;
  std::uint64_t total_reasoner_frames = 400'000;
  double reasoner_start_fraction = 0.8;
  double reward_clip = 15.0;  // learner-side clip of the environment reward; 0 disables
  std::uint64_t episode_step_cap = 0;  // 0: the world's own time limit

  std::uint64_t world_length = 80;
  std::uint64_t world_seed = 0;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  BceMode bce_mode = BceMode::Full;

  std::uint64_t frame_stack = 3;
  std::uint64_t conv1_channels = 16;
  std::uint64_t conv2_channels = 32;
  std::uint64_t conv3_channels = 32;
  std::uint64_t trunk_features = 256;
  std::uint64_t head_hidden = 128;
  std::uint64_t reasoner_hidden = 64;
  std::uint64_t actions = 12;

  std::uint64_t checkpoint_interval = 100'000;
  std::uint64_t report_interval = 20'000;
  std::uint64_t label_history_interval = 500;

  NetConfig net_config() const;
  /// Reward seen by the critic, the actor and the gain feature.
  double learner_reward(double env_reward) const;
  /// Throws ContractViolation naming the first out-of-range field.
  void validate() const;
};

/// Canonical ordering of keys.
std::vector<std::string> config_keys();

/// Sets one field from text; throws FormatError naming the key on bad input
/// and for unknown keys.
void set_config_value(HyperParams& hp, std::string_view key, std::string_view value);
std::string get_config_value(const HyperParams& hp, std::string_view key);

/// `key = value` lines, `#` comments, blank lines ignored.
HyperParams parse_config(std::string_view text, HyperParams base = {});
HyperParams load_config(const std::string& path, HyperParams base = {});
/// Round-trips through parse_config.
std::string serialize_config(const HyperParams& hp);
/// FNV-1a of the serialized form.
std::uint64_t config_hash(const HyperParams& hp);

}  // namespace a2cr
