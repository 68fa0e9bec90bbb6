#include "a2cr/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <variant>

#include "a2cr/env.hpp"
#include "a2cr/error.hpp"

namespace a2cr {

namespace {

using FieldPtr = std::variant<double HyperParams::*, std::uint64_t HyperParams::*,
                              OptimizerKind HyperParams::*, BceMode HyperParams::*>;

struct Field {
  const char* name;
  FieldPtr ptr;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      {"gamma", &HyperParams::gamma},
      {"rho1", &HyperParams::rho1},
      {"rho2", &HyperParams::rho2},
      {"w1", &HyperParams::w1},
      {"lr_a2c", &HyperParams::lr_a2c},
      {"lr_reasoner", &HyperParams::lr_reasoner},
      {"batch_size", &HyperParams::batch_size},
      {"pool_capacity", &HyperParams::pool_capacity},
      {"a2c_workers", &HyperParams::a2c_workers},
      {"reasoner_workers", &HyperParams::reasoner_workers},
      {"total_a2c_frames", &HyperParams::total_a2c_frames},
      {"total_reasoner_frames", &HyperParams::total_reasoner_frames},
      {"reasoner_start_fraction", &HyperParams::reasoner_start_fraction},
      {"reward_clip", &HyperParams::reward_clip},
      {"episode_step_cap", &HyperParams::episode_step_cap},
      {"world_length", &HyperParams::world_length},
      {"world_seed", &HyperParams::world_seed},
      {"seed", &HyperParams::seed},
      {"optimizer", &HyperParams::optimizer},
      {"bce_mode", &HyperParams::bce_mode},
      {"frame_stack", &HyperParams::frame_stack},
      {"conv1_channels", &HyperParams::conv1_channels},
      {"conv2_channels", &HyperParams::conv2_channels},
      {"conv3_channels", &HyperParams::conv3_channels},
      {"trunk_features", &HyperParams::trunk_features},
      {"head_hidden", &HyperParams::head_hidden},
      {"reasoner_hidden", &HyperParams::reasoner_hidden},
      {"actions", &HyperParams::actions},
      {"checkpoint_interval", &HyperParams::checkpoint_interval},
      {"report_interval", &HyperParams::report_interval},
      {"label_history_interval", &HyperParams::label_history_interval},
  };
  return table;
}

const Field& find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (key == f.name) return f;
  }
  throw FormatError("unknown config key '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_unsigned(std::string_view key, std::string_view v) {
  // Accept scientific notation for frame budgets such as 2e6.
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec == std::errc() && ptr == v.data() + v.size()) return out;
  double d = 0.0;
  const auto [p2, ec2] = std::from_chars(v.data(), v.data() + v.size(), d);
  if (ec2 == std::errc() && p2 == v.data() + v.size() && d >= 0.0 && d == static_cast<double>(static_cast<T>(d))) {
    return static_cast<T>(d);
  }
  throw FormatError("config key '" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) +
                    "'");
}

double parse_double(std::string_view key, std::string_view v) {
  double d = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw FormatError("config key '" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
  return d;
}

}  // namespace

NetConfig HyperParams::net_config() const {
  NetConfig c;
  c.stack = frame_stack;
  c.conv_channels = {conv1_channels, conv2_channels, conv3_channels};
  c.trunk_features = trunk_features;
  c.head_hidden = head_hidden;
  c.reasoner_hidden = reasoner_hidden;
  c.actions = actions;
  return c;
}

double HyperParams::learner_reward(double r) const {
  return reward_clip > 0.0 ? std::clamp(r, -reward_clip, reward_clip) : r;
}

void HyperParams::validate() const {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ContractViolation(std::string("config key '") + key + "' " + what);
  };
  require(gamma > 0.0 && gamma <= 1.0, "gamma", "must lie in (0, 1]");
  require(rho1 >= 0.0, "rho1", "must be non-negative");
  require(rho2 >= 0.0, "rho2", "must be non-negative");
  require(w1 >= 0.0 && w1 <= 1.0, "w1", "must lie in [0, 1]");
  require(lr_a2c > 0.0, "lr_a2c", "must be positive");
  require(lr_reasoner > 0.0, "lr_reasoner", "must be positive");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  require(pool_capacity >= 1, "pool_capacity", "must be at least 1");
  require(a2c_workers >= 1, "a2c_workers", "must be at least 1");
  require(reasoner_workers >= 1, "reasoner_workers", "must be at least 1");
  require(reasoner_start_fraction >= 0.0 && reasoner_start_fraction <= 1.0, "reasoner_start_fraction",
          "must lie in [0, 1]");
  require(reward_clip >= 0.0, "reward_clip", "must be non-negative");
  require(world_length >= 20, "world_length", "must be at least 20");
  require(frame_stack >= 1, "frame_stack", "must be at least 1");
  require(actions == kNumActions, "actions", "must equal the environment's 12 actions");
  require(conv1_channels > 0 && conv2_channels > 0 && conv3_channels > 0, "conv1_channels",
          "and the other channel counts must be positive");
  require(trunk_features > 0 && head_hidden > 0 && reasoner_hidden > 0, "trunk_features",
          "and the head widths must be positive");
  require(report_interval > 0, "report_interval", "must be positive");
  require(label_history_interval > 0, "label_history_interval", "must be positive");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.name);
  return keys;
}

void set_config_value(HyperParams& hp, std::string_view key, std::string_view raw) {
  const Field& f = find_field(key);
  const std::string_view v = trim(raw);
  std::visit(
      [&](auto ptr) {
        using T = std::remove_reference_t<decltype(hp.*ptr)>;
        if constexpr (std::is_same_v<T, double>) {
          hp.*ptr = parse_double(key, v);
        } else if constexpr (std::is_same_v<T, OptimizerKind>) {
          try {
            hp.*ptr = parse_optimizer_kind(v);
          } catch (const ContractViolation& e) {
            throw FormatError("config key '" + std::string(key) + "': " + e.what());
          }
        } else if constexpr (std::is_same_v<T, BceMode>) {
          if (v == "full") hp.*ptr = BceMode::Full;
          else if (v == "positive-only" || v == "paper-literal") hp.*ptr = BceMode::PositiveOnly;
          else throw FormatError("config key '" + std::string(key) + "' expects full or positive-only");
        } else {
          hp.*ptr = parse_unsigned<T>(key, v);
        }
      },
      f.ptr);
}

std::string get_config_value(const HyperParams& hp, std::string_view key) {
  const Field& f = find_field(key);
  std::ostringstream os;
  std::visit(
      [&](auto ptr) {
        using T = std::remove_cvref_t<decltype(hp.*ptr)>;
        if constexpr (std::is_same_v<T, double>) {
          os << std::setprecision(17) << hp.*ptr;
        } else if constexpr (std::is_same_v<T, OptimizerKind>) {
          os << to_string(hp.*ptr);
        } else if constexpr (std::is_same_v<T, BceMode>) {
          os << (hp.*ptr == BceMode::Full ? "full" : "positive-only");
        } else {
          os << hp.*ptr;
        }
      },
      f.ptr);
  return os.str();
}

HyperParams parse_config(std::string_view text, HyperParams base) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("config line " + std::to_string(line_no) + " has no '=': " + std::string(line));
    }
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

HyperParams load_config(const std::string& path, HyperParams base) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str(), base);
}

std::string serialize_config(const HyperParams& hp) {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.name << " = " << get_config_value(hp, f.name) << '\n';
  return os.str();
}

std::uint64_t config_hash(const HyperParams& hp) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : serialize_config(hp)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace a2cr
