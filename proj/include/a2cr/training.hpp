#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "a2cr/collector.hpp"
#include "a2cr/config.hpp"
#include "a2cr/env.hpp"
#include "a2cr/networks.hpp"
#include "a2cr/optimizer.hpp"
#include "a2cr/phase_corr.hpp"
#include "a2cr/state_explore.hpp"

namespace a2cr {

struct Transition {
  FrameStack s_t;
  int a_t = 0;
  float r_t = 0.0f;
  FrameStack s_next;
  bool done = false;
  float v_t = 0.0f;
  float v_next = 0.0f;
  float log_prob = 0.0f;
  float entropy = 0.0f;
};

/// y = r + gamma v' (1 - done).
double td_target(double reward, double v_next, bool done, double gamma);

struct A2CLoss {
  double actor = 0.0;
  double critic = 0.0;
  double entropy = 0.0;
  double total = 0.0;
};

/// One joint optimizer step on the policy/value parameters. The advantage is
/// a constant in the actor term. Throws NumericalError before touching the
/// parameters when the loss is not finite.
A2CLoss a2c_update(PolicyValueNet& net, Optimizer& opt, std::span<const Transition> batch, const HyperParams& hp);

/// Inverse-CDF draw.
int sample_action(std::span<const float> probs, std::mt19937_64& rng);

/// splitmix64 of (a, b, c); derives independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

struct CollectStep;

/// Supervised Reasoner example.
struct ReasonerSample {
  std::vector<float> delta;  // s_{t+1} - s_t over the whole stack
  Category label = Category::Hovering;
};

/// Independent agent feeding the Exploring Pool. Acts with a private copy of
/// the policy taken at the start of each episode.
class ReasonerCollector {
 public:
  ReasonerCollector(WorldSpec world, const NetConfig& net, std::uint64_t seed);

  ScrollRunner& env() noexcept { return env_; }
  const PolicyValueNet& snapshot() const noexcept { return snapshot_; }
  std::uint64_t episodes() const noexcept { return episodes_; }

 private:
  friend CollectStep reasoner_collect_step(ReasonerCollector&, const PolicyValueNet&, ExploringPool&,
                                           const HyperParams&);
  void begin_episode(const PolicyValueNet& live);

  ScrollRunner env_;
  PolicyValueNet snapshot_;
  std::mt19937_64 rng_;
  std::uint64_t seed_;
  std::uint64_t episodes_ = 0;
  bool need_reset_ = true;
  float v_current_ = 0.0f;
  std::vector<float> probs_current_;
};

struct CollectStep {
  PoolEntry entry;
  ReasonerSample sample;
  ShiftEstimate shift;
  ExplorationBreakdown exploration;
  double gain = 0.0;
  int action = 0;
  float reward = 0.0f;
  bool done = false;
  bool success = false;
};

/// One environment step of a collector: act, derive G and S_e, label, push.
/// Never writes to `live`.
CollectStep reasoner_collect_step(ReasonerCollector& collector, const PolicyValueNet& live, ExploringPool& pool,
                                  const HyperParams& hp);

/// One optimizer step on the Reasoner; returns the mean batch loss.
double reasoner_update(ReasonerNet& net, Optimizer& opt, std::span<const ReasonerSample> batch,
                       const HyperParams& hp);

struct ReportRow {
  std::uint64_t frames = 0;
  std::uint64_t reasoner_frames = 0;
  std::uint64_t episodes = 0;
  double mean_return = 0.0;
  double mean_length = 0.0;
  double success_rate = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double entropy = 0.0;
  double reasoner_loss = 0.0;
  std::array<double, kNumCategories> proportions{};
};

struct EpisodeRow {
  std::uint64_t index = 0;
  std::uint64_t frames = 0;  // A2C frames when the episode ended
  std::size_t worker = 0;
  double ret = 0.0;
  std::size_t length = 0;
  bool success = false;
  bool died = false;
};

struct LabelRow {
  std::uint64_t label_events = 0;
  std::uint64_t reasoner_frames = 0;
  std::array<double, kNumCategories> cumulative{};  // S_n / n over every label so far
  std::array<double, kNumCategories> pool{};        // current pool contents
};

struct CheckpointInfo {
  std::uint64_t frames = 0;
  double success_rate = 0.0;  // over the last 100 finished episodes
  std::filesystem::path dir;
};

struct TrainReport {
  std::vector<ReportRow> rows;
  std::vector<EpisodeRow> episodes;
  std::vector<LabelRow> labels;
  std::vector<CheckpointInfo> checkpoints;
  std::uint64_t a2c_frames = 0;
  std::uint64_t reasoner_frames = 0;
  std::uint64_t reasoner_updates = 0;
};

void write_report_csv(std::ostream& out, const TrainReport& report);
void write_episodes_csv(std::ostream& out, const TrainReport& report);
void write_labels_csv(std::ostream& out, const TrainReport& report);
/// Parses the label-proportion columns back; used by convergence tooling.
std::vector<LabelRow> read_labels_csv(std::istream& in);

struct TrainOutputs {
  PolicyValueNet policy;
  ReasonerNet reasoner;
  TrainReport report;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::function<void(const ReportRow&)> on_report;
};

/// Synchronous A2C with Reasoner collectors. On a non-finite loss the last
/// good parameters are checkpointed and NumericalError propagates.
TrainOutputs train(const HyperParams& hp, const TrainOptions& options = {});

/// The world used by a run; a non-zero episode_step_cap replaces its time limit.
WorldSpec training_world(const HyperParams& hp);

/// Writes both networks and a manifest into dir.
void write_checkpoint_dir(const std::filesystem::path& dir, const PolicyValueNet& policy, const ReasonerNet& reasoner,
                          const HyperParams& hp, std::uint64_t frames, double success_rate);
/// Loads both networks from dir; FormatError on missing or corrupt files.
void load_checkpoint_dir(const std::filesystem::path& dir, PolicyValueNet& policy, ReasonerNet& reasoner);

}  // namespace a2cr
