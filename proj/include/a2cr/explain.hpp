#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "a2cr/collector.hpp"
#include "a2cr/env.hpp"
#include "a2cr/networks.hpp"

namespace a2cr {

struct Classification {
  Category category = Category::Hovering;
  std::array<float, kNumCategories> scores{};  // sigmoid of each logit
};

/// Argmax over the four per-class sigmoid scores.
Classification classify(const ReasonerNet& net, std::span<const float> delta);
std::vector<Classification> classify_batch(const ReasonerNet& net, std::span<const float> deltas, std::size_t batch);

enum class SaliencyMethod { GradCam, Jacobian };

struct SaliencyMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;  // row-major, in [0, 1], max 1 unless all zero
  Category category = Category::Hovering;
  SaliencyMethod method = SaliencyMethod::GradCam;
};

/// Bilinear resize with half-pixel centres, clamped at the borders.
std::vector<float> upsample_bilinear(std::span<const float> src, std::size_t src_w, std::size_t src_h,
                                     std::size_t dst_w, std::size_t dst_h);

/// GradCAM on the last conv layer for each of the four classes; one forward pass.
std::array<SaliencyMap, kNumCategories> gradcam_all(const ReasonerNet& net, std::span<const float> delta);
SaliencyMap gradcam(const ReasonerNet& net, std::span<const float> delta, int target_class);

/// |d log pi(action | state) / d pixel|, max over the stack, max-normalized.
SaliencyMap jacobian_saliency(const PolicyValueNet& net, std::span<const float> state, int action);

/// Adjacent-switch rate of every length-`window` slice; result has
/// labels.size() - window + 1 entries.
std::vector<double> instability(std::span<const Category> labels, std::size_t window);

/// (p + 0.001 k) / (1 + 0.001 k n).
std::vector<float> perturb_distribution(std::span<const float> probs, int k);

struct StepTrace {
  int action = 0;
  float reward = 0.0f;
  double gain = 0.0;
  double se = 0.0;
  Category label = Category::Hovering;      // pseudo-groundtruth
  Category predicted = Category::Hovering;  // Reasoner
  double instability = 0.0;                 // trailing window ending here, 0 until full
};

struct EpisodeTrace {
  std::vector<StepTrace> steps;
  double ret = 0.0;
  bool success = false;
  bool died = false;
};

struct RolloutOptions {
  int perturb_k = 0;
  std::size_t window = 16;
  double w1 = 0.5;
  double reward_clip = 15.0;  // same learner-side clip as training; 0 disables
  bool label = true;  // compute G, S_e and pool labels
};

/// Stochastic episode with the policy; each step classified by the Reasoner.
/// Pool labels are drawn from `pool`, which persists across calls.
EpisodeTrace rollout_episode(const PolicyValueNet& policy, const ReasonerNet& reasoner, const WorldSpec& world,
                             ExploringPool& pool, std::uint64_t seed, const RolloutOptions& options = {});

struct SweepRow {
  int k = 0;
  std::array<double, kNumCategories> mean{};
  std::array<double, kNumCategories> stddev{};
};

struct SweepResult {
  std::vector<SweepRow> rows;  // k = 0..k_max
};

SweepResult entropy_sweep(const PolicyValueNet& policy, const ReasonerNet& reasoner, const WorldSpec& world,
                          int k_max, std::size_t episodes_per_k, std::uint64_t seed);

struct ConvergenceResult {
  std::array<bool, kNumCategories> converged{};
  std::array<double, kNumCategories> spread{};
  std::array<double, kNumCategories> final_value{};
  bool complete = false;  // all four converged
};

/// Converged when max - min over the trailing `window` rows is below epsilon.
ConvergenceResult convergence(std::span<const std::array<double, kNumCategories>> history, std::size_t window,
                              double epsilon);

enum class Distribution { Normal, Exponential, Uniform };

struct FeatureSpec {
  Distribution family = Distribution::Normal;
  double a = 0.0;  // mean / rate / lower bound
  double b = 1.0;  // standard deviation / unused / upper bound
};

struct TheoremSimSpec {
  std::vector<FeatureSpec> features;  // d = 1 or 2
  std::size_t capacity = 1000;
  std::size_t events = 50000;
  std::uint64_t seed = 0;
};

struct TheoremSimResult {
  std::size_t dims = 1;
  /// d = 1: [P(label 1)]; d = 2: category order.
  std::vector<double> empirical;
  std::vector<double> analytic;
  std::vector<double> abs_error;
  double max_abs_error = 0.0;
};

/// F(mean) of one feature distribution.
double cdf_at_mean(const FeatureSpec& f);
/// Pool prefilled with `capacity` draws, then `events` labeled draws.
TheoremSimResult simulate_theorem(const TheoremSimSpec& spec);
/// Parses "normal:5:2", "exponential:1", "uniform:0:1".
FeatureSpec parse_feature_spec(const std::string& text);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct MannWhitney {
  double u = 0.0;  // U of the first sample
  double z = 0.0;
  double p_greater = 1.0;  // one-sided: first sample stochastically larger
};

/// Normal approximation with tie and continuity correction.
MannWhitney mann_whitney(std::span<const double> first, std::span<const double> second);

}  // namespace a2cr
