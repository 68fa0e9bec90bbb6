#include "a2cr/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "a2cr/error.hpp"
#include "a2cr/phase_corr.hpp"
#include "a2cr/state_explore.hpp"
#include "a2cr/training.hpp"

namespace a2cr {

namespace {

Classification from_logits(std::span<const float> logits) {
  Classification c;
  std::size_t best = 0;
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    const float x = logits[i];
    c.scores[i] = x >= 0.0f ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
    if (c.scores[i] > c.scores[best]) best = i;
  }
  c.category = static_cast<Category>(best);
  return c;
}

void max_normalize(std::vector<float>& v) {
  const float m = v.empty() ? 0.0f : *std::max_element(v.begin(), v.end());
  if (!(m > 0.0f)) {
    std::fill(v.begin(), v.end(), 0.0f);
    return;
  }
  for (auto& x : v) x = std::clamp(x / m, 0.0f, 1.0f);
}

Tensor state_tensor(const NetConfig& c, std::span<const float> x) {
  if (x.size() != c.state_size()) {
    throw ShapeError("expected " + std::to_string(c.state_size()) + " input values, got " + std::to_string(x.size()));
  }
  return Tensor(c.state_shape(), std::vector<float>(x.begin(), x.end()));
}

double draw(const FeatureSpec& f, std::mt19937_64& rng) {
  switch (f.family) {
    case Distribution::Normal:
      return std::normal_distribution<double>(f.a, f.b)(rng);
    case Distribution::Exponential:
      return std::exponential_distribution<double>(f.a)(rng);
    case Distribution::Uniform:
      return std::uniform_real_distribution<double>(f.a, f.b)(rng);
  }
  throw ContractViolation("unknown distribution");
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

Classification classify(const ReasonerNet& net, std::span<const float> delta) {
  const auto logits = net.logits(delta);
  return from_logits(logits);
}

std::vector<Classification> classify_batch(const ReasonerNet& net, std::span<const float> deltas, std::size_t batch) {
  const auto logits = net.logits_batch(deltas, batch);
  std::vector<Classification> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    out[b] = from_logits(std::span<const float>(logits).subspan(b * kNumCategories, kNumCategories));
  }
  return out;
}

std::vector<float> upsample_bilinear(std::span<const float> src, std::size_t src_w, std::size_t src_h,
                                     std::size_t dst_w, std::size_t dst_h) {
  if (src.size() != src_w * src_h || src_w == 0 || src_h == 0) throw ShapeError("upsample source size mismatch");
  std::vector<float> out(dst_w * dst_h);
  auto coord = [](std::size_t d, std::size_t sn, std::size_t dn) {
    const double s = (static_cast<double>(d) + 0.5) * static_cast<double>(sn) / static_cast<double>(dn) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(sn - 1));
  };
  for (std::size_t y = 0; y < dst_h; ++y) {
    const double sy = coord(y, src_h, dst_h);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, src_h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < dst_w; ++x) {
      const double sx = coord(x, src_w, dst_w);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, src_w - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = (1.0 - fx) * src[y0 * src_w + x0] + fx * src[y0 * src_w + x1];
      const double bottom = (1.0 - fx) * src[y1 * src_w + x0] + fx * src[y1 * src_w + x1];
      out[y * dst_w + x] = static_cast<float>((1.0 - fy) * top + fy * bottom);
    }
  }
  return out;
}

std::array<SaliencyMap, kNumCategories> gradcam_all(const ReasonerNet& net, std::span<const float> delta) {
  const NetConfig& c = net.config();
  Graph g;
  const Var x = g.input(state_tensor(c, delta), true);
  const auto out = net.forward(g, x);
  const Shape& as = g.shape(out.last_conv);  // [K, h, w]
  const std::size_t k = as[0];
  const std::size_t plane = as[1] * as[2];
  const auto act = g.value(out.last_conv);
  std::array<SaliencyMap, kNumCategories> maps;
  for (std::size_t cls = 0; cls < kNumCategories; ++cls) {
    std::vector<float> seed(kNumCategories, 0.0f);
    seed[cls] = 1.0f;
    g.backward(out.logits, seed);
    const auto grad = g.grad(out.last_conv);
    std::vector<float> cam(plane, 0.0f);
    for (std::size_t ch = 0; ch < k; ++ch) {
      double w = 0.0;
      for (std::size_t p = 0; p < plane; ++p) w += grad[ch * plane + p];
      w /= static_cast<double>(plane);
      for (std::size_t p = 0; p < plane; ++p) cam[p] += static_cast<float>(w) * act[ch * plane + p];
    }
    for (auto& v : cam) v = std::max(v, 0.0f);
    SaliencyMap& m = maps[cls];
    m.width = c.width;
    m.height = c.height;
    m.values = upsample_bilinear(cam, as[2], as[1], c.width, c.height);
    max_normalize(m.values);
    m.category = static_cast<Category>(cls);
    m.method = SaliencyMethod::GradCam;
  }
  return maps;
}

SaliencyMap gradcam(const ReasonerNet& net, std::span<const float> delta, int target_class) {
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= kNumCategories) {
    throw ContractViolation("GradCAM target class out of range");
  }
  return gradcam_all(net, delta)[static_cast<std::size_t>(target_class)];
}

SaliencyMap jacobian_saliency(const PolicyValueNet& net, std::span<const float> state, int action) {
  const NetConfig& c = net.config();
  if (action < 0 || static_cast<std::size_t>(action) >= c.actions) throw ContractViolation("action out of range");
  Graph g;
  const Var x = g.input(state_tensor(c, state), true);
  const auto out = net.forward(g, x);
  std::vector<float> seed(c.actions, 0.0f);
  seed[static_cast<std::size_t>(action)] = 1.0f;
  g.backward(out.log_probs, seed);
  const auto grad = g.grad(x);
  const std::size_t plane = c.height * c.width;
  SaliencyMap m;
  m.width = c.width;
  m.height = c.height;
  m.values.assign(plane, 0.0f);
  for (std::size_t ch = 0; ch < c.stack; ++ch) {
    for (std::size_t p = 0; p < plane; ++p) m.values[p] = std::max(m.values[p], std::abs(grad[ch * plane + p]));
  }
  max_normalize(m.values);
  m.method = SaliencyMethod::Jacobian;
  return m;
}

std::vector<double> instability(std::span<const Category> labels, std::size_t window) {
  if (window < 2) throw ContractViolation("instability window must be at least 2");
  if (labels.size() < window) throw ContractViolation("label series shorter than the instability window");
  // switches[i] = 1 when labels[i] != labels[i + 1].
  std::vector<std::size_t> prefix(labels.size(), 0);
  for (std::size_t i = 1; i < labels.size(); ++i) prefix[i] = prefix[i - 1] + (labels[i] != labels[i - 1] ? 1 : 0);
  std::vector<double> out(labels.size() - window + 1);
  const double pairs = static_cast<double>(window - 1);
  for (std::size_t s = 0; s < out.size(); ++s) {
    out[s] = static_cast<double>(prefix[s + window - 1] - prefix[s]) / pairs;
  }
  return out;
}

std::vector<float> perturb_distribution(std::span<const float> probs, int k) {
  if (k < 0) throw ContractViolation("perturbation level must be non-negative");
  std::vector<float> q(probs.begin(), probs.end());
  if (k == 0) return q;
  const double add = 0.001 * k;
  const double norm = 1.0 + add * static_cast<double>(probs.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = static_cast<float>((probs[i] + add) / norm);
  return q;
}

EpisodeTrace rollout_episode(const PolicyValueNet& policy, const ReasonerNet& reasoner, const WorldSpec& world,
                             ExploringPool& pool, std::uint64_t seed, const RolloutOptions& options) {
  const NetConfig& c = policy.config();
  ScrollRunner env(world, c.stack);
  env.reset(seed);
  std::mt19937_64 rng(mix_seed(seed, 0xAC7));
  auto eval = policy.evaluate(env.observation().data());
  EpisodeTrace trace;
  std::vector<Category> predicted;
  std::vector<float> delta(c.state_size());
  while (true) {
    StepTrace st;
    const auto probs = perturb_distribution(eval.policy.probs, options.perturb_k);
    st.action = sample_action(probs, rng);
    const FrameStack before = env.observation();
    const StepResult step = env.step(st.action);
    const FrameStack& after = env.observation();
    st.reward = step.reward;
    trace.ret += step.reward;
    PolicyValueNet::Evaluation next{};
    if (!step.done) next = policy.evaluate(after.data());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = after.data()[i] - before.data()[i];
    st.predicted = classify(reasoner, delta).category;
    predicted.push_back(st.predicted);
    if (options.label) {
      const double r = options.reward_clip > 0.0 ? std::clamp<double>(step.reward, -options.reward_clip, options.reward_clip)
                                                 : step.reward;
      st.gain = gain({step.done ? 0.0 : next.value, eval.value, r, options.w1});
      const auto shift = estimate_shift(before.latest(), after.latest(), after.width(), after.height());
      st.se = state_exploration(before.latest(), after.latest(), after.width(), after.height(), shift).total;
      st.label = pool.label_and_push(st.gain, st.se).label.category();
    }
    if (predicted.size() >= options.window) {
      const auto tail = std::span<const Category>(predicted).last(options.window);
      st.instability = instability(tail, options.window).front();
    }
    trace.steps.push_back(st);
    if (step.done) {
      trace.success = step.reached_goal;
      trace.died = step.died;
      break;
    }
    eval = std::move(next);
  }
  return trace;
}

SweepResult entropy_sweep(const PolicyValueNet& policy, const ReasonerNet& reasoner, const WorldSpec& world,
                          int k_max, std::size_t episodes_per_k, std::uint64_t seed) {
  if (k_max < 0 || episodes_per_k == 0) throw ContractViolation("sweep needs k_max >= 0 and episodes_per_k >= 1");
  SweepResult result;
  ExploringPool unused(1);
  for (int k = 0; k <= k_max; ++k) {
    RolloutOptions opt;
    opt.perturb_k = k;
    opt.label = false;
    std::vector<std::array<double, kNumCategories>> props;
    for (std::size_t e = 0; e < episodes_per_k; ++e) {
      // Common episode seeds across k isolate the effect of the perturbation.
      const auto trace = rollout_episode(policy, reasoner, world, unused, mix_seed(seed, e), opt);
      std::vector<Category> cats;
      cats.reserve(trace.steps.size());
      for (const auto& s : trace.steps) cats.push_back(s.predicted);
      props.push_back(label_proportions(std::span<const Category>(cats)));
    }
    SweepRow row;
    row.k = k;
    const double n = static_cast<double>(props.size());
    for (std::size_t i = 0; i < kNumCategories; ++i) {
      double sum = 0.0;
      for (const auto& p : props) sum += p[i];
      row.mean[i] = sum / n;
      double ss = 0.0;
      for (const auto& p : props) ss += (p[i] - row.mean[i]) * (p[i] - row.mean[i]);
      row.stddev[i] = props.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    }
    result.rows.push_back(row);
  }
  return result;
}

ConvergenceResult convergence(std::span<const std::array<double, kNumCategories>> history, std::size_t window,
                              double epsilon) {
  if (window == 0) throw ContractViolation("convergence window must be positive");
  if (history.size() < 2 * window) throw ContractViolation("label history shorter than twice the window");
  ConvergenceResult r;
  const auto tail = history.last(window);
  r.complete = true;
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    double lo = tail.front()[i];
    double hi = lo;
    for (const auto& row : tail) {
      lo = std::min(lo, row[i]);
      hi = std::max(hi, row[i]);
    }
    r.spread[i] = hi - lo;
    r.converged[i] = r.spread[i] < epsilon;
    r.final_value[i] = tail.back()[i];
    r.complete = r.complete && r.converged[i];
  }
  return r;
}

double cdf_at_mean(const FeatureSpec& f) {
  switch (f.family) {
    case Distribution::Normal:
    case Distribution::Uniform:
      return 0.5;
    case Distribution::Exponential:
      return 1.0 - std::exp(-1.0);
  }
  throw ContractViolation("unknown distribution");
}

FeatureSpec parse_feature_spec(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = text.find(':', start);
    parts.push_back(text.substr(start, colon == std::string::npos ? std::string::npos : colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  auto number = [&](std::size_t i) {
    try {
      std::size_t used = 0;
      const double v = std::stod(parts.at(i), &used);
      if (used != parts[i].size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw FormatError("bad number in distribution spec '" + text + "'");
    }
  };
  FeatureSpec f;
  if (parts[0] == "normal" && parts.size() == 3) {
    f = {Distribution::Normal, number(1), number(2)};
    if (!(f.b > 0.0)) throw FormatError("normal standard deviation must be positive");
  } else if (parts[0] == "exponential" && parts.size() == 2) {
    f = {Distribution::Exponential, number(1), 0.0};
    if (!(f.a > 0.0)) throw FormatError("exponential rate must be positive");
  } else if (parts[0] == "uniform" && parts.size() == 3) {
    f = {Distribution::Uniform, number(1), number(2)};
    if (!(f.b > f.a)) throw FormatError("uniform bounds must satisfy lo < hi");
  } else {
    throw FormatError("unknown distribution spec '" + text + "' (normal:MU:SIGMA, exponential:RATE, uniform:LO:HI)");
  }
  return f;
}

TheoremSimResult simulate_theorem(const TheoremSimSpec& spec) {
  const std::size_t d = spec.features.size();
  if (d != 1 && d != 2) throw ContractViolation("theorem simulation supports one or two features");
  if (spec.capacity == 0 || spec.events == 0) throw ContractViolation("capacity and events must be positive");
  std::mt19937_64 rng(spec.seed);
  ExploringPool pool(spec.capacity, mix_seed(spec.seed, 1));
  auto sample = [&](double& g, double& se) {
    g = draw(spec.features[0], rng);
    se = d == 2 ? draw(spec.features[1], rng) : 0.0;
  };
  double g = 0.0;
  double se = 0.0;
  for (std::size_t i = 0; i < spec.capacity; ++i) {
    sample(g, se);
    pool.push(g, se, PurposeLabel{});
  }
  std::array<std::size_t, kNumCategories> counts{};
  std::size_t ones = 0;
  for (std::size_t i = 0; i < spec.events; ++i) {
    sample(g, se);
    const PurposeLabel l = pool.pseudo_label(g, se);
    pool.push(g, se, l);
    ones += l.g_bit;
    ++counts[static_cast<std::size_t>(l.category())];
  }
  TheoremSimResult r;
  r.dims = d;
  const double n = static_cast<double>(spec.events);
  // A label bit is 1 when the draw reaches the threshold, so its limit is 1 - F(mean).
  const double p1 = 1.0 - cdf_at_mean(spec.features[0]);
  if (d == 1) {
    r.empirical = {static_cast<double>(ones) / n};
    r.analytic = {p1};
  } else {
    const double p2 = 1.0 - cdf_at_mean(spec.features[1]);
    for (std::size_t i = 0; i < kNumCategories; ++i) {
      const PurposeLabel l = PurposeLabel::from(static_cast<Category>(i));
      r.empirical.push_back(static_cast<double>(counts[i]) / n);
      r.analytic.push_back((l.g_bit ? p1 : 1.0 - p1) * (l.se_bit ? p2 : 1.0 - p2));
    }
  }
  for (std::size_t i = 0; i < r.empirical.size(); ++i) {
    r.abs_error.push_back(std::abs(r.empirical[i] - r.analytic[i]));
    r.max_abs_error = std::max(r.max_abs_error, r.abs_error.back());
  }
  return r;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractViolation("spearman needs two equal series of length >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

MannWhitney mann_whitney(std::span<const double> first, std::span<const double> second) {
  if (first.empty() || second.empty()) throw ContractViolation("Mann-Whitney needs two non-empty samples");
  std::vector<double> all(first.begin(), first.end());
  all.insert(all.end(), second.begin(), second.end());
  const auto ranks = average_ranks(all);
  const double n1 = static_cast<double>(first.size());
  const double n2 = static_cast<double>(second.size());
  const double n = n1 + n2;
  double r1 = 0.0;
  for (std::size_t i = 0; i < first.size(); ++i) r1 += ranks[i];
  MannWhitney m;
  m.u = r1 - n1 * (n1 + 1.0) / 2.0;
  std::vector<double> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return m;
  m.z = (m.u - n1 * n2 / 2.0 - 0.5) / std::sqrt(var);
  m.p_greater = 0.5 * std::erfc(m.z / std::sqrt(2.0));
  return m;
}

}  // namespace a2cr
