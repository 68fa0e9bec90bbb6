#include "a2cr/networks.hpp"

#include <cmath>
#include <random>
#include <string>
#include <tuple>
#include <utility>

#include "a2cr/error.hpp"

namespace a2cr {

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

TrunkLayout add_trunk(ParamSet& params, const NetConfig& c) {
  TrunkLayout t;
  std::size_t in_ch = c.stack;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string base = "trunk.conv" + std::to_string(i + 1);
    const std::size_t k = c.conv_kernels[i];
    t.conv_kernel[i] = params.add(base + ".kernel", {c.conv_channels[i], in_ch, k, k});
    t.conv_bias[i] = params.add(base + ".bias", {c.conv_channels[i]});
    in_ch = c.conv_channels[i];
  }
  const auto [h, w] = c.last_conv_hw();
  t.fc_weight = params.add("trunk.fc.weight", {c.trunk_features, in_ch * h * w});
  t.fc_bias = params.add("trunk.fc.bias", {c.trunk_features});
  return t;
}

DenseLayout add_dense(ParamSet& params, const std::string& base, std::size_t in, std::size_t out) {
  DenseLayout d;
  d.weight = params.add(base + ".weight", {out, in});
  d.bias = params.add(base + ".bias", {out});
  return d;
}

void check_input(const Shape& s, const NetConfig& c) {
  const Shape want = c.state_shape();
  const bool single = s == want;
  const bool batched = s.size() == 4 && Shape(s.begin() + 1, s.end()) == want;
  if (!single && !batched) {
    throw ShapeError("network input " + to_string(s) + " does not match configured state " + to_string(want));
  }
}

template <typename Bind>
std::pair<Var, Var> trunk_forward(Graph& g, Var x, const TrunkLayout& t, const NetConfig& c, Bind& bind) {
  check_input(g.shape(x), c);
  const bool batched = g.shape(x).size() == 4;
  Var h = x;
  for (std::size_t i = 0; i < 3; ++i) {
    h = g.relu(g.add_channel_bias(g.conv2d(h, bind(t.conv_kernel[i]), c.conv_strides[i]), bind(t.conv_bias[i])));
  }
  const Var last_conv = h;
  const Shape& s = g.shape(h);
  const Var flat = batched ? g.reshape(h, {s[0], s[1] * s[2] * s[3]}) : g.reshape(h, {s[0] * s[1] * s[2]});
  const Var features = g.relu(g.dense(flat, bind(t.fc_weight), bind(t.fc_bias)));
  return {last_conv, features};
}

}  // namespace

std::pair<std::size_t, std::size_t> NetConfig::last_conv_hw() const {
  std::size_t h = height;
  std::size_t w = width;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto k = conv_kernels[i];
    const auto s = static_cast<std::size_t>(conv_strides[i]);
    if (h < k || w < k || s == 0) throw ShapeError("frame too small for the configured conv trunk");
    h = (h - k) / s + 1;
    w = (w - k) / s + 1;
  }
  return {h, w};
}

// Renormalized in double so float rounding of the inputs does not bias H.
double policy_entropy(std::span<const float> probs) {
  double total = 0.0;
  for (float p : probs) total += p > 0.0f ? static_cast<double>(p) : 0.0;
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (float p : probs) {
    if (p <= 0.0f) continue;
    const double q = static_cast<double>(p) / total;
    h -= q * std::log(q);
  }
  return h;
}

void initialize_uniform(ParamSet& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& e : params) {
    auto data = e.tensor.data();
    if (ends_with(e.name, ".bias")) {
      std::fill(data.begin(), data.end(), 0.0f);
      continue;
    }
    const Shape& s = e.tensor.shape();
    double fan_in = 0.0;
    double fan_out = 0.0;
    if (s.size() == 4) {
      const double receptive = static_cast<double>(s[2] * s[3]);
      fan_in = static_cast<double>(s[1]) * receptive;
      fan_out = static_cast<double>(s[0]) * receptive;
    } else if (s.size() == 2) {
      fan_in = static_cast<double>(s[1]);
      fan_out = static_cast<double>(s[0]);
    } else {
      throw ShapeError("cannot initialize parameter " + e.name + " of shape " + to_string(s));
    }
    const auto limit = static_cast<float>(std::sqrt(6.0 / (fan_in + fan_out)));
    std::uniform_real_distribution<float> dist(-limit, limit);
    for (auto& v : data) v = dist(rng);
  }
}

PolicyValueNet::PolicyValueNet(NetConfig config, std::uint64_t seed) : config_(config) {
  trunk_ = add_trunk(params_, config_);
  policy_[0] = add_dense(params_, "policy.fc1", config_.trunk_features, config_.head_hidden);
  policy_[1] = add_dense(params_, "policy.fc2", config_.head_hidden, config_.actions);
  value_[0] = add_dense(params_, "value.fc1", config_.trunk_features, config_.head_hidden);
  value_[1] = add_dense(params_, "value.fc2", config_.head_hidden, 1);
  initialize_uniform(params_, seed);
}

template <typename Bind>
PolicyValueNet::Outputs PolicyValueNet::build(Graph& g, Var state, Bind&& bind) const {
  Outputs out;
  std::tie(out.last_conv, out.features) = trunk_forward(g, state, trunk_, config_, bind);
  const Var ph = g.relu(g.dense(out.features, bind(policy_[0].weight), bind(policy_[0].bias)));
  out.logits = g.dense(ph, bind(policy_[1].weight), bind(policy_[1].bias));
  out.probs = g.softmax(out.logits);
  out.log_probs = g.log_softmax(out.logits);
  const Var vh = g.relu(g.dense(out.features, bind(value_[0].weight), bind(value_[0].bias)));
  const Var v = g.dense(vh, bind(value_[1].weight), bind(value_[1].bias));
  const Shape& vs = g.shape(v);
  out.value = vs.size() == 2 ? g.reshape(v, {vs[0]}) : v;
  return out;
}

PolicyValueNet::Outputs PolicyValueNet::forward(Graph& g, Var state, Binding binding) {
  if (binding == Binding::Frozen) return std::as_const(*this).forward(g, state);
  return build(g, state, [&](std::size_t i) { return g.param(params_[i]); });
}

PolicyValueNet::Outputs PolicyValueNet::forward(Graph& g, Var state) const {
  return build(g, state, [&](std::size_t i) { return g.frozen(params_[i]); });
}

PolicyValueNet::Evaluation PolicyValueNet::evaluate(std::span<const float> state) const {
  return evaluate_batch(state, 1).front();
}

std::vector<PolicyValueNet::Evaluation> PolicyValueNet::evaluate_batch(std::span<const float> states,
                                                                        std::size_t batch) const {
  const std::size_t per = config_.state_size();
  if (batch == 0 || states.size() != per * batch) {
    throw ShapeError("expected " + std::to_string(batch) + " states of " + std::to_string(per) + " values, got " +
                     std::to_string(states.size()));
  }
  Graph g;
  Shape shape{batch, config_.stack, config_.height, config_.width};
  const Var x = g.constant(Tensor(shape, std::vector<float>(states.begin(), states.end())));
  const Outputs out = forward(g, x);
  const auto probs = g.value(out.probs);
  const auto values = g.value(out.value);
  std::vector<Evaluation> result(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    result[b].policy.probs.assign(probs.begin() + static_cast<std::ptrdiff_t>(b * config_.actions),
                                  probs.begin() + static_cast<std::ptrdiff_t>((b + 1) * config_.actions));
    result[b].value = values[b];
  }
  return result;
}

ReasonerNet::ReasonerNet(NetConfig config, std::uint64_t seed) : config_(config) {
  trunk_ = add_trunk(params_, config_);
  head_[0] = add_dense(params_, "head.fc1", config_.trunk_features, config_.head_hidden);
  head_[1] = add_dense(params_, "head.fc2", config_.head_hidden, config_.reasoner_hidden);
  head_[2] = add_dense(params_, "head.fc3", config_.reasoner_hidden, config_.classes);
  initialize_uniform(params_, seed);
}

template <typename Bind>
ReasonerNet::Outputs ReasonerNet::build(Graph& g, Var delta, Bind&& bind) const {
  Outputs out;
  std::tie(out.last_conv, out.features) = trunk_forward(g, delta, trunk_, config_, bind);
  const Var h1 = g.relu(g.dense(out.features, bind(head_[0].weight), bind(head_[0].bias)));
  const Var h2 = g.relu(g.dense(h1, bind(head_[1].weight), bind(head_[1].bias)));
  out.logits = g.dense(h2, bind(head_[2].weight), bind(head_[2].bias));
  return out;
}

ReasonerNet::Outputs ReasonerNet::forward(Graph& g, Var delta, Binding binding) {
  if (binding == Binding::Frozen) return std::as_const(*this).forward(g, delta);
  return build(g, delta, [&](std::size_t i) { return g.param(params_[i]); });
}

ReasonerNet::Outputs ReasonerNet::forward(Graph& g, Var delta) const {
  return build(g, delta, [&](std::size_t i) { return g.frozen(params_[i]); });
}

std::vector<float> ReasonerNet::logits(std::span<const float> delta) const { return logits_batch(delta, 1); }

std::vector<float> ReasonerNet::logits_batch(std::span<const float> deltas, std::size_t batch) const {
  const std::size_t per = config_.state_size();
  if (batch == 0 || deltas.size() != per * batch) throw ShapeError("reasoner input size mismatch");
  Graph g;
  const Var x = g.constant(
      Tensor({batch, config_.stack, config_.height, config_.width}, std::vector<float>(deltas.begin(), deltas.end())));
  const auto out = forward(g, x);
  const auto v = g.value(out.logits);
  return {v.begin(), v.end()};
}

}  // namespace a2cr
