#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "a2cr/error.hpp"
#include "a2cr/networks.hpp"
#include "oracles.hpp"

using namespace a2cr;

TEST_CASE("policy entropy closed forms") {
  const std::vector<float> uniform(12, 1.0f / 12.0f);
  CHECK(policy_entropy(uniform) == doctest::Approx(std::log(12.0)).epsilon(1e-12));
  std::vector<float> one_hot(12, 0.0f);
  one_hot[4] = 1.0f;
  CHECK(policy_entropy(one_hot) == 0.0);
  std::vector<float> half(12, 0.0f);
  half[0] = half[1] = 0.5f;
  CHECK(policy_entropy(half) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("entropy never exceeds ln 12") {
  std::mt19937_64 rng(1);
  std::gamma_distribution<double> gamma(0.5, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> w(12);
    double s = 0.0;
    for (auto& x : w) s += (x = gamma(rng));
    std::vector<float> p(12);
    for (std::size_t i = 0; i < 12; ++i) p[i] = static_cast<float>(w[i] / s);
    CHECK(policy_entropy(p) <= std::log(12.0) + 1e-6);
  }
}

TEST_CASE("trunk geometry of the default configuration") {
  const NetConfig c;
  CHECK(c.last_conv_hw() == std::pair<std::size_t, std::size_t>{4, 4});
  NetConfig tiny;
  tiny.height = tiny.width = 8;
  CHECK_THROWS_AS(tiny.last_conv_hw(), ShapeError);
}

TEST_CASE("fresh policy on a zero frame is near uniform") {
  const PolicyValueNet net({}, 0);
  const std::vector<float> zero(net.config().state_size(), 0.0f);
  const auto e = net.evaluate(zero);
  REQUIRE(e.policy.probs.size() == 12);
  const auto [lo, hi] = std::minmax_element(e.policy.probs.begin(), e.policy.probs.end());
  CHECK(*hi - *lo < 0.2f);
  CHECK(std::isfinite(e.value));
}

TEST_CASE("policy outputs are distributions and deterministic") {
  const PolicyValueNet net({}, 3);
  std::mt19937_64 rng(2);
  const auto s = oracle::random_floats(net.config().state_size(), rng, 0.0f, 1.0f);
  const auto a = net.evaluate(s);
  const auto b = net.evaluate(s);
  CHECK(a.policy.probs == b.policy.probs);
  CHECK(a.value == b.value);
  double sum = 0.0;
  for (float p : a.policy.probs) {
    CHECK(p > 0.0f);
    sum += p;
  }
  CHECK(std::abs(sum - 1.0) < 1e-6);
}

TEST_CASE("batched and single evaluation agree") {
  const PolicyValueNet net({}, 4);
  std::mt19937_64 rng(8);
  const std::size_t n = net.config().state_size();
  const auto s = oracle::random_floats(3 * n, rng, 0.0f, 1.0f);
  const auto batch = net.evaluate_batch(s, 3);
  for (std::size_t b = 0; b < 3; ++b) {
    const auto one = net.evaluate(std::span<const float>(s).subspan(b * n, n));
    for (std::size_t i = 0; i < 12; ++i) CHECK(one.policy.probs[i] == doctest::Approx(batch[b].policy.probs[i]).epsilon(1e-5));
    CHECK(one.value == doctest::Approx(batch[b].value).epsilon(1e-5));
  }
}

TEST_CASE("policy/value forward matches the double oracle") {
  const PolicyValueNet net({}, 6);
  std::mt19937_64 rng(12);
  const auto s = oracle::random_floats(net.config().state_size(), rng, 0.0f, 1.0f);
  const auto e = net.evaluate(s);
  const oracle::Params p(net.params());
  const auto ref = oracle::policy_value(p, net.config(), oracle::to_double(s));
  const auto probs = oracle::softmax(ref.logits);
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(e.policy.probs[i] - probs[i]) < 1e-5);
  CHECK(std::abs(e.value - ref.value) < 1e-4);
}

TEST_CASE("wrong input shape is rejected") {
  const PolicyValueNet net;
  CHECK_THROWS_AS(net.evaluate(std::vector<float>(100)), ShapeError);
  const ReasonerNet r;
  CHECK_THROWS_AS(r.logits(std::vector<float>(100)), ShapeError);
}

TEST_CASE("reasoner emits four finite logits") {
  const ReasonerNet net({}, 1);
  const std::vector<float> zero(net.config().state_size(), 0.0f);
  const auto a = net.logits(zero);
  const auto b = net.logits(zero);
  REQUIRE(a.size() == 4);
  CHECK(a == b);
  for (float l : a) {
    CHECK(std::isfinite(l));
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(l)));
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  // Zero input, zero biases: every layer outputs exactly zero.
  for (float l : a) CHECK(l == 0.0f);
}

TEST_CASE("trunk sharing: head parameters touch only their own output") {
  PolicyValueNet net({}, 9);
  std::mt19937_64 rng(10);
  const auto s = oracle::random_floats(net.config().state_size(), rng, 0.0f, 1.0f);
  const auto base = net.evaluate(s);

  // A uniform shift of every policy logit leaves the softmax unchanged, so
  // head weights are poked one element at a time.
  auto poke = [&](std::string_view name, bool all = false) {
    PolicyValueNet copy = net;
    auto& t = copy.params().at(name);
    for (std::size_t i = 0; i < (all ? t.size() : 1); ++i) t[i] += 0.05f;
    return copy.evaluate(s);
  };
  const auto value_poked = poke("value.fc2.bias");
  CHECK(value_poked.policy.probs == base.policy.probs);
  CHECK(value_poked.value != base.value);

  const auto policy_poked = poke("policy.fc2.bias");
  CHECK(policy_poked.value == base.value);
  CHECK(policy_poked.policy.probs != base.policy.probs);

  const auto trunk_poked = poke("trunk.fc.bias", true);
  CHECK(trunk_poked.value != base.value);
  CHECK(trunk_poked.policy.probs != base.policy.probs);
}

TEST_CASE("reasoner and policy networks share no storage") {
  PolicyValueNet policy({}, 1);
  ReasonerNet reasoner({}, 1);
  const auto before = policy.params().checksum();
  for (auto& e : reasoner.params()) {
    for (auto& v : e.tensor.data()) v = 0.5f;
  }
  CHECK(policy.params().checksum() == before);
  for (const auto& pe : policy.params()) {
    for (const auto& re : reasoner.params()) CHECK(pe.tensor.data().data() != re.tensor.data().data());
  }
}

TEST_CASE("initialization bounds and zero biases") {
  const PolicyValueNet net({}, 21);
  for (const auto& e : net.params()) {
    const auto& s = e.tensor.shape();
    if (e.name.ends_with(".bias")) {
      for (float v : e.tensor.data()) CHECK(v == 0.0f);
      continue;
    }
    const double receptive = s.size() == 4 ? static_cast<double>(s[2] * s[3]) : 1.0;
    const double limit = std::sqrt(6.0 / (static_cast<double>(s[1]) * receptive + static_cast<double>(s[0]) * receptive));
    for (float v : e.tensor.data()) CHECK(std::abs(v) <= limit);
  }
}
