#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "a2cr/error.hpp"
#include "a2cr/graph.hpp"
#include "a2cr/networks.hpp"
#include "oracles.hpp"

using namespace a2cr;
using oracle::Vec;

namespace {

constexpr double kStep = 1e-3;
constexpr double kRelTol = 1e-3;
constexpr std::size_t kCoords = 60;

using Build = std::function<Var(Graph&, const std::vector<Var>&)>;
using Reference = std::function<Vec(const std::vector<Vec>&)>;

struct FdReport {
  std::size_t checked = 0;
  double worst = 0.0;
};

// Seeds backward with random output weights c, so the checked scalar is
// sum(c * out). The numeric side differentiates the double oracle.
FdReport check_input_gradients(const std::vector<Shape>& shapes, std::vector<std::vector<float>> values,
                               const Build& build, const Reference& ref, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Graph g;
  std::vector<Var> in;
  for (std::size_t i = 0; i < shapes.size(); ++i) in.push_back(g.input(Tensor(shapes[i], values[i]), true));
  const Var out = build(g, in);
  const auto fwd = g.value(out);
  const std::vector<float> cf = oracle::random_floats(fwd.size(), rng);
  const Vec c = oracle::to_double(cf);
  g.backward(out, cf);

  std::vector<Vec> dv;
  for (const auto& v : values) dv.push_back(oracle::to_double(v));
  const Vec expected = ref(dv);
  REQUIRE(expected.size() == fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) CHECK(fwd[i] == doctest::Approx(expected[i]).epsilon(1e-5));

  auto objective = [&](const std::vector<Vec>& x) {
    const Vec o = ref(x);
    return std::inner_product(o.begin(), o.end(), c.begin(), 0.0);
  };
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = 0; j < values[i].size(); ++j) coords.emplace_back(i, j);
  }
  REQUIRE(coords.size() >= 50);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(std::min(coords.size(), kCoords));

  FdReport rep;
  for (const auto& [i, j] : coords) {
    auto x = dv;
    x[i][j] += kStep;
    const double up = objective(x);
    x[i][j] -= 2 * kStep;
    const double down = objective(x);
    const double numeric = (up - down) / (2 * kStep);
    const double analytic = g.grad(in[i])[j];
    const double err = oracle::rel_error(analytic, numeric);
    rep.worst = std::max(rep.worst, err);
    ++rep.checked;
    CHECK_MESSAGE(err < kRelTol, "input ", i, " coordinate ", j, ": analytic ", analytic, " numeric ", numeric);
  }
  return rep;
}

// Keeps values away from the ReLU kink so central differences stay on one side.
std::vector<float> away_from_zero(std::size_t n, std::mt19937_64& rng) {
  auto v = oracle::random_floats(n, rng);
  for (auto& x : v) x = x >= 0 ? x + 0.05f : x - 0.05f;
  return v;
}

}  // namespace

TEST_CASE("conv2d forward examples") {
  Graph g;
  const Var x = g.constant(Tensor({1, 3, 3}, 1.0f));
  const Var k = g.constant(Tensor({1, 1, 2, 2}, 1.0f));
  const Var y = g.conv2d(x, k, 1);
  CHECK(g.shape(y) == Shape{1, 2, 2});
  for (float v : g.value(y)) CHECK(v == 4.0f);

  std::mt19937_64 rng(3);
  const Var zero = g.conv2d(g.constant(Tensor({2, 8, 8}, oracle::random_floats(128, rng))),
                            g.constant(Tensor({4, 2, 3, 3}, 0.0f)), 1);
  for (float v : g.value(zero)) CHECK(v == 0.0f);
}

TEST_CASE("conv2d matches a nested-loop oracle") {
  std::mt19937_64 rng(11);
  for (int stride : {1, 2}) {
    const auto x = oracle::random_floats(2 * 8 * 8, rng);
    const auto k = oracle::random_floats(4 * 2 * 3 * 3, rng);
    Graph g;
    const Var y = g.conv2d(g.constant(Tensor({2, 8, 8}, x)), g.constant(Tensor({4, 2, 3, 3}, k)), stride);
    std::size_t oh = 0;
    std::size_t ow = 0;
    const Vec ref = oracle::conv2d(oracle::to_double(x), 2, 8, 8, oracle::to_double(k), 4, 3, 3, stride, nullptr, oh, ow);
    CHECK(g.shape(y) == Shape{4, oh, ow});
    const auto out = g.value(y);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(out[i] - ref[i]) < 1e-5);
  }
}

TEST_CASE("conv2d and dense reject mismatched shapes") {
  Graph g;
  const Var x = g.constant(Tensor({2, 8, 8}));
  CHECK_THROWS_AS(g.conv2d(x, g.constant(Tensor({4, 3, 3, 3})), 1), ShapeError);
  CHECK_THROWS_AS(g.conv2d(x, g.constant(Tensor({4, 2, 9, 9})), 1), ShapeError);
  const Var v = g.constant(Tensor({5}));
  CHECK_THROWS_AS(g.dense(v, g.constant(Tensor({3, 4})), g.constant(Tensor({3}))), ShapeError);
}

TEST_CASE("dense forward examples") {
  Graph g;
  const Var x = g.constant(Tensor({2}, {1.0f, 2.0f}));
  const Var y = g.dense(x, g.constant(Tensor({2, 2}, {1, 1, 0, 1})), g.constant(Tensor({2}, 0.0f)));
  CHECK(g.value(y)[0] == 3.0f);
  CHECK(g.value(y)[1] == 2.0f);

  const Var id = g.dense(x, g.constant(Tensor({2, 2}, {1, 0, 0, 1})), g.constant(Tensor({2}, 0.0f)));
  CHECK(g.value(id)[0] == 1.0f);
  CHECK(g.value(id)[1] == 2.0f);

  std::mt19937_64 rng(5);
  const auto xv = oracle::random_floats(16, rng);
  const auto wv = oracle::random_floats(8 * 16, rng);
  const auto bv = oracle::random_floats(8, rng);
  const Var r = g.dense(g.constant(Tensor({16}, xv)), g.constant(Tensor({8, 16}, wv)), g.constant(Tensor({8}, bv)));
  const Vec ref = oracle::dense(oracle::to_double(xv), oracle::to_double(wv), oracle::to_double(bv));
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(g.value(r)[i] - ref[i]) < 1e-6);
}

TEST_CASE("relu forward and the zero subgradient") {
  Graph g;
  const Var x = g.input(Tensor({3}, {-1.0f, 0.0f, 2.0f}), true);
  const Var y = g.relu(x);
  CHECK(std::vector<float>(g.value(y).begin(), g.value(y).end()) == std::vector<float>{0, 0, 2});
  g.backward(g.sum(y));
  CHECK(g.grad(x)[0] == 0.0f);
  CHECK(g.grad(x)[1] == 0.0f);
  CHECK(g.grad(x)[2] == 1.0f);

  const Var neg = g.relu(g.constant(Tensor({4}, -3.0f)));
  for (float v : g.value(neg)) CHECK(v == 0.0f);
}

TEST_CASE("softmax forward examples") {
  Graph g;
  const Var u = g.softmax(g.constant(Tensor({4}, 0.0f)));
  for (float v : g.value(u)) CHECK(v == doctest::Approx(0.25).epsilon(1e-7));

  const Var big = g.softmax(g.constant(Tensor({2}, {1000.0f, 0.0f})));
  CHECK(g.value(big)[0] == doctest::Approx(1.0));
  CHECK(g.value(big)[1] >= 0.0f);
  CHECK(std::isfinite(g.value(big)[1]));

  std::mt19937_64 rng(8);
  const auto xv = oracle::random_floats(12, rng, -3.0f, 3.0f);
  const Var r = g.softmax(g.constant(Tensor({12}, xv)));
  const Vec ref = oracle::softmax(oracle::to_double(xv));
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(g.value(r)[i] - ref[i]) < 1e-6);
}

TEST_CASE("sigmoid forward examples") {
  Graph g;
  const Var s = g.sigmoid(g.constant(Tensor({4}, {0.0f, -100.0f, 3.0f, -3.0f})));
  const auto v = g.value(s);
  CHECK(v[0] == 0.5f);
  CHECK(v[1] > 0.0f);
  CHECK(v[1] <= 1e-6f);
  CHECK(std::abs(v[2] + v[3] - 1.0f) < 1e-7);
}

TEST_CASE("backward basics") {
  Graph g;
  const Var x = g.input(Tensor({1}, 3.0f), true);
  g.backward(g.sum(g.square(x)));
  CHECK(g.grad(x)[0] == 6.0f);

  Tensor used({2}, 1.0f);
  Tensor unused({2}, 1.0f);
  used.set_requires_grad(true);
  unused.set_requires_grad(true);
  Graph h;
  const Var a = h.param(used);
  h.param(unused);
  h.backward(h.sum(h.mul(a, a)));
  CHECK(used.grad()[0] == 2.0f);
  CHECK(unused.grad()[0] == 0.0f);
  CHECK(unused.grad()[1] == 0.0f);

  CHECK_THROWS_AS(h.backward(a), ContractViolation);
}

TEST_CASE("fan-out accumulates gradients once per use") {
  Graph g;
  const Var x = g.input(Tensor({1}, 2.0f), true);
  // y = x * x + x, dy/dx = 2x + 1
  g.backward(g.sum(g.add(g.mul(x, x), x)));
  CHECK(g.grad(x)[0] == 5.0f);
}

TEST_CASE("parameter gradients accumulate across backward passes") {
  Tensor w({1}, 3.0f);
  w.set_requires_grad(true);
  for (int pass = 0; pass < 2; ++pass) {
    Graph g;
    g.backward(g.sum(g.square(g.param(w))));
  }
  CHECK(w.grad()[0] == 12.0f);
}

TEST_CASE("finite differences: every layer type") {
  std::mt19937_64 rng(2024);
  auto rnd = [&](std::size_t n, float lo = -1.0f, float hi = 1.0f) { return oracle::random_floats(n, rng, lo, hi); };

  SUBCASE("conv2d stride 1") {
    check_input_gradients(
        {{2, 8, 8}, {4, 2, 3, 3}}, {rnd(128), rnd(72)},
        [](Graph& g, const std::vector<Var>& v) { return g.conv2d(v[0], v[1], 1); },
        [](const std::vector<Vec>& x) {
          std::size_t oh = 0, ow = 0;
          return oracle::conv2d(x[0], 2, 8, 8, x[1], 4, 3, 3, 1, nullptr, oh, ow);
        },
        1);
  }
  SUBCASE("conv2d stride 2, batched") {
    check_input_gradients(
        {{2, 2, 9, 9}, {3, 2, 3, 3}}, {rnd(324), rnd(54)},
        [](Graph& g, const std::vector<Var>& v) { return g.conv2d(v[0], v[1], 2); },
        [](const std::vector<Vec>& x) {
          Vec out;
          for (std::size_t b = 0; b < 2; ++b) {
            const Vec xb(x[0].begin() + static_cast<std::ptrdiff_t>(b * 162),
                         x[0].begin() + static_cast<std::ptrdiff_t>((b + 1) * 162));
            std::size_t oh = 0, ow = 0;
            const Vec o = oracle::conv2d(xb, 2, 9, 9, x[1], 3, 3, 3, 2, nullptr, oh, ow);
            out.insert(out.end(), o.begin(), o.end());
          }
          return out;
        },
        2);
  }
  SUBCASE("channel bias") {
    check_input_gradients(
        {{3, 4, 5}, {3}}, {rnd(60), rnd(3)},
        [](Graph& g, const std::vector<Var>& v) { return g.add_channel_bias(v[0], v[1]); },
        [](const std::vector<Vec>& x) {
          Vec out = x[0];
          for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[1][i / 20];
          return out;
        },
        3);
  }
  SUBCASE("dense") {
    check_input_gradients(
        {{16}, {8, 16}, {8}}, {rnd(16), rnd(128), rnd(8)},
        [](Graph& g, const std::vector<Var>& v) { return g.dense(v[0], v[1], v[2]); },
        [](const std::vector<Vec>& x) { return oracle::dense(x[0], x[1], x[2]); }, 4);
  }
  SUBCASE("dense batched") {
    check_input_gradients(
        {{3, 10}, {6, 10}, {6}}, {rnd(30), rnd(60), rnd(6)},
        [](Graph& g, const std::vector<Var>& v) { return g.dense(v[0], v[1], v[2]); },
        [](const std::vector<Vec>& x) {
          Vec out;
          for (std::size_t b = 0; b < 3; ++b) {
            const Vec o = oracle::dense(Vec(x[0].begin() + static_cast<std::ptrdiff_t>(b * 10),
                                            x[0].begin() + static_cast<std::ptrdiff_t>((b + 1) * 10)),
                                        x[1], x[2]);
            out.insert(out.end(), o.begin(), o.end());
          }
          return out;
        },
        5);
  }
  SUBCASE("relu") {
    check_input_gradients(
        {{64}}, {away_from_zero(64, rng)}, [](Graph& g, const std::vector<Var>& v) { return g.relu(v[0]); },
        [](const std::vector<Vec>& x) { return oracle::relu(x[0]); }, 6);
  }
  SUBCASE("sigmoid") {
    check_input_gradients(
        {{64}}, {rnd(64, -4.0f, 4.0f)}, [](Graph& g, const std::vector<Var>& v) { return g.sigmoid(v[0]); },
        [](const std::vector<Vec>& x) {
          Vec o = x[0];
          for (auto& e : o) e = 1.0 / (1.0 + std::exp(-e));
          return o;
        },
        7);
  }
  SUBCASE("softmax over the last axis") {
    check_input_gradients(
        {{5, 12}}, {rnd(60, -3.0f, 3.0f)}, [](Graph& g, const std::vector<Var>& v) { return g.softmax(v[0]); },
        [](const std::vector<Vec>& x) {
          Vec out;
          for (std::size_t r = 0; r < 5; ++r) {
            const Vec o = oracle::softmax(Vec(x[0].begin() + static_cast<std::ptrdiff_t>(r * 12),
                                              x[0].begin() + static_cast<std::ptrdiff_t>((r + 1) * 12)));
            out.insert(out.end(), o.begin(), o.end());
          }
          return out;
        },
        8);
  }
  SUBCASE("log_softmax over the last axis") {
    check_input_gradients(
        {{5, 12}}, {rnd(60, -3.0f, 3.0f)},
        [](Graph& g, const std::vector<Var>& v) { return g.log_softmax(v[0]); },
        [](const std::vector<Vec>& x) {
          Vec out;
          for (std::size_t r = 0; r < 5; ++r) {
            const Vec o = oracle::softmax(Vec(x[0].begin() + static_cast<std::ptrdiff_t>(r * 12),
                                              x[0].begin() + static_cast<std::ptrdiff_t>((r + 1) * 12)));
            for (double p : o) out.push_back(std::log(p));
          }
          return out;
        },
        9);
  }
  SUBCASE("reshape") {
    check_input_gradients(
        {{6, 10}}, {rnd(60)}, [](Graph& g, const std::vector<Var>& v) { return g.reshape(v[0], {60}); },
        [](const std::vector<Vec>& x) { return x[0]; }, 10);
  }
  SUBCASE("add, sub and mul") {
    check_input_gradients(
        {{30}, {30}}, {rnd(30), rnd(30)},
        [](Graph& g, const std::vector<Var>& v) { return g.mul(g.add(v[0], v[1]), g.sub(v[0], v[1])); },
        [](const std::vector<Vec>& x) {
          Vec o(30);
          for (std::size_t i = 0; i < 30; ++i) o[i] = (x[0][i] + x[1][i]) * (x[0][i] - x[1][i]);
          return o;
        },
        11);
  }
  SUBCASE("scale and square") {
    check_input_gradients(
        {{60}}, {rnd(60)}, [](Graph& g, const std::vector<Var>& v) { return g.square(g.scale(v[0], 1.7f)); },
        [](const std::vector<Vec>& x) {
          Vec o = x[0];
          for (auto& e : o) e = (static_cast<double>(1.7f) * e) * (static_cast<double>(1.7f) * e);
          return o;
        },
        12);
  }
  SUBCASE("sum and mean") {
    check_input_gradients(
        {{60}}, {rnd(60)},
        [](Graph& g, const std::vector<Var>& v) {
          return g.add(g.sum(g.square(v[0])), g.scale(g.mean(v[0]), 3.0f));
        },
        [](const std::vector<Vec>& x) {
          double s = 0.0, m = 0.0;
          for (double e : x[0]) {
            s += e * e;
            m += e;
          }
          return Vec{s + 3.0 * m / 60.0};
        },
        13);
  }
  SUBCASE("sum_last") {
    check_input_gradients(
        {{5, 12}}, {rnd(60)}, [](Graph& g, const std::vector<Var>& v) { return g.sum_last(g.square(v[0])); },
        [](const std::vector<Vec>& x) {
          Vec o(5, 0.0);
          for (std::size_t i = 0; i < 60; ++i) o[i / 12] += x[0][i] * x[0][i];
          return o;
        },
        14);
  }
  SUBCASE("pick") {
    const std::vector<int> idx{3, 0, 11, 7, 7};
    check_input_gradients(
        {{5, 12}}, {rnd(60)},
        [&](Graph& g, const std::vector<Var>& v) { return g.pick(g.square(v[0]), idx); },
        [&](const std::vector<Vec>& x) {
          Vec o(5);
          for (std::size_t r = 0; r < 5; ++r) {
            const double e = x[0][r * 12 + static_cast<std::size_t>(idx[r])];
            o[r] = e * e;
          }
          return o;
        },
        15);
  }
  for (BceMode mode : {BceMode::Full, BceMode::PositiveOnly}) {
    CAPTURE(static_cast<int>(mode));
    Tensor targets({16, 4}, 0.0f);
    for (std::size_t r = 0; r < 16; ++r) targets[r * 4 + r % 4] = 1.0f;
    check_input_gradients(
        {{16, 4}}, {rnd(64, -4.0f, 4.0f)},
        [&](Graph& g, const std::vector<Var>& v) { return g.bce_with_logits(v[0], targets, mode); },
        [&](const std::vector<Vec>& x) {
          double total = 0.0;
          for (std::size_t i = 0; i < 64; ++i) {
            const double y = targets[i];
            const double l = x[0][i];
            total += mode == BceMode::Full ? oracle::softplus(l) - y * l : y * oracle::softplus(-l);
          }
          return Vec{total / 16.0};
        },
        16);
  }
}

TEST_CASE("finite differences: full Reasoner loss") {
  const NetConfig c = oracle::small_net_config();
  ReasonerNet net(c, 77);
  std::mt19937_64 rng(99);
  // Non-zero biases so that no pre-activation sits exactly on a kink.
  for (auto& e : net.params()) {
    if (e.name.ends_with(".bias")) {
      for (auto& b : e.tensor.data()) b = std::uniform_real_distribution<float>(-0.1f, 0.1f)(rng);
    }
  }
  constexpr std::size_t batch = 2;
  const auto x = oracle::random_floats(batch * c.state_size(), rng);
  Tensor targets({batch, c.classes}, 0.0f);
  targets[1] = 1.0f;
  targets[c.classes + 2] = 1.0f;

  Graph g;
  const auto out = net.forward(g, g.constant(Tensor({batch, c.stack, c.height, c.width}, x)), Binding::Trainable);
  const Var loss = g.bce_with_logits(out.logits, targets, BceMode::Full);
  net.params().zero_grad();
  g.backward(loss);

  auto objective = [&](const oracle::Params& p) {
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const Vec xb(x.begin() + static_cast<std::ptrdiff_t>(b * c.state_size()),
                   x.begin() + static_cast<std::ptrdiff_t>((b + 1) * c.state_size()));
      const Vec logits = oracle::reasoner_logits(p, c, xb);
      for (std::size_t k = 0; k < c.classes; ++k) {
        total += oracle::softplus(logits[k]) - targets[b * c.classes + k] * logits[k];
      }
    }
    return total / static_cast<double>(batch);
  };
  oracle::Params base(net.params());
  CHECK(g.scalar(loss) == doctest::Approx(objective(base)).epsilon(1e-5));

  std::size_t skipped = 0;
  const auto samples = oracle::fd_parameter_samples(net.params(), base, objective, rng, 5, kStep, skipped);
  for (const auto& s : samples) {
    CHECK_MESSAGE(oracle::rel_error(s.analytic, s.numeric) < kRelTol, net.params().name(s.tensor), "[", s.index,
                  "] analytic ", s.analytic, " numeric ", s.numeric);
  }
  CHECK(samples.size() >= 50);
  CHECK(skipped < samples.size());
}

TEST_CASE("extreme magnitudes stay finite") {
  std::mt19937_64 rng(4);
  const auto xv = oracle::random_floats(48, rng, -1e4f, 1e4f);
  Graph g;
  const Var x = g.input(Tensor({4, 12}, xv), true);
  Tensor targets({4, 12}, 0.0f);
  targets[0] = 1.0f;
  const Var loss = g.add(
      g.add(g.sum(g.softmax(x)), g.sum(g.log_softmax(x))),
      g.add(g.sum(g.sigmoid(x)), g.bce_with_logits(x, targets, BceMode::Full)));
  g.backward(loss);
  CHECK(std::isfinite(g.scalar(loss)));
  for (float v : g.grad(x)) CHECK(std::isfinite(v));
  const Var p = g.softmax(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(g.value(p)[r * 12 + i] >= 0.0f);
      s += g.value(p)[r * 12 + i];
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("softmax sums to one and stays positive on moderate inputs") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Graph g;
    const Var p = g.softmax(g.constant(Tensor({12}, oracle::random_floats(12, rng, -20.0f, 20.0f))));
    double s = 0.0;
    for (float v : g.value(p)) {
      CHECK(v > 0.0f);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("identical graphs give bit-identical gradients") {
  std::mt19937_64 rng(5);
  const auto xv = oracle::random_floats(2 * 8 * 8, rng);
  const auto kv = oracle::random_floats(3 * 2 * 3 * 3, rng);
  std::vector<float> first;
  for (int run = 0; run < 2; ++run) {
    Graph g;
    const Var k = g.input(Tensor({3, 2, 3, 3}, kv), true);
    g.backward(g.sum(g.square(g.relu(g.conv2d(g.constant(Tensor({2, 8, 8}, xv)), k, 1)))));
    const auto grad = g.grad(k);
    if (run == 0) {
      first.assign(grad.begin(), grad.end());
    } else {
      CHECK(std::equal(first.begin(), first.end(), grad.begin()));
    }
  }
}
