// Independent double-precision reference implementations used as test oracles.
#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <random>
#include <utility>
#include <span>
#include <vector>

#include "a2cr/networks.hpp"
#include "a2cr/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec to_double(std::span<const float> v) { return Vec(v.begin(), v.end()); }

inline std::vector<float> random_floats(std::size_t n, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Valid convolution of x[C,H,W] with k[O,C,kh,kw], optional bias[O].
inline Vec conv2d(const Vec& x, std::size_t c, std::size_t h, std::size_t w, const Vec& k, std::size_t o,
                  std::size_t kh, std::size_t kw, int stride, const Vec* bias, std::size_t& oh, std::size_t& ow) {
  oh = (h - kh) / static_cast<std::size_t>(stride) + 1;
  ow = (w - kw) / static_cast<std::size_t>(stride) + 1;
  Vec out(o * oh * ow, 0.0);
  for (std::size_t oc = 0; oc < o; ++oc) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double s = bias ? (*bias)[oc] : 0.0;
        for (std::size_t ic = 0; ic < c; ++ic) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::size_t iy = y * static_cast<std::size_t>(stride) + ky;
              const std::size_t ix = xx * static_cast<std::size_t>(stride) + kx;
              s += x[(ic * h + iy) * w + ix] * k[((oc * c + ic) * kh + ky) * kw + kx];
            }
          }
        }
        out[(oc * oh + y) * ow + xx] = s;
      }
    }
  }
  return out;
}

inline Vec dense(const Vec& x, const Vec& wts, const Vec& b) {
  const std::size_t m = b.size();
  const std::size_t n = x.size();
  Vec out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = b[i];
    for (std::size_t j = 0; j < n; ++j) s += wts[i * n + j] * x[j];
    out[i] = s;
  }
  return out;
}

// When set, every relu appends its active/inactive pattern here. Finite
// differences whose stencil flips a unit straddle a kink and are not valid
// derivative estimates.
inline thread_local std::vector<bool>* relu_pattern = nullptr;

inline Vec relu(Vec v) {
  for (auto& x : v) {
    if (relu_pattern) relu_pattern->push_back(x > 0.0);
    x = x > 0.0 ? x : 0.0;
  }
  return v;
}

// Evaluates f with pattern recording; returns the value and the pattern.
template <class F>
std::pair<double, std::vector<bool>> with_pattern(F&& f) {
  std::vector<bool> pattern;
  relu_pattern = &pattern;
  const double v = f();
  relu_pattern = nullptr;
  return {v, std::move(pattern)};
}

inline Vec softmax(const Vec& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double z = 0.0;
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) z += (out[i] = std::exp(v[i] - m));
  for (auto& x : out) x /= z;
  return out;
}

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Parameters of a network as doubles, addressed by name.
struct Params {
  const a2cr::ParamSet* layout = nullptr;
  std::vector<Vec> values;

  explicit Params(const a2cr::ParamSet& p) : layout(&p) {
    for (const auto& e : p) values.push_back(to_double(e.tensor.data()));
  }
  const Vec& operator()(std::string_view name) const { return values[layout->index_of(name)]; }
};

// Trunk of three conv+ReLU layers and a dense+ReLU layer on one state.
inline Vec trunk(const Params& p, const a2cr::NetConfig& c, const Vec& state) {
  Vec h = state;
  std::size_t ch = c.stack;
  std::size_t hh = c.height;
  std::size_t ww = c.width;
  for (int i = 0; i < 3; ++i) {
    const std::string base = "trunk.conv" + std::to_string(i + 1);
    std::size_t oh = 0;
    std::size_t ow = 0;
    const Vec& b = p(base + ".bias");
    h = relu(conv2d(h, ch, hh, ww, p(base + ".kernel"), c.conv_channels[static_cast<std::size_t>(i)],
                    c.conv_kernels[static_cast<std::size_t>(i)], c.conv_kernels[static_cast<std::size_t>(i)],
                    c.conv_strides[static_cast<std::size_t>(i)], &b, oh, ow));
    ch = c.conv_channels[static_cast<std::size_t>(i)];
    hh = oh;
    ww = ow;
  }
  return relu(dense(h, p("trunk.fc.weight"), p("trunk.fc.bias")));
}

inline Vec reasoner_logits(const Params& p, const a2cr::NetConfig& c, const Vec& delta) {
  const Vec f = trunk(p, c, delta);
  const Vec h1 = relu(dense(f, p("head.fc1.weight"), p("head.fc1.bias")));
  const Vec h2 = relu(dense(h1, p("head.fc2.weight"), p("head.fc2.bias")));
  return dense(h2, p("head.fc3.weight"), p("head.fc3.bias"));
}

struct PolicyValueOut {
  Vec logits;
  double value = 0.0;
};

inline PolicyValueOut policy_value(const Params& p, const a2cr::NetConfig& c, const Vec& state) {
  const Vec f = trunk(p, c, state);
  PolicyValueOut out;
  out.logits = dense(relu(dense(f, p("policy.fc1.weight"), p("policy.fc1.bias"))), p("policy.fc2.weight"),
                     p("policy.fc2.bias"));
  out.value = dense(relu(dense(f, p("value.fc1.weight"), p("value.fc1.bias"))), p("value.fc2.weight"),
                    p("value.fc2.bias"))[0];
  return out;
}

// Direct O(N^2) two-dimensional DFT per output bin (O(N^4) overall).
inline std::vector<std::complex<double>> dft2(const std::vector<std::complex<double>>& x, std::size_t w,
                                              std::size_t h, bool inverse) {
  std::vector<std::complex<double>> out(w * h);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t v = 0; v < h; ++v) {
    for (std::size_t u = 0; u < w; ++u) {
      std::complex<double> s{};
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double ang = sign * 2.0 * std::numbers::pi *
                             (static_cast<double>(u * xx) / static_cast<double>(w) +
                              static_cast<double>(v * y) / static_cast<double>(h));
          s += x[y * w + xx] * std::polar(1.0, ang);
        }
      }
      out[v * w + u] = inverse ? s / static_cast<double>(w * h) : s;
    }
  }
  return out;
}

// Three-region S_e by explicit region bookkeeping: a pixel of prev at (px, py)
// is matched by next at (px - dx, py - dy) when that lies inside the frame.
struct Regions {
  double common = 0.0;
  double disappeared = 0.0;
  double appeared = 0.0;
};

inline Regions exploration_regions(std::span<const float> prev, std::span<const float> next, int w, int h, int dx,
                                   int dy) {
  double common = 0.0;
  double gone = 0.0;
  double fresh = 0.0;
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      const int nx = px - dx;
      const int ny = py - dy;
      const double pv = prev[static_cast<std::size_t>(py * w + px)];
      if (nx >= 0 && nx < w && ny >= 0 && ny < h) {
        const double d = next[static_cast<std::size_t>(ny * w + nx)] - pv;
        common += d * d;
      } else {
        gone += pv * pv;
      }
    }
  }
  for (int ny = 0; ny < h; ++ny) {
    for (int nx = 0; nx < w; ++nx) {
      const int px = nx + dx;
      const int py = ny + dy;
      if (px < 0 || px >= w || py < 0 || py >= h) {
        const double v = next[static_cast<std::size_t>(ny * w + nx)];
        fresh += v * v;
      }
    }
  }
  return {std::sqrt(common), std::sqrt(gone), std::sqrt(fresh)};
}

// Reduced network on 2x16x16 inputs; keeps double-precision oracles cheap.
inline a2cr::NetConfig small_net_config() {
  a2cr::NetConfig c;
  c.stack = 2;
  c.height = 16;
  c.width = 16;
  c.conv_channels = {4, 6, 5};
  c.conv_kernels = {4, 3, 2};
  c.conv_strides = {2, 2, 1};
  c.trunk_features = 16;
  c.head_hidden = 12;
  c.reasoner_hidden = 8;
  return c;
}

struct FdSample {
  std::size_t tensor = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central differences of `objective` at up to `per_tensor` random coordinates
// of every parameter tensor, compared with the gradients stored in `params`.
// Coordinates whose stencil flips a ReLU are redrawn and counted in `skipped`.
template <class F>
std::vector<FdSample> fd_parameter_samples(const a2cr::ParamSet& params, const Params& base, F&& objective,
                                           std::mt19937_64& rng, int per_tensor, double h, std::size_t& skipped) {
  std::vector<FdSample> out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const auto grad = params[t].grad();
    std::uniform_int_distribution<std::size_t> pick(0, grad.size() - 1);
    int taken = 0;
    for (int attempt = 0; taken < per_tensor && attempt < 20 * per_tensor; ++attempt) {
      const std::size_t j = pick(rng);
      Params p = base;
      p.values[t][j] += h;
      const auto [up, up_pattern] = with_pattern([&] { return objective(p); });
      p.values[t][j] -= 2 * h;
      const auto [down, down_pattern] = with_pattern([&] { return objective(p); });
      if (up_pattern != down_pattern) {
        ++skipped;
        continue;
      }
      out.push_back({t, j, grad[j], (up - down) / (2 * h)});
      ++taken;
    }
  }
  return out;
}

// Relative error with an exact-zero guard: identical values give 0.
inline double rel_error(double a, double b) {
  const double d = std::max(std::abs(a), std::abs(b));
  return d == 0.0 ? 0.0 : std::abs(a - b) / d;
}

}  // namespace oracle
