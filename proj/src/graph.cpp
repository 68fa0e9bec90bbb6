#include "a2cr/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "a2cr/error.hpp"

namespace a2cr {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t out_channels, kh, kw, stride;
  std::size_t out_h, out_w;
  bool batched;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& k, int stride) {
  if (stride < 1) throw ShapeError("conv2d stride must be positive");
  if (k.size() != 4) throw ShapeError("conv2d kernels must be rank 4 [out,in,kh,kw], got " + to_string(k));
  ConvGeometry g{};
  g.batched = x.size() == 4;
  if (x.size() == 3) {
    g.batch = 1;
    g.channels = x[0];
    g.height = x[1];
    g.width = x[2];
  } else if (x.size() == 4) {
    g.batch = x[0];
    g.channels = x[1];
    g.height = x[2];
    g.width = x[3];
  } else {
    throw ShapeError("conv2d input must be [C,H,W] or [B,C,H,W], got " + to_string(x));
  }
  if (k[1] != g.channels) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(x) + " vs kernels " + to_string(k));
  }
  g.out_channels = k[0];
  g.kh = k[2];
  g.kw = k[3];
  g.stride = static_cast<std::size_t>(stride);
  if (g.height < g.kh || g.width < g.kw) {
    throw ShapeError("conv2d input " + to_string(x) + " smaller than kernel " + to_string(k));
  }
  g.out_h = (g.height - g.kh) / g.stride + 1;
  g.out_w = (g.width - g.kw) / g.stride + 1;
  return g;
}

void im2col(const float* img, const ConvGeometry& g, float* cols) {
  const std::size_t p = g.positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const float* plane = img + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
        float* dst = cols + row * p;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const float* src = plane + (oy * g.stride + ky) * g.width + kx;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[oy * g.out_w + ox] = src[ox * g.stride];
        }
      }
    }
  }
}

void col2im_add(const float* cols, const ConvGeometry& g, float* img) {
  const std::size_t p = g.positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    float* plane = img + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
        const float* src = cols + row * p;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          float* dst = plane + (oy * g.stride + ky) * g.width + kx;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[ox * g.stride] += src[oy * g.out_w + ox];
        }
      }
    }
  }
}

std::pair<std::size_t, std::size_t> rows_cols(const Shape& s) {
  if (s.empty()) return {1, 1};
  const std::size_t n = s.back();
  return {n == 0 ? 0 : numel(s) / n, n};
}

float stable_sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

// log(1 + exp(-|x|)) without overflow.
float log1p_exp_neg_abs(float x) { return std::log1p(std::exp(-std::fabs(x))); }

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + " shape mismatch: " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

Graph::Node& Graph::push(Op op, Shape shape, std::initializer_list<Var> inputs) {
  Node n;
  n.op = op;
  n.shape = std::move(shape);
  std::size_t i = 0;
  for (Var v : inputs) {
    if (v.id >= nodes_.size()) throw ContractViolation("variable does not belong to this graph");
    n.in[i++] = v.id;
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return nodes_.back();
}

std::span<const float> Graph::data(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.view) return n.view->data();
  return n.value;
}

std::span<float> Graph::grad_buffer(std::size_t id) { return nodes_[id].grad; }

Var Graph::constant(Tensor value) {
  Node& n = push(Op::Constant, value.shape(), {});
  n.value.assign(value.data().begin(), value.data().end());
  return {nodes_.size() - 1};
}

Var Graph::input(Tensor value, bool requires_grad) {
  Node& n = push(Op::Input, value.shape(), {});
  n.value.assign(value.data().begin(), value.data().end());
  n.requires_grad = requires_grad;
  return {nodes_.size() - 1};
}

Var Graph::param(Tensor& p) {
  if (!p.has_grad()) throw ContractViolation("parameter bound for training has no gradient slot");
  Node& n = push(Op::Param, p.shape(), {});
  n.view = &p;
  n.param = &p;
  n.requires_grad = true;
  return {nodes_.size() - 1};
}

Var Graph::frozen(const Tensor& t) {
  Node& n = push(Op::Frozen, t.shape(), {});
  n.view = &t;
  return {nodes_.size() - 1};
}

Var Graph::conv2d(Var input, Var kernels, int stride) {
  const ConvGeometry g = conv_geometry(shape(input), shape(kernels), stride);
  Shape out = g.batched ? Shape{g.batch, g.out_channels, g.out_h, g.out_w} : Shape{g.out_channels, g.out_h, g.out_w};
  Node& n = push(Op::Conv2d, std::move(out), {input, kernels});
  n.attr = stride;
  const std::size_t k = g.patch();
  const std::size_t p = g.positions();
  n.saved.resize(g.batch * k * p);
  n.value.resize(g.batch * g.out_channels * p);
  const auto x = data(input.id);
  const ConstMatMap w(data(kernels.id).data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(k));
  const std::size_t in_stride = g.channels * g.height * g.width;
  for (std::size_t b = 0; b < g.batch; ++b) {
    float* cols = n.saved.data() + b * k * p;
    im2col(x.data() + b * in_stride, g, cols);
    const ConstMatMap c(cols, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    MatMap y(n.value.data() + b * g.out_channels * p, static_cast<Eigen::Index>(g.out_channels),
             static_cast<Eigen::Index>(p));
    y.noalias() = w * c;
  }
  return {nodes_.size() - 1};
}

Var Graph::add_channel_bias(Var input, Var bias) {
  const Shape xs = shape(input);
  const Shape bs = shape(bias);
  if (xs.size() < 3 || bs.size() != 1 || bs[0] != xs[xs.size() - 3]) {
    throw ShapeError("channel bias " + to_string(bs) + " does not fit " + to_string(xs));
  }
  Node& n = push(Op::ChannelBias, xs, {input, bias});
  const std::size_t channels = bs[0];
  const std::size_t plane = xs[xs.size() - 1] * xs[xs.size() - 2];
  const auto x = data(input.id);
  const auto b = data(bias.id);
  n.value.assign(x.begin(), x.end());
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] += b[(i / plane) % channels];
  return {nodes_.size() - 1};
}

Var Graph::dense(Var input, Var weights, Var bias) {
  const Shape xs = shape(input);
  const Shape ws = shape(weights);
  const Shape bs = shape(bias);
  if (ws.size() != 2 || bs.size() != 1 || bs[0] != ws[0]) {
    throw ShapeError("dense weights " + to_string(ws) + " / bias " + to_string(bs) + " inconsistent");
  }
  if ((xs.size() != 1 && xs.size() != 2) || xs.back() != ws[1]) {
    throw ShapeError("dense input " + to_string(xs) + " does not match weights " + to_string(ws));
  }
  const std::size_t batch = xs.size() == 2 ? xs[0] : 1;
  Shape out = xs.size() == 2 ? Shape{batch, ws[0]} : Shape{ws[0]};
  Node& n = push(Op::Dense, std::move(out), {input, weights, bias});
  n.value.resize(batch * ws[0]);
  const ConstMatMap x(data(input.id).data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(ws[1]));
  const ConstMatMap w(data(weights.id).data(), static_cast<Eigen::Index>(ws[0]), static_cast<Eigen::Index>(ws[1]));
  const Eigen::Map<const Eigen::RowVectorXf> b(data(bias.id).data(), static_cast<Eigen::Index>(ws[0]));
  MatMap y(n.value.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(ws[0]));
  y.noalias() = x * w.transpose();
  y.rowwise() += b;
  return {nodes_.size() - 1};
}

Var Graph::relu(Var x) {
  Node& n = push(Op::Relu, shape(x), {x});
  const auto in = data(x.id);
  n.value.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) n.value[i] = in[i] > 0.0f ? in[i] : 0.0f;
  return {nodes_.size() - 1};
}

Var Graph::sigmoid(Var x) {
  Node& n = push(Op::Sigmoid, shape(x), {x});
  const auto in = data(x.id);
  n.value.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) n.value[i] = stable_sigmoid(in[i]);
  return {nodes_.size() - 1};
}

Var Graph::softmax(Var x) {
  const auto [rows, cols] = rows_cols(shape(x));
  if (cols == 0) throw ShapeError("softmax over an empty axis");
  Node& n = push(Op::Softmax, shape(x), {x});
  const auto in = data(x.id);
  n.value.resize(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = in.data() + r * cols;
    float* dst = n.value.data() + r * cols;
    const float m = *std::max_element(src, src + cols);
    float total = 0.0f;
    for (std::size_t j = 0; j < cols; ++j) total += (dst[j] = std::exp(src[j] - m));
    for (std::size_t j = 0; j < cols; ++j) dst[j] /= total;
  }
  return {nodes_.size() - 1};
}

Var Graph::log_softmax(Var x) {
  const auto [rows, cols] = rows_cols(shape(x));
  if (cols == 0) throw ShapeError("log_softmax over an empty axis");
  Node& n = push(Op::LogSoftmax, shape(x), {x});
  const auto in = data(x.id);
  n.value.resize(in.size());
  n.saved.resize(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = in.data() + r * cols;
    const float m = *std::max_element(src, src + cols);
    float total = 0.0f;
    for (std::size_t j = 0; j < cols; ++j) total += std::exp(src[j] - m);
    const float lse = m + std::log(total);
    for (std::size_t j = 0; j < cols; ++j) {
      n.value[r * cols + j] = src[j] - lse;
      n.saved[r * cols + j] = std::exp(src[j] - lse);
    }
  }
  return {nodes_.size() - 1};
}

Var Graph::reshape(Var x, Shape new_shape) {
  if (numel(new_shape) != numel(shape(x))) {
    throw ShapeError("cannot reshape " + to_string(shape(x)) + " to " + to_string(new_shape));
  }
  Node& n = push(Op::Reshape, std::move(new_shape), {x});
  const auto in = data(x.id);
  n.value.assign(in.begin(), in.end());
  return {nodes_.size() - 1};
}

Var Graph::add(Var a, Var b) {
  require_same_shape(shape(a), shape(b), "add");
  Node& n = push(Op::Add, shape(a), {a, b});
  const auto x = data(a.id);
  const auto y = data(b.id);
  n.value.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] + y[i];
  return {nodes_.size() - 1};
}

Var Graph::sub(Var a, Var b) {
  require_same_shape(shape(a), shape(b), "sub");
  Node& n = push(Op::Sub, shape(a), {a, b});
  const auto x = data(a.id);
  const auto y = data(b.id);
  n.value.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] - y[i];
  return {nodes_.size() - 1};
}

Var Graph::mul(Var a, Var b) {
  require_same_shape(shape(a), shape(b), "mul");
  Node& n = push(Op::Mul, shape(a), {a, b});
  const auto x = data(a.id);
  const auto y = data(b.id);
  n.value.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] * y[i];
  return {nodes_.size() - 1};
}

Var Graph::scale(Var x, float c) {
  Node& n = push(Op::Scale, shape(x), {x});
  n.fattr = c;
  const auto in = data(x.id);
  n.value.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) n.value[i] = in[i] * c;
  return {nodes_.size() - 1};
}

Var Graph::square(Var x) {
  Node& n = push(Op::Square, shape(x), {x});
  const auto in = data(x.id);
  n.value.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) n.value[i] = in[i] * in[i];
  return {nodes_.size() - 1};
}

Var Graph::sum(Var x) {
  Node& n = push(Op::Sum, Shape{}, {x});
  const auto in = data(x.id);
  double total = 0.0;
  for (float f : in) total += f;
  n.value = {static_cast<float>(total)};
  return {nodes_.size() - 1};
}

Var Graph::mean(Var x) {
  const auto count = numel(shape(x));
  if (count == 0) throw ShapeError("mean of an empty tensor");
  Node& n = push(Op::Mean, Shape{}, {x});
  const auto in = data(x.id);
  double total = 0.0;
  for (float f : in) total += f;
  n.value = {static_cast<float>(total / static_cast<double>(count))};
  return {nodes_.size() - 1};
}

Var Graph::sum_last(Var x) {
  const Shape xs = shape(x);
  if (xs.empty()) throw ShapeError("sum_last of a scalar");
  const auto [rows, cols] = rows_cols(xs);
  Shape out(xs.begin(), xs.end() - 1);
  Node& n = push(Op::SumLast, std::move(out), {x});
  const auto in = data(x.id);
  n.value.assign(rows, 0.0f);
  for (std::size_t r = 0; r < rows; ++r) {
    float total = 0.0f;
    for (std::size_t j = 0; j < cols; ++j) total += in[r * cols + j];
    n.value[r] = total;
  }
  return {nodes_.size() - 1};
}

Var Graph::pick(Var x, std::vector<int> index) {
  const Shape xs = shape(x);
  if (xs.size() != 1 && xs.size() != 2) throw ShapeError("pick expects [n] or [B,n], got " + to_string(xs));
  const std::size_t rows = xs.size() == 2 ? xs[0] : 1;
  const std::size_t cols = xs.back();
  if (index.size() != rows) throw ShapeError("pick needs one index per row");
  for (int i : index) {
    if (i < 0 || static_cast<std::size_t>(i) >= cols) throw ShapeError("pick index out of range");
  }
  Node& n = push(Op::Pick, Shape{rows}, {x});
  const auto in = data(x.id);
  n.value.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) n.value[r] = in[r * cols + static_cast<std::size_t>(index[r])];
  n.index = std::move(index);
  return {nodes_.size() - 1};
}

Var Graph::bce_with_logits(Var logits, const Tensor& targets, BceMode mode) {
  const Shape ls = shape(logits);
  require_same_shape(ls, targets.shape(), "bce_with_logits");
  if (ls.empty()) throw ShapeError("bce_with_logits needs at least one class");
  const auto [rows, cols] = rows_cols(ls);
  Node& n = push(Op::Bce, Shape{}, {logits});
  n.attr = mode == BceMode::Full ? 0 : 1;
  n.saved.assign(targets.data().begin(), targets.data().end());
  const auto p = data(logits.id);
  double total = 0.0;
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const float y = n.saved[i];
    const float soft = log1p_exp_neg_abs(p[i]);
    if (mode == BceMode::Full) {
      total += std::max(p[i], 0.0f) - p[i] * y + soft;
    } else {
      total += y * (std::max(-p[i], 0.0f) + soft);
    }
  }
  n.value = {static_cast<float>(total / static_cast<double>(rows))};
  return {nodes_.size() - 1};
}

const Shape& Graph::shape(Var v) const {
  if (v.id >= nodes_.size()) throw ContractViolation("variable does not belong to this graph");
  return nodes_[v.id].shape;
}

std::span<const float> Graph::value(Var v) const {
  shape(v);
  return data(v.id);
}

float Graph::scalar(Var v) const {
  const auto d = value(v);
  if (d.size() != 1) throw ContractViolation("node is not scalar: " + to_string(shape(v)));
  return d[0];
}

std::span<const float> Graph::grad(Var v) const {
  shape(v);
  return nodes_[v.id].grad;
}

void Graph::backward(Var loss, GradSink sink) {
  if (numel(shape(loss)) != 1) throw ContractViolation("backward requires a scalar loss, got " + to_string(shape(loss)));
  const float one = 1.0f;
  backward(loss, std::span<const float>(&one, 1), sink);
}

void Graph::backward(Var output, std::span<const float> seed, GradSink sink) {
  if (seed.size() != numel(shape(output))) throw ShapeError("backward seed does not match output shape");
  for (std::size_t i = 0; i <= output.id; ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad) {
      n.grad.assign(numel(n.shape), 0.0f);
    } else {
      n.grad.clear();
    }
  }
  if (!nodes_[output.id].requires_grad) return;
  std::copy(seed.begin(), seed.end(), nodes_[output.id].grad.begin());
  run_backward(output.id, sink);
}

void Graph::run_backward(std::size_t from, GradSink sink) {
  for (std::size_t i = from + 1; i-- > 0;) {
    if (nodes_[i].requires_grad) backward_node(i);
  }
  if (sink == GradSink::Parameter) flush_param_grads();
}

void Graph::flush_param_grads() {
  for (Node& n : nodes_) {
    if (n.op != Op::Param || n.grad.empty()) continue;
    auto dst = n.param->grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
    n.grad.clear();
  }
}

void Graph::backward_node(std::size_t id) {
  Node& n = nodes_[id];
  const FloatBuffer& dy = n.grad;
  auto wants = [this](std::size_t input) { return nodes_[input].requires_grad; };

  switch (n.op) {
    case Op::Constant:
    case Op::Input:
    case Op::Param:
    case Op::Frozen:
      return;

    case Op::Conv2d: {
      const ConvGeometry g = conv_geometry(nodes_[n.in[0]].shape, nodes_[n.in[1]].shape, n.attr);
      const auto k = static_cast<Eigen::Index>(g.patch());
      const auto p = static_cast<Eigen::Index>(g.positions());
      const auto oc = static_cast<Eigen::Index>(g.out_channels);
      const bool want_x = wants(n.in[0]);
      const bool want_w = wants(n.in[1]);
      const ConstMatMap w(data(n.in[1]).data(), oc, k);
      std::vector<float> dcols(want_x ? g.patch() * g.positions() : 0);
      const std::size_t in_stride = g.channels * g.height * g.width;
      for (std::size_t b = 0; b < g.batch; ++b) {
        const ConstMatMap dout(dy.data() + b * g.out_channels * g.positions(), oc, p);
        if (want_w) {
          const ConstMatMap cols(n.saved.data() + b * g.patch() * g.positions(), k, p);
          MatMap dw(grad_buffer(n.in[1]).data(), oc, k);
          dw.noalias() += dout * cols.transpose();
        }
        if (want_x) {
          MatMap dc(dcols.data(), k, p);
          dc.noalias() = w.transpose() * dout;
          col2im_add(dcols.data(), g, grad_buffer(n.in[0]).data() + b * in_stride);
        }
      }
      return;
    }

    case Op::ChannelBias: {
      const Shape& xs = n.shape;
      const std::size_t channels = nodes_[n.in[1]].shape[0];
      const std::size_t plane = xs[xs.size() - 1] * xs[xs.size() - 2];
      if (wants(n.in[0])) {
        auto dx = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      }
      if (wants(n.in[1])) {
        auto db = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < dy.size(); ++i) db[(i / plane) % channels] += dy[i];
      }
      return;
    }

    case Op::Dense: {
      const Shape& ws = nodes_[n.in[1]].shape;
      const auto m = static_cast<Eigen::Index>(ws[0]);
      const auto in_dim = static_cast<Eigen::Index>(ws[1]);
      const auto batch = static_cast<Eigen::Index>(dy.size() / ws[0]);
      const ConstMatMap dout(dy.data(), batch, m);
      if (wants(n.in[0])) {
        const ConstMatMap w(data(n.in[1]).data(), m, in_dim);
        MatMap dx(grad_buffer(n.in[0]).data(), batch, in_dim);
        dx.noalias() += dout * w;
      }
      if (wants(n.in[1])) {
        const ConstMatMap x(data(n.in[0]).data(), batch, in_dim);
        MatMap dw(grad_buffer(n.in[1]).data(), m, in_dim);
        dw.noalias() += dout.transpose() * x;
      }
      if (wants(n.in[2])) {
        Eigen::Map<Eigen::RowVectorXf> db(grad_buffer(n.in[2]).data(), m);
        db += dout.colwise().sum();
      }
      return;
    }

    case Op::Relu: {
      const auto x = data(n.in[0]);
      auto dx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (x[i] > 0.0f) dx[i] += dy[i];
      }
      return;
    }

    case Op::Sigmoid: {
      auto dx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * n.value[i] * (1.0f - n.value[i]);
      return;
    }

    case Op::Softmax: {
      const auto [rows, cols] = rows_cols(n.shape);
      auto dx = grad_buffer(n.in[0]);
      for (std::size_t r = 0; r < rows; ++r) {
        const float* y = n.value.data() + r * cols;
        const float* g = dy.data() + r * cols;
        float dot = 0.0f;
        for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < cols; ++j) dx[r * cols + j] += y[j] * (g[j] - dot);
      }
      return;
    }

    case Op::LogSoftmax: {
      const auto [rows, cols] = rows_cols(n.shape);
      auto dx = grad_buffer(n.in[0]);
      for (std::size_t r = 0; r < rows; ++r) {
        const float* prob = n.saved.data() + r * cols;
        const float* g = dy.data() + r * cols;
        float total = 0.0f;
        for (std::size_t j = 0; j < cols; ++j) total += g[j];
        for (std::size_t j = 0; j < cols; ++j) dx[r * cols + j] += g[j] - prob[j] * total;
      }
      return;
    }

    case Op::Reshape:
    case Op::Add: {
      auto dx = grad_buffer(n.in[0]);
      if (wants(n.in[0])) {
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      }
      if (n.op == Op::Add && wants(n.in[1])) {
        auto db = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
      }
      return;
    }

    case Op::Sub: {
      if (wants(n.in[0])) {
        auto da = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (wants(n.in[1])) {
        auto db = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
      }
      return;
    }

    case Op::Mul: {
      const auto a = data(n.in[0]);
      const auto b = data(n.in[1]);
      if (wants(n.in[0])) {
        auto da = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b[i];
      }
      if (wants(n.in[1])) {
        auto db = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
      }
      return;
    }

    case Op::Scale: {
      auto dx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * n.fattr;
      return;
    }

    case Op::Square: {
      const auto x = data(n.in[0]);
      auto dx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += 2.0f * x[i] * dy[i];
      return;
    }

    case Op::Sum:
    case Op::Mean: {
      auto dx = grad_buffer(n.in[0]);
      const float g = n.op == Op::Sum ? dy[0] : dy[0] / static_cast<float>(dx.size());
      for (auto& v : dx) v += g;
      return;
    }

    case Op::SumLast: {
      const auto [rows, cols] = rows_cols(nodes_[n.in[0]].shape);
      auto dx = grad_buffer(n.in[0]);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) dx[r * cols + j] += dy[r];
      }
      return;
    }

    case Op::Pick: {
      const std::size_t cols = nodes_[n.in[0]].shape.back();
      auto dx = grad_buffer(n.in[0]);
      for (std::size_t r = 0; r < n.index.size(); ++r) dx[r * cols + static_cast<std::size_t>(n.index[r])] += dy[r];
      return;
    }

    case Op::Bce: {
      const auto p = data(n.in[0]);
      const auto [rows, cols] = rows_cols(nodes_[n.in[0]].shape);
      auto dx = grad_buffer(n.in[0]);
      const float g = dy[0] / static_cast<float>(rows);
      for (std::size_t i = 0; i < rows * cols; ++i) {
        const float s = stable_sigmoid(p[i]);
        const float y = n.saved[i];
        dx[i] += g * (n.attr == 0 ? s - y : y * (s - 1.0f));
      }
      return;
    }
  }
}

}  // namespace a2cr
