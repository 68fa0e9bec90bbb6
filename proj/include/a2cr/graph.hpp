#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "a2cr/tensor.hpp"

namespace a2cr {

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = 0;
};

enum class BceMode {
  Full,          ///< -sum[y log s(p) + (1-y) log(1-s(p))]
  PositiveOnly,  ///< -sum y log s(p)
};

/// Tape of recorded tensor operations supporting one or more reverse passes.
///
/// Nodes are appended in execution order, so the tape is topologically sorted
/// by construction and backward is a single reverse sweep. A graph and the
/// tensors bound to it are confined to one thread at a time.
///
/// Batched variants: conv2d accepts [C,H,W] or [B,C,H,W]; dense accepts [n]
/// or [B,n]; softmax-family ops act on the last axis.
class Graph {
 public:
  enum class GradSink {
    Parameter,  ///< parameter leaf gradients are added to Tensor::grad()
    Deferred,   ///< kept on the tape until flush_param_grads()
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf owned by the graph; gradients readable through grad().
  Var input(Tensor value, bool requires_grad);
  /// Leaf viewing a trainable parameter. The tensor must outlive the graph.
  Var param(Tensor& p);
  /// Leaf viewing a tensor read-only (frozen parameters); no gradient.
  Var frozen(const Tensor& t);

  Var conv2d(Var input, Var kernels, int stride);
  Var add_channel_bias(Var input, Var bias);
  Var dense(Var input, Var weights, Var bias);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var softmax(Var x);
  Var log_softmax(Var x);
  Var reshape(Var x, Shape shape);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, float c);
  Var square(Var x);
  Var sum(Var x);
  Var mean(Var x);
  /// Sums the last axis away.
  Var sum_last(Var x);
  /// out[b] = x[b, index[b]] for x of shape [B,n]; out[0] = x[index[0]] for [n].
  Var pick(Var x, std::vector<int> index);
  /// Mean over the batch of the per-sample binary cross entropy summed over classes.
  Var bce_with_logits(Var logits, const Tensor& targets, BceMode mode);

  const Shape& shape(Var v) const;
  std::span<const float> value(Var v) const;
  float scalar(Var v) const;
  /// Gradient of the most recent backward pass with respect to the node.
  std::span<const float> grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse pass from a scalar node.
  void backward(Var loss, GradSink sink = GradSink::Parameter);
  /// Reverse pass seeded with an explicit output gradient of the node's shape.
  void backward(Var output, std::span<const float> seed, GradSink sink = GradSink::Parameter);
  /// Adds deferred parameter-leaf gradients into the bound tensors.
  void flush_param_grads();

 private:
  enum class Op {
    Constant,
    Input,
    Param,
    Frozen,
    Conv2d,
    ChannelBias,
    Dense,
    Relu,
    Sigmoid,
    Softmax,
    LogSoftmax,
    Reshape,
    Add,
    Sub,
    Mul,
    Scale,
    Square,
    Sum,
    Mean,
    SumLast,
    Pick,
    Bce,
  };

  struct Node {
    Op op = Op::Constant;
    Shape shape;
    FloatBuffer value;
    const Tensor* view = nullptr;
    Tensor* param = nullptr;
    FloatBuffer grad;
    bool requires_grad = false;
    std::array<std::size_t, 3> in{};
    int attr = 0;
    float fattr = 0.0f;
    FloatBuffer saved;
    std::vector<int> index;
  };

  Node& push(Op op, Shape shape, std::initializer_list<Var> inputs);
  std::span<const float> data(std::size_t id) const;
  std::span<float> grad_buffer(std::size_t id);
  void backward_node(std::size_t id);
  void run_backward(std::size_t from, GradSink sink);

  std::vector<Node> nodes_;
};

}  // namespace a2cr
