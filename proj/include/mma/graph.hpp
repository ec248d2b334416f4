#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mma/tensor.hpp"

namespace mma {

using NodeId = std::size_t;

enum class OpKind { leaf, affine, conv2d, relu, maxpool2d, softmax, log, sum, scale, multiply, add, flatten };

const char* op_name(OpKind kind);

/// Raised for malformed graphs and shape mismatches; the message names the node.
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reverse-mode differentiable expression graph.
///
/// Nodes are appended in topological order: every operation refers only to
/// nodes that already exist. Leaves are bound by name at `forward`, which
/// evaluates every node and caches the activations consumed by `backward`.
///
/// Layouts: affine takes x[N,in], w[out,in], b[out]; conv2d and maxpool2d
/// take NCHW batches with weights [O,C,k,k]; softmax normalises the last
/// axis; flatten keeps the leading (batch) axis.
class ComputeGraph {
 public:
  NodeId leaf(std::string name);
  NodeId affine(NodeId x, NodeId weight, NodeId bias);
  NodeId conv2d(NodeId x, NodeId weight, NodeId bias, std::size_t stride, std::size_t padding);
  NodeId relu(NodeId x);
  NodeId maxpool2d(NodeId x, std::size_t kernel, std::size_t stride);
  NodeId softmax(NodeId x);
  /// log(max(x, floor)); the floor keeps the log finite at zero probabilities.
  NodeId log(NodeId x, double floor = 0.0);
  NodeId sum(NodeId x);
  NodeId scale(NodeId x, double factor);
  NodeId multiply(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId flatten(NodeId x);

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }

  /// Evaluates every node; returns the value of the most recently added node.
  const Tensor& forward(const TensorMap& bindings);
  /// As above, looking leaves up in `bindings` first and then in `more`.
  const Tensor& forward(const TensorMap& bindings, const TensorMap& more);

  /// Cached activation from the last forward pass.
  const Tensor& value(NodeId id) const;

  /// Gradient of the scalar `loss` node with respect to every leaf, keyed by leaf name.
  TensorMap backward(NodeId loss) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> parents;
    std::string name;
    double scalar = 0.0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
  };

  NodeId append(Node node);
  [[noreturn]] void fail(NodeId id, const std::string& what) const;
  Tensor evaluate(NodeId id) const;
  void propagate(NodeId id, const Tensor& grad, std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> values_;
  bool evaluated_ = false;
};

}  // namespace mma
