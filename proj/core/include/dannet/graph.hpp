#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dannet/params.hpp"
#include "dannet/tensor.hpp"

namespace dannet {

enum class Pad { kSame, kValid };
enum class Mode { kTrain, kEval };

/// Non-owning view of a batch-norm layer's persistent statistics.
/// Train-mode forward updates them in place by exponential moving average.
template <typename Real>
struct RunningStats {
  Tensor<Real>* mean = nullptr;
  Tensor<Real>* var = nullptr;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Gradient reversal: forward is the identity, backward scales by -lambda.
/// These two free functions are the layer's algebra in isolation; the graph
/// op `grl` applies the same rule inside backpropagation.
template <typename Real>
Tensor<Real> grl_forward(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> grl_backward(const Tensor<Real>& upstream, Real lambda);

/// Reverse-mode tape over dense tensors.
///
/// Nodes are appended in forward order, so creation order is a topological
/// order and backward() is a single reverse sweep. One graph instance per
/// forward/backward pass; not thread-safe.
template <typename Real>
class Graph {
 public:
  using NodeId = int;

  NodeId input(Tensor<Real> value);
  /// Named leaf. Repeated calls with one name return the same node.
  NodeId param(const std::string& name, const Tensor<Real>& value);

  /// Cross-correlation with 1x1 or 3x3 kernels, stride 1.
  NodeId conv2d(NodeId x, NodeId weight, NodeId bias, Pad pad);
  NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, Mode mode, RunningStats<Real> stats);
  NodeId relu(NodeId x);
  NodeId avg_pool_2x2(NodeId x);
  NodeId concat_channels(const std::vector<NodeId>& xs);
  NodeId affine(NodeId x, NodeId weight, NodeId bias);
  NodeId global_avg_pool(NodeId x);
  NodeId flatten(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId sum(NodeId x);
  NodeId grl(NodeId x, Real lambda);
  /// Batch-summed negative log-likelihood under a softmax, max-subtracted.
  NodeId softmax_cross_entropy(NodeId logits, const std::vector<int>& targets);

  const Tensor<Real>& value(NodeId id) const { return node(id).value; }
  /// Gradient buffer; kept in the accumulation precision.
  const Tensor<Accum<Real>>& grad(NodeId id) const { return node(id).grad; }

  /// Reverse sweep from a scalar loss. Grads are reset first, so repeated
  /// calls give identical results.
  void backward(NodeId loss);

  /// Adds every named leaf's gradient into the matching ParameterSet grad.
  void accumulate_param_grads(ParameterSet<Real>& params) const;

  size_t size() const { return nodes_.size(); }
  const std::string& op_name(NodeId id) const { return node(id).op; }

  /// Test hook: perturbs conv2d weight gradients so gradient checking must
  /// flag the conv parameter group.
  bool corrupt_conv_backward = false;

 private:
  struct Node {
    std::string op;
    std::vector<NodeId> inputs;
    std::string param_name;
    Tensor<Real> value;
    Tensor<Accum<Real>> grad;
    std::function<void()> backward_fn;
  };

  Node& node(NodeId id) {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) throw ShapeError("invalid node id");
    return nodes_[static_cast<size_t>(id)];
  }
  const Node& node(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) throw ShapeError("invalid node id");
    return nodes_[static_cast<size_t>(id)];
  }
  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_cache_;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace dannet
