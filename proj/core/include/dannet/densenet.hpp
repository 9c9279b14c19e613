#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dannet/graph.hpp"
#include "dannet/params.hpp"

namespace dannet {

/// Architecture hyperparameters. Defaults follow the reference recipe:
/// 4 dense blocks of 14 3x3 conv layers, growth rate 12, compression 0.5,
/// and a 3-channel input (static log-Mel plus its two time derivatives).
struct DenseNetConfig {
  int num_blocks = 4;
  int layers_per_block = 14;
  int growth_rate = 12;
  double compression = 0.5;
  int initial_channels = 24;  // stem conv output channels
  int input_channels = 3;
  int num_classes = 10;

  void validate() const;
};

struct ConvShape {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
};

/// Channel bookkeeping for every conv layer, as a pure function of the
/// config. Layer n of a block sees c_block_in + growth_rate*(n-1) channels;
/// a transition maps y channels to floor(compression*y).
std::vector<ConvShape> count_feature_maps(const DenseNetConfig& cfg);

/// Number of weighted layers: stem + block convs + transition convs + the
/// affine classifier.
int weighted_depth(const DenseNetConfig& cfg);

struct ForwardTrace {
  std::vector<ConvShape> convs;
  std::map<std::string, int> stage_outputs;  // stage name -> graph node id
};

/// DenseNet classifier: stem conv, dense blocks separated by transitions
/// (BN -> ReLU -> 1x1 conv -> 2x2 average pool), then BN -> ReLU -> global
/// average pool -> affine logits.
template <typename Real>
class DenseNetModel {
 public:
  using NodeId = typename Graph<Real>::NodeId;

  static DenseNetModel build(const DenseNetConfig& cfg, uint64_t seed);

  NodeId forward(Graph<Real>& g, NodeId in, Mode mode, ForwardTrace* trace = nullptr);
  /// Single dense block: layer n applies BN -> ReLU -> 3x3 conv to the
  /// concatenation of the block input and all previous layer outputs.
  NodeId forward_block(Graph<Real>& g, NodeId x0, int block_index, Mode mode, ForwardTrace* trace = nullptr);
  NodeId forward_transition(Graph<Real>& g, NodeId x, int trans_index, Mode mode, ForwardTrace* trace = nullptr);

  /// Eval-mode logits on a fresh graph.
  Tensor<Real> forward_eval(const Tensor<Real>& input);

  ParameterSet<Real>& params() { return params_; }
  const ParameterSet<Real>& params() const { return params_; }
  const DenseNetConfig& config() const { return cfg_; }

  /// Stage names in forward order: stem, block1, trans1, block2, ...
  const std::vector<std::string>& stages() const { return stages_; }
  uint64_t seed() const { return seed_; }

 private:
  NodeId bn_relu(Graph<Real>& g, const std::string& prefix, NodeId x, Mode mode);
  NodeId conv(Graph<Real>& g, const std::string& prefix, NodeId x, Pad pad, ForwardTrace* trace);
  RunningStats<Real> stats_of(const std::string& prefix);

  DenseNetConfig cfg_;
  uint64_t seed_ = 0;
  ParameterSet<Real> params_;
  std::vector<std::string> stages_;
};

/// Seeds each tensor from (seed, name), so a parameter's initial values do
/// not depend on what else exists in the model.
template <typename Real>
void init_parameter(Tensor<Real>& t, const std::string& name, uint64_t seed, const std::string& kind,
                    int fan_in);

using DenseNetModelF = DenseNetModel<float>;
using DenseNetModelD = DenseNetModel<double>;

}  // namespace dannet
