#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dannet/densenet.hpp"
#include "dannet/graph.hpp"

namespace dannet {

struct AdversarialConfig {
  double lambda = 0.5;    // gradient reversal coefficient
  double epsilon = 0.01;  // SGD step size
  std::string shared_split = "stem";  // last stage owned by the shared network
  int domain_hidden = 0;              // hidden affine+ReLU layers in the domain head
  int domain_hidden_units = 32;
};

template <typename Real>
struct LabeledBatch {
  Tensor<Real> input;  // [B,3,H,W]
  std::vector<int> labels;
  std::vector<int> domains;
};

struct StepReport {
  double loss_y = 0.0;
  double loss_z = 0.0;
  std::map<char, double> grad_norms;  // subset tag ('x','y','z') -> L2 norm
};

/// How the shared parameters receive their update.
/// kGrl: one backward pass of loss_y + loss_z through a reversal layer.
/// kExplicit: two backward passes combined as d_y - lambda * d_z.
/// Both realize the same update; the pair is kept so tests can compare them.
enum class UpdateRule { kGrl, kExplicit };

/// DenseNet trunk plus a domain classifier head attached to the shared
/// stage output through a gradient reversal layer. Parameters split into
/// x (shared), y (label path), z (domain head); the reversal layer itself
/// owns none.
template <typename Real>
class AdversarialModel {
 public:
  using NodeId = typename Graph<Real>::NodeId;

  static AdversarialModel build(const DenseNetConfig& cfg, int num_domains, const AdversarialConfig& acfg,
                                uint64_t seed);

  /// One SGD step on a batch; losses are batch sums evaluated pre-step.
  StepReport adversarial_step(const LabeledBatch<Real>& batch, UpdateRule rule = UpdateRule::kGrl);
  /// Label-only step; the domain head is left untouched.
  StepReport plain_step(const LabeledBatch<Real>& batch);

  /// Label logits through shared + label path only (eval mode).
  Tensor<Real> predict_labels(const Tensor<Real>& input);
  /// Domain logits, diagnostic only (eval mode).
  Tensor<Real> predict_domains(const Tensor<Real>& input);

  char subset_of(const std::string& name) const;

  DenseNetModel<Real>& net() { return net_; }
  const DenseNetModel<Real>& net() const { return net_; }
  ParameterSet<Real>& domain_params() { return domain_params_; }
  const ParameterSet<Real>& domain_params() const { return domain_params_; }
  int num_domains() const { return num_domains_; }
  AdversarialConfig& config() { return acfg_; }
  const AdversarialConfig& config() const { return acfg_; }

  /// Builds label and domain logits on one graph. with_grl controls whether
  /// the domain branch passes through the reversal layer.
  struct JointNodes {
    NodeId label_logits;
    NodeId domain_logits;
  };
  JointNodes forward_joint(Graph<Real>& g, NodeId in, Mode mode, bool with_grl);

 private:
  NodeId domain_head(Graph<Real>& g, NodeId shared_out, bool with_grl);
  void sgd_update_all(double epsilon);

  DenseNetModel<Real> net_;
  ParameterSet<Real> domain_params_;
  AdversarialConfig acfg_;
  int num_domains_ = 2;
  int split_index_ = 0;
};

template <typename Real>
struct PatchDataset {
  Tensor<Real> patches;  // [N,3,H,W]
  std::vector<int> labels;
  std::vector<int> domains;

  int64_t size() const { return patches.rank() == 0 ? 0 : patches.dim(0); }
  LabeledBatch<Real> gather(const std::vector<int64_t>& idx) const;
};

struct TrainSchedule {
  int steps = 2000;
  int batch_size = 32;
  uint64_t seed = 1;
  int eval_every = 100;
};

struct TrainLogRow {
  int step = 0;
  double loss_y = 0.0;
  double loss_z = 0.0;
  double label_acc = 0.0;
  double domain_acc = 0.0;
};

struct TrainingLog {
  std::vector<TrainLogRow> rows;
  /// CSV with header step,loss_y,loss_z,label_acc,domain_acc.
  std::string to_csv() const;
};

struct EvalMetrics {
  double label_acc = 0.0;
  double domain_acc = 0.0;
  double mean_loss_y = 0.0;
};

template <typename Real>
EvalMetrics evaluate(AdversarialModel<Real>& model, const PatchDataset<Real>& data, int batch_size = 256);

/// Per-domain label accuracy (eval mode).
template <typename Real>
std::vector<double> per_domain_label_accuracy(AdversarialModel<Real>& model, const PatchDataset<Real>& data,
                                              int batch_size = 256);

/// Seeded mini-batch SGD driver. With adversarial disabled every step is a
/// plain label step. Rows are logged at the eval_every cadence against
/// eval_set (falling back to train_set when empty).
template <typename Real>
TrainingLog train(AdversarialModel<Real>& model, const PatchDataset<Real>& train_set,
                  const PatchDataset<Real>& eval_set, const TrainSchedule& sched, bool adversarial_enabled);

template <typename Real>
std::vector<int> argmax_rows(const Tensor<Real>& t);

using AdversarialModelF = AdversarialModel<float>;
using AdversarialModelD = AdversarialModel<double>;

}  // namespace dannet
