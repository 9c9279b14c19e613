#include "dannet/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dannet/rng.hpp"

namespace dannet {

namespace {

int channels_at_stage(const DenseNetConfig& cfg, const std::string& stage) {
  if (stage == "stem") return cfg.initial_channels;
  int c = cfg.initial_channels;
  for (int b = 1; b <= cfg.num_blocks; ++b) {
    c += cfg.growth_rate * cfg.layers_per_block;
    if (stage == "block" + std::to_string(b)) return c;
    if (b < cfg.num_blocks) {
      c = static_cast<int>(std::floor(cfg.compression * c));
      if (stage == "trans" + std::to_string(b)) return c;
    }
  }
  throw ConfigError("unknown shared_split stage: " + stage);
}

}  // namespace

template <typename Real>
AdversarialModel<Real> AdversarialModel<Real>::build(const DenseNetConfig& cfg, int num_domains,
                                                     const AdversarialConfig& acfg, uint64_t seed) {
  if (num_domains < 2) throw ConfigError("adversarial model needs at least 2 domains");
  if (acfg.lambda < 0.0) throw ConfigError("gradient reversal coefficient must be >= 0");
  AdversarialModel m;
  m.net_ = DenseNetModel<Real>::build(cfg, seed);
  m.acfg_ = acfg;
  m.num_domains_ = num_domains;

  const auto& stages = m.net_.stages();
  auto it = std::find(stages.begin(), stages.end(), acfg.shared_split);
  if (it == stages.end()) throw ConfigError("shared_split must name a model stage, got " + acfg.shared_split);
  m.split_index_ = static_cast<int>(it - stages.begin());

  int in_dim = channels_at_stage(cfg, acfg.shared_split);
  for (int h = 1; h <= acfg.domain_hidden; ++h) {
    const std::string p = "domain.hidden" + std::to_string(h);
    init_parameter(m.domain_params_.create(p + ".weight", {in_dim, acfg.domain_hidden_units}), p + ".weight",
                   seed, "weight", in_dim);
    init_parameter(m.domain_params_.create(p + ".bias", {acfg.domain_hidden_units}), p + ".bias", seed, "zero",
                   in_dim);
    in_dim = acfg.domain_hidden_units;
  }
  init_parameter(m.domain_params_.create("domain.out.weight", {in_dim, num_domains}), "domain.out.weight", seed,
                 "weight", in_dim);
  init_parameter(m.domain_params_.create("domain.out.bias", {num_domains}), "domain.out.bias", seed, "zero",
                 in_dim);
  return m;
}

template <typename Real>
char AdversarialModel<Real>::subset_of(const std::string& name) const {
  if (name.rfind("domain.", 0) == 0) return 'z';
  const std::string stage = name.substr(0, name.find('.'));
  const auto& stages = net_.stages();
  auto it = std::find(stages.begin(), stages.end(), stage);
  if (it == stages.end()) return 'y';  // head
  return (static_cast<int>(it - stages.begin()) <= split_index_) ? 'x' : 'y';
}

template <typename Real>
typename AdversarialModel<Real>::NodeId AdversarialModel<Real>::domain_head(Graph<Real>& g, NodeId shared_out,
                                                                            bool with_grl) {
  NodeId cur = with_grl ? g.grl(shared_out, static_cast<Real>(acfg_.lambda)) : shared_out;
  // The ReLU ahead of the pooling is what lets the adversarial game settle:
  // a purely linear head on the raw shared activations has no saturation,
  // and the reversed updates cycle instead of converging.
  cur = g.global_avg_pool(g.relu(cur));
  for (int h = 1; h <= acfg_.domain_hidden; ++h) {
    const std::string p = "domain.hidden" + std::to_string(h);
    NodeId w = g.param(p + ".weight", domain_params_.at(p + ".weight").value);
    NodeId b = g.param(p + ".bias", domain_params_.at(p + ".bias").value);
    cur = g.relu(g.affine(cur, w, b));
  }
  NodeId w = g.param("domain.out.weight", domain_params_.at("domain.out.weight").value);
  NodeId b = g.param("domain.out.bias", domain_params_.at("domain.out.bias").value);
  return g.affine(cur, w, b);
}

template <typename Real>
typename AdversarialModel<Real>::JointNodes AdversarialModel<Real>::forward_joint(Graph<Real>& g, NodeId in,
                                                                                  Mode mode, bool with_grl) {
  ForwardTrace trace;
  NodeId label_logits = net_.forward(g, in, mode, &trace);
  NodeId shared_out = trace.stage_outputs.at(acfg_.shared_split);
  NodeId domain_logits = domain_head(g, shared_out, with_grl);
  return {label_logits, domain_logits};
}

template <typename Real>
void AdversarialModel<Real>::sgd_update_all(double epsilon) {
  using A = Accum<Real>;
  // theta <- theta - eps * grad, computed in the accumulation precision and
  // rounded to Real exactly once.
  const A eps = static_cast<A>(static_cast<Real>(epsilon));
  auto update = [&](ParameterSet<Real>& ps) {
    for (auto& [name, p] : ps)
      if (p.trainable)
        for (size_t i = 0; i < p.value.data.size(); ++i)
          p.value.data[i] = static_cast<Real>(static_cast<A>(p.value.data[i]) - eps * p.grad.data[i]);
  };
  update(net_.params());
  update(domain_params_);
}

template <typename Real>
StepReport AdversarialModel<Real>::adversarial_step(const LabeledBatch<Real>& batch, UpdateRule rule) {
  if (batch.labels.size() != batch.domains.size() ||
      static_cast<int>(batch.labels.size()) != batch.input.dim(0))
    throw ShapeError("batch labels/domains must match the input batch dimension");

  net_.params().zero_grads();
  domain_params_.zero_grads();

  StepReport report;
  if (rule == UpdateRule::kGrl) {
    Graph<Real> g;
    NodeId in = g.input(batch.input);
    JointNodes j = forward_joint(g, in, Mode::kTrain, /*with_grl=*/true);
    NodeId loss_y = g.softmax_cross_entropy(j.label_logits, batch.labels);
    NodeId loss_z = g.softmax_cross_entropy(j.domain_logits, batch.domains);
    NodeId total = g.add(loss_y, loss_z);
    report.loss_y = static_cast<double>(g.value(loss_y)[0]);
    report.loss_z = static_cast<double>(g.value(loss_z)[0]);
    g.backward(total);
    g.accumulate_param_grads(net_.params());
    g.accumulate_param_grads(domain_params_);
  } else {
    Graph<Real> g;
    NodeId in = g.input(batch.input);
    JointNodes j = forward_joint(g, in, Mode::kTrain, /*with_grl=*/false);
    NodeId loss_y = g.softmax_cross_entropy(j.label_logits, batch.labels);
    NodeId loss_z = g.softmax_cross_entropy(j.domain_logits, batch.domains);
    report.loss_y = static_cast<double>(g.value(loss_y)[0]);
    report.loss_z = static_cast<double>(g.value(loss_z)[0]);

    // d(loss_y)/d(theta): label path and shared stem.
    using A = Accum<Real>;
    g.backward(loss_y);
    g.accumulate_param_grads(net_.params());
    std::map<std::string, Tensor<A>> grad_y;
    for (auto& [name, p] : net_.params()) grad_y.emplace(name, p.grad);

    // d(loss_z)/d(theta): domain head and shared stem.
    net_.params().zero_grads();
    g.backward(loss_z);
    g.accumulate_param_grads(net_.params());
    g.accumulate_param_grads(domain_params_);

    // theta_x gets d_y - lambda * d_z; theta_y keeps d_y; theta_z keeps d_z.
    const A lambda = static_cast<A>(static_cast<Real>(acfg_.lambda));
    for (auto& [name, p] : net_.params()) {
      const char tag = subset_of(name);
      const Tensor<A>& gy = grad_y.at(name);
      if (tag == 'x') {
        for (size_t i = 0; i < p.grad.data.size(); ++i)
          p.grad.data[i] = gy.data[i] - lambda * p.grad.data[i];
      } else {
        p.grad = gy;
      }
    }
  }

  if (!std::isfinite(report.loss_y) || !std::isfinite(report.loss_z))
    throw DivergenceError("non-finite training loss (loss_y=" + std::to_string(report.loss_y) +
                              ", loss_z=" + std::to_string(report.loss_z) + ")",
                          -1, report.loss_y, report.loss_z);

  long double norms[3] = {0.0L, 0.0L, 0.0L};
  auto add_norms = [&](const ParameterSet<Real>& ps) {
    for (const auto& [name, p] : ps) {
      if (!p.trainable) continue;
      const int slot = subset_of(name) == 'x' ? 0 : (subset_of(name) == 'y' ? 1 : 2);
      for (auto v : p.grad.data) norms[slot] += static_cast<long double>(v) * static_cast<long double>(v);
    }
  };
  add_norms(net_.params());
  add_norms(domain_params_);
  report.grad_norms['x'] = static_cast<double>(std::sqrt(norms[0]));
  report.grad_norms['y'] = static_cast<double>(std::sqrt(norms[1]));
  report.grad_norms['z'] = static_cast<double>(std::sqrt(norms[2]));

  sgd_update_all(acfg_.epsilon);
  return report;
}

template <typename Real>
StepReport AdversarialModel<Real>::plain_step(const LabeledBatch<Real>& batch) {
  net_.params().zero_grads();
  Graph<Real> g;
  NodeId in = g.input(batch.input);
  NodeId logits = net_.forward(g, in, Mode::kTrain);
  NodeId loss_y = g.softmax_cross_entropy(logits, batch.labels);
  StepReport report;
  report.loss_y = static_cast<double>(g.value(loss_y)[0]);
  if (!std::isfinite(report.loss_y))
    throw DivergenceError("non-finite training loss (loss_y=" + std::to_string(report.loss_y) + ")", -1,
                          report.loss_y, 0.0);
  g.backward(loss_y);
  g.accumulate_param_grads(net_.params());
  using A = Accum<Real>;
  const A eps = static_cast<A>(static_cast<Real>(acfg_.epsilon));
  for (auto& [name, p] : net_.params())
    if (p.trainable)
      for (size_t i = 0; i < p.value.data.size(); ++i)
        p.value.data[i] = static_cast<Real>(static_cast<A>(p.value.data[i]) - eps * p.grad.data[i]);
  return report;
}

template <typename Real>
Tensor<Real> AdversarialModel<Real>::predict_labels(const Tensor<Real>& input) {
  return net_.forward_eval(input);
}

template <typename Real>
Tensor<Real> AdversarialModel<Real>::predict_domains(const Tensor<Real>& input) {
  Graph<Real> g;
  NodeId in = g.input(input);
  ForwardTrace trace;
  net_.forward(g, in, Mode::kEval, &trace);
  NodeId shared_out = trace.stage_outputs.at(acfg_.shared_split);
  NodeId logits = domain_head(g, shared_out, /*with_grl=*/true);
  return g.value(logits);
}

template <typename Real>
std::vector<int> argmax_rows(const Tensor<Real>& t) {
  const int B = t.dim(0), K = t.dim(1);
  std::vector<int> out(static_cast<size_t>(B));
  for (int r = 0; r < B; ++r) {
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (t.at2(r, k) > t.at2(r, best)) best = k;
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

template <typename Real>
LabeledBatch<Real> PatchDataset<Real>::gather(const std::vector<int64_t>& idx) const {
  const int C = patches.dim(1), H = patches.dim(2), W = patches.dim(3);
  const int64_t plane = static_cast<int64_t>(C) * H * W;
  LabeledBatch<Real> b;
  b.input = Tensor<Real>({static_cast<int>(idx.size()), C, H, W});
  b.labels.resize(idx.size());
  b.domains.resize(idx.size());
  for (size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(&patches.data[static_cast<size_t>(idx[r] * plane)], static_cast<size_t>(plane),
                &b.input.data[r * static_cast<size_t>(plane)]);
    b.labels[r] = labels[static_cast<size_t>(idx[r])];
    b.domains[r] = domains[static_cast<size_t>(idx[r])];
  }
  return b;
}

std::string TrainingLog::to_csv() const {
  std::ostringstream out;
  out << "step,loss_y,loss_z,label_acc,domain_acc\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.step << "," << r.loss_y << "," << r.loss_z << "," << r.label_acc << "," << r.domain_acc << "\n";
  return out.str();
}

template <typename Real>
EvalMetrics evaluate(AdversarialModel<Real>& model, const PatchDataset<Real>& data, int batch_size) {
  EvalMetrics m;
  const int64_t n = data.size();
  if (n == 0) return m;
  int64_t label_hits = 0, domain_hits = 0;
  long double loss_sum = 0.0L;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t stop = std::min(n, start + batch_size);
    std::vector<int64_t> idx(static_cast<size_t>(stop - start));
    for (int64_t i = start; i < stop; ++i) idx[static_cast<size_t>(i - start)] = i;
    LabeledBatch<Real> b = data.gather(idx);

    Tensor<Real> label_logits = model.predict_labels(b.input);
    std::vector<int> pred = argmax_rows(label_logits);
    for (size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == b.labels[i]) ++label_hits;
    {
      Graph<Real> g;
      auto lid = g.input(label_logits);
      loss_sum += static_cast<long double>(g.value(g.softmax_cross_entropy(lid, b.labels))[0]);
    }
    Tensor<Real> domain_logits = model.predict_domains(b.input);
    std::vector<int> dpred = argmax_rows(domain_logits);
    for (size_t i = 0; i < dpred.size(); ++i)
      if (dpred[i] == b.domains[i]) ++domain_hits;
  }
  m.label_acc = static_cast<double>(label_hits) / static_cast<double>(n);
  m.domain_acc = static_cast<double>(domain_hits) / static_cast<double>(n);
  m.mean_loss_y = static_cast<double>(loss_sum / static_cast<long double>(n));
  return m;
}

template <typename Real>
std::vector<double> per_domain_label_accuracy(AdversarialModel<Real>& model, const PatchDataset<Real>& data,
                                              int batch_size) {
  const int64_t n = data.size();
  std::vector<int64_t> hits, counts;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t stop = std::min(n, start + batch_size);
    std::vector<int64_t> idx(static_cast<size_t>(stop - start));
    for (int64_t i = start; i < stop; ++i) idx[static_cast<size_t>(i - start)] = i;
    LabeledBatch<Real> b = data.gather(idx);
    std::vector<int> pred = argmax_rows(model.predict_labels(b.input));
    for (size_t i = 0; i < pred.size(); ++i) {
      const size_t d = static_cast<size_t>(b.domains[i]);
      if (d >= hits.size()) {
        hits.resize(d + 1, 0);
        counts.resize(d + 1, 0);
      }
      ++counts[d];
      if (pred[i] == b.labels[i]) ++hits[d];
    }
  }
  std::vector<double> acc(hits.size(), 0.0);
  for (size_t d = 0; d < hits.size(); ++d)
    acc[d] = counts[d] > 0 ? static_cast<double>(hits[d]) / static_cast<double>(counts[d]) : 0.0;
  return acc;
}

template <typename Real>
TrainingLog train(AdversarialModel<Real>& model, const PatchDataset<Real>& train_set,
                  const PatchDataset<Real>& eval_set, const TrainSchedule& sched, bool adversarial_enabled) {
  if (train_set.size() == 0) throw DataError("training dataset is empty");
  if (sched.batch_size < 1 || sched.steps < 0 || sched.eval_every < 1)
    throw ConfigError("invalid schedule: steps >= 0, batch_size >= 1, eval_every >= 1");

  TrainingLog log;
  const int64_t n = train_set.size();
  const int64_t bs = std::min<int64_t>(sched.batch_size, n);
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  uint64_t epoch = 0;
  int64_t cursor = n;  // force shuffle on first use

  const PatchDataset<Real>& eval_data = eval_set.size() > 0 ? eval_set : train_set;

  for (int step = 1; step <= sched.steps; ++step) {
    if (cursor + bs > n) {
      Rng shuffler = Rng(sched.seed).derive("shuffle").derive(epoch);
      shuffler.shuffle(order);
      ++epoch;
      cursor = 0;
    }
    std::vector<int64_t> idx(order.begin() + cursor, order.begin() + cursor + bs);
    cursor += bs;
    LabeledBatch<Real> batch = train_set.gather(idx);

    StepReport rep;
    try {
      rep = adversarial_enabled ? model.adversarial_step(batch, UpdateRule::kGrl) : model.plain_step(batch);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step), step, e.loss_y,
                            e.loss_z);
    }

    if (step % sched.eval_every == 0) {
      EvalMetrics m = evaluate(model, eval_data);
      TrainLogRow row;
      row.step = step;
      row.loss_y = rep.loss_y;
      row.loss_z = rep.loss_z;
      row.label_acc = m.label_acc;
      row.domain_acc = adversarial_enabled ? m.domain_acc : 0.0;
      log.rows.push_back(row);
    }
  }
  return log;
}

template class AdversarialModel<float>;
template class AdversarialModel<double>;
template struct PatchDataset<float>;
template struct PatchDataset<double>;
template EvalMetrics evaluate<float>(AdversarialModel<float>&, const PatchDataset<float>&, int);
template EvalMetrics evaluate<double>(AdversarialModel<double>&, const PatchDataset<double>&, int);
template std::vector<double> per_domain_label_accuracy<float>(AdversarialModel<float>&,
                                                              const PatchDataset<float>&, int);
template std::vector<double> per_domain_label_accuracy<double>(AdversarialModel<double>&,
                                                               const PatchDataset<double>&, int);
template TrainingLog train<float>(AdversarialModel<float>&, const PatchDataset<float>&,
                                  const PatchDataset<float>&, const TrainSchedule&, bool);
template TrainingLog train<double>(AdversarialModel<double>&, const PatchDataset<double>&,
                                   const PatchDataset<double>&, const TrainSchedule&, bool);
template std::vector<int> argmax_rows<float>(const Tensor<float>&);
template std::vector<int> argmax_rows<double>(const Tensor<double>&);
template struct LabeledBatch<float>;
template struct LabeledBatch<double>;

}  // namespace dannet
