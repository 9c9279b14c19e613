#include "dannet/gradcheck.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "dannet/adversarial.hpp"
#include "dannet/densenet.hpp"
#include "dannet/rng.hpp"

namespace dannet {

namespace {

Tensor<double> random_input(Rng& rng, int b, int c, int h, int w) {
  Tensor<double> t({b, c, h, w});
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

std::vector<int> random_targets(Rng& rng, int b, int k) {
  std::vector<int> t(static_cast<size_t>(b));
  for (auto& v : t) v = static_cast<int>(rng.uniform_int(k));
  return t;
}

}  // namespace

GradCheckReport gradcheck_tiny_densenet(uint64_t seed, bool corrupt_conv_backward) {
  DenseNetConfig cfg;
  cfg.num_blocks = 2;
  cfg.layers_per_block = 2;
  cfg.growth_rate = 4;
  cfg.compression = 0.5;
  cfg.initial_channels = 6;
  cfg.input_channels = 3;
  cfg.num_classes = 5;

  DenseNetModel<double> model = DenseNetModel<double>::build(cfg, seed);
  Rng rng = Rng(seed).derive("gradcheck");
  const Tensor<double> input = random_input(rng, 2, cfg.input_channels, 8, 7);
  const std::vector<int> targets = random_targets(rng, 2, cfg.num_classes);

  auto loss_value = [&]() {
    Graph<double> g;
    auto in = g.input(input);
    auto logits = model.forward(g, in, Mode::kTrain);
    return g.value(g.softmax_cross_entropy(logits, targets))[0];
  };

  // Analytic gradients.
  model.params().zero_grads();
  {
    Graph<double> g;
    g.corrupt_conv_backward = corrupt_conv_backward;
    auto in = g.input(input);
    auto logits = model.forward(g, in, Mode::kTrain);
    auto loss = g.softmax_cross_entropy(logits, targets);
    g.backward(loss);
    g.accumulate_param_grads(model.params());
  }

  // Global gradient scale, for the denominator floor below. A group whose
  // true gradient is exactly zero (the stem bias feeds a batch norm, which
  // cancels it) would otherwise compare roundoff against roundoff.
  double global_scale = 1e-12;
  for (auto& [name, p] : model.params())
    for (auto v : p.grad.data) global_scale = std::max(global_scale, std::fabs(static_cast<double>(v)));

  const double h = 1e-6;
  GradCheckReport report;
  report.threshold = 1e-3;
  for (auto& [name, p] : model.params()) {
    if (!p.trainable) continue;
    GradCheckGroup group;
    group.name = name;
    group.elements = p.value.numel();
    std::vector<double> fd(p.value.data.size());
    for (size_t i = 0; i < p.value.data.size(); ++i) {
      const double saved = p.value.data[i];
      p.value.data[i] = saved + h;
      const double lp = loss_value();
      p.value.data[i] = saved - h;
      const double lm = loss_value();
      p.value.data[i] = saved;
      fd[i] = (lp - lm) / (2.0 * h);
    }
    double scale = 1e-6 * global_scale;
    for (size_t i = 0; i < fd.size(); ++i) {
      scale = std::max(scale, std::fabs(fd[i]));
      scale = std::max(scale, std::fabs(static_cast<double>(p.grad.data[i])));
    }
    for (size_t i = 0; i < fd.size(); ++i)
      group.max_rel_err =
          std::max(group.max_rel_err, std::fabs(static_cast<double>(p.grad.data[i]) - fd[i]) / scale);
    if (group.max_rel_err > report.max_rel_err) {
      report.max_rel_err = group.max_rel_err;
      report.worst_group = name;
    }
    report.groups.push_back(std::move(group));
  }
  report.passed = report.max_rel_err < report.threshold;
  return report;
}

int64_t ulp_distance(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<int64_t>::max();
  if (a == b) return 0;
  auto ordered = [](double x) {
    uint64_t u;
    std::memcpy(&u, &x, sizeof(u));
    if (u & 0x8000000000000000ULL) return -static_cast<int64_t>(u & 0x7fffffffffffffffULL);
    return static_cast<int64_t>(u);
  };
  const __int128 d = static_cast<__int128>(ordered(a)) - static_cast<__int128>(ordered(b));
  const __int128 mag = d < 0 ? -d : d;
  if (mag > std::numeric_limits<int64_t>::max()) return std::numeric_limits<int64_t>::max();
  return static_cast<int64_t>(mag);
}

EquivalenceReport check_update_equivalence(const std::vector<double>& lambdas, int num_models, uint64_t seed) {
  EquivalenceReport report;
  for (double lambda : lambdas) {
    EquivalencePoint point;
    point.lambda = lambda;
    for (int m = 0; m < num_models; ++m) {
      Rng rng = Rng(seed).derive("equivalence").derive(static_cast<uint64_t>(m));
      DenseNetConfig cfg;
      cfg.num_blocks = 1 + static_cast<int>(rng.uniform_int(2));
      cfg.layers_per_block = 1 + static_cast<int>(rng.uniform_int(2));
      cfg.growth_rate = 2 + static_cast<int>(rng.uniform_int(3));
      cfg.compression = (rng.uniform_int(2) == 0) ? 0.5 : 1.0;
      cfg.initial_channels = 3 + static_cast<int>(rng.uniform_int(4));
      cfg.input_channels = 3;
      cfg.num_classes = 2 + static_cast<int>(rng.uniform_int(3));
      const int num_domains = 2 + static_cast<int>(rng.uniform_int(2));

      AdversarialConfig acfg;
      acfg.lambda = lambda;
      acfg.epsilon = 1e-3;
      acfg.domain_hidden = static_cast<int>(rng.uniform_int(2));
      acfg.domain_hidden_units = 8;

      const uint64_t model_seed = rng.next_u64();
      AdversarialModel<double> grl_model = AdversarialModel<double>::build(cfg, num_domains, acfg, model_seed);
      AdversarialModel<double> explicit_model = grl_model;

      LabeledBatch<double> batch;
      const int b = 3;
      const int h = 6 + static_cast<int>(rng.uniform_int(3));
      const int w = 5 + static_cast<int>(rng.uniform_int(3));
      batch.input = random_input(rng, b, cfg.input_channels, h, w);
      batch.labels = random_targets(rng, b, cfg.num_classes);
      batch.domains = random_targets(rng, b, num_domains);

      grl_model.adversarial_step(batch, UpdateRule::kGrl);
      explicit_model.adversarial_step(batch, UpdateRule::kExplicit);

      auto compare = [&](const ParameterSet<double>& a, const ParameterSet<double>& bset) {
        for (const auto& [name, pa] : a) {
          const auto& pb = bset.at(name);
          for (size_t i = 0; i < pa.value.data.size(); ++i) {
            const double u = static_cast<double>(ulp_distance(pa.value.data[i], pb.value.data[i]));
            if (u > point.max_ulp) {
              point.max_ulp = u;
              point.worst_param = name;
            }
          }
        }
      };
      compare(grl_model.net().params(), explicit_model.net().params());
      compare(grl_model.domain_params(), explicit_model.domain_params());
    }
    report.max_ulp = std::max(report.max_ulp, point.max_ulp);
    report.points.push_back(std::move(point));
  }
  report.passed = report.max_ulp <= 1.0;
  return report;
}

}  // namespace dannet
