#include "dannet/toytask.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dannet/errors.hpp"
#include "dannet/features.hpp"
#include "dannet/graph.hpp"
#include "dannet/rng.hpp"

namespace dannet {

void ToyTaskSpec::validate() const {
  if (num_label_classes < 2 || num_domains < 2)
    throw ConfigError("toy task needs at least 2 label classes and 2 domains");
  if (samples_per_class_train < 1 || samples_per_class_test < 1)
    throw ConfigError("toy task needs at least 1 sample per cell");
  if (n_mels < 4 || patch_width < 3) throw ConfigError("toy task spectrogram too small");
  if (!domain_shift.empty() && static_cast<int>(domain_shift.size()) != num_domains)
    throw ConfigError("domain_shift must have one entry per domain");
}

namespace {

// Smooth zero-mean field: a few random low-frequency cosine components.
std::vector<double> smooth_field(Rng& rng, int rows, int cols) {
  std::vector<double> f(static_cast<size_t>(rows) * cols, 0.0);
  constexpr double kPi = 3.14159265358979323846;
  for (int comp = 0; comp < 6; ++comp) {
    const double fy = rng.uniform(0.5, 3.0), fx = rng.uniform(0.5, 3.0);
    const double py = rng.uniform(0.0, 2.0 * kPi), px = rng.uniform(0.0, 2.0 * kPi);
    const double a = rng.uniform(0.4, 1.0);
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x)
        f[static_cast<size_t>(y) * cols + x] +=
            a * std::cos(kPi * fy * y / rows + py) * std::cos(kPi * fx * x / cols + px);
  }
  double mean = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  double rms = 0.0;
  for (auto& v : f) {
    v -= mean;
    rms += v * v;
  }
  rms = std::sqrt(rms / static_cast<double>(f.size()));
  if (rms > 0.0)
    for (auto& v : f) v /= rms;
  return f;
}

std::vector<double> shift_spectrum(const ToyTaskSpec& spec) {
  // Flat component plus a smooth seeded ripple, shared by all domains; a
  // domain is characterized only by its mean gain along this direction.
  Rng rng = Rng(spec.class_template_seed).derive("shift_spectrum");
  std::vector<double> s(static_cast<size_t>(spec.n_mels));
  constexpr double kPi = 3.14159265358979323846;
  const double f = rng.uniform(0.8, 2.5), p = rng.uniform(0.0, 2.0 * kPi);
  for (int b = 0; b < spec.n_mels; ++b)
    s[static_cast<size_t>(b)] = 1.0 + 0.3 * std::cos(kPi * f * b / spec.n_mels + p);
  return s;
}

PatchDataset<double> generate_split(const ToyTaskSpec& spec, const std::vector<std::vector<double>>& templates,
                                    bool test_split) {
  const int cells = spec.num_label_classes * spec.num_domains;
  const int per_cell = test_split ? spec.samples_per_class_test : spec.samples_per_class_train;
  const int n = cells * per_cell;
  const int d = spec.n_mels, w = spec.patch_width;

  std::vector<DomainShift> shifts = spec.domain_shift;
  if (shifts.empty()) {
    shifts.resize(static_cast<size_t>(spec.num_domains));
    for (int dom = 1; dom < spec.num_domains; ++dom) shifts[static_cast<size_t>(dom)] = {1.0, 2.0};
  }

  PatchDataset<double> out;
  out.patches = Tensor<double>({n, 3, d, w});
  out.labels.resize(static_cast<size_t>(n));
  out.domains.resize(static_cast<size_t>(n));

  const auto spectrum = shift_spectrum(spec);
  std::vector<double> static_plane(static_cast<size_t>(w) * d);  // [time x mel] for delta computation
  int idx = 0;
  for (int c = 0; c < spec.num_label_classes; ++c) {
    for (int dom = 0; dom < spec.num_domains; ++dom) {
      const double mean_gain = test_split ? shifts[static_cast<size_t>(dom)].test_gain
                                          : shifts[static_cast<size_t>(dom)].train_gain;
      for (int s = 0; s < per_cell; ++s, ++idx) {
        Rng rng = Rng(spec.seed)
                      .derive(test_split ? "test" : "train")
                      .derive(static_cast<uint64_t>(c) * 1000003u + static_cast<uint64_t>(dom) * 1009u +
                              static_cast<uint64_t>(s));
        const double gain = mean_gain + spec.offset_noise * rng.normal();
        // Static plane in [time x mel] order so compute_deltas applies directly.
        for (int t = 0; t < w; ++t)
          for (int b = 0; b < d; ++b)
            static_plane[static_cast<size_t>(t) * d + b] =
                spec.template_gain * templates[static_cast<size_t>(c)][static_cast<size_t>(b) * w + t] +
                gain * spectrum[static_cast<size_t>(b)] + spec.sample_noise * rng.normal();
        const auto delta = compute_deltas(static_plane, w, d);
        const auto delta2 = compute_deltas(delta, w, d);
        for (int b = 0; b < d; ++b)
          for (int t = 0; t < w; ++t) {
            out.patches.at4(idx, 0, b, t) = static_plane[static_cast<size_t>(t) * d + b];
            out.patches.at4(idx, 1, b, t) = delta[static_cast<size_t>(t) * d + b];
            out.patches.at4(idx, 2, b, t) = delta2[static_cast<size_t>(t) * d + b];
          }
        out.labels[static_cast<size_t>(idx)] = c;
        out.domains[static_cast<size_t>(idx)] = dom;
      }
    }
  }
  return out;
}

}  // namespace

ToyTask make_toy_task(const ToyTaskSpec& spec) {
  spec.validate();
  std::vector<std::vector<double>> templates(static_cast<size_t>(spec.num_label_classes));
  for (int c = 0; c < spec.num_label_classes; ++c) {
    Rng rng = Rng(spec.class_template_seed).derive("template").derive(static_cast<uint64_t>(c));
    templates[static_cast<size_t>(c)] = smooth_field(rng, spec.n_mels, spec.patch_width);
  }
  ToyTask task;
  task.train = generate_split(spec, templates, /*test_split=*/false);
  task.test = generate_split(spec, templates, /*test_split=*/true);
  return task;
}

void save_patch_dataset(const std::string& dir, const std::string& prefix, const PatchDataset<double>& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_tensor(data.patches, (fs::path(dir) / (prefix + "_patches.dgt")).string());
  std::ofstream meta(fs::path(dir) / (prefix + "_meta.tsv"));
  if (!meta) throw DataError("cannot write dataset metadata in " + dir);
  for (size_t i = 0; i < data.labels.size(); ++i)
    meta << i << "\t" << data.labels[i] << "\t" << data.domains[i] << "\n";
}

PatchDataset<double> load_patch_dataset(const std::string& dir, const std::string& prefix) {
  namespace fs = std::filesystem;
  PatchDataset<double> out;
  out.patches = load_tensor<double>((fs::path(dir) / (prefix + "_patches.dgt")).string());
  std::ifstream meta(fs::path(dir) / (prefix + "_meta.tsv"));
  if (!meta) throw DataError("cannot open dataset metadata in " + dir);
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int64_t idx;
    int label, domain;
    ss >> idx >> label >> domain;
    out.labels.push_back(label);
    out.domains.push_back(domain);
  }
  if (static_cast<int64_t>(out.labels.size()) != out.patches.dim(0))
    throw DataError("dataset metadata rows do not match patch count in " + dir);
  return out;
}

double train_linear_probe(const PatchDataset<double>& train, const PatchDataset<double>& test,
                          bool predict_domain, int steps, double lr, uint64_t seed) {
  const auto& train_targets = predict_domain ? train.domains : train.labels;
  const auto& test_targets = predict_domain ? test.domains : test.labels;
  const int classes = 1 + *std::max_element(train_targets.begin(), train_targets.end());
  const int dim = static_cast<int>(train.patches.numel() / train.patches.dim(0));

  Tensor<double> weight({dim, classes});
  Tensor<double> bias({classes});
  init_parameter(weight, "probe.weight", seed, "weight", dim);

  const int64_t n = train.size();
  const int64_t bs = std::min<int64_t>(64, n);
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  uint64_t epoch = 0;
  int64_t cursor = n;

  for (int step = 0; step < steps; ++step) {
    if (cursor + bs > n) {
      Rng shuffler = Rng(seed).derive("probe").derive(epoch);
      shuffler.shuffle(order);
      ++epoch;
      cursor = 0;
    }
    std::vector<int64_t> idx(order.begin() + cursor, order.begin() + cursor + bs);
    cursor += bs;
    LabeledBatch<double> batch = train.gather(idx);
    std::vector<int> targets(idx.size());
    for (size_t i = 0; i < idx.size(); ++i)
      targets[i] = (predict_domain ? train.domains : train.labels)[static_cast<size_t>(idx[i])];

    Graph<double> g;
    auto in = g.flatten(g.input(batch.input));
    auto w = g.param("w", weight);
    auto b = g.param("b", bias);
    auto loss = g.softmax_cross_entropy(g.affine(in, w, b), targets);
    g.backward(loss);
    // Mean-loss step: summed gradients scaled by batch size.
    const double scale = lr / static_cast<double>(idx.size());
    const auto& gw = g.grad(w);
    const auto& gb = g.grad(b);
    for (size_t i = 0; i < weight.data.size(); ++i) weight.data[i] -= scale * static_cast<double>(gw.data[i]);
    for (size_t i = 0; i < bias.data.size(); ++i) bias.data[i] -= scale * static_cast<double>(gb.data[i]);
  }

  // Test accuracy.
  int64_t hits = 0;
  const int64_t tn = test.size();
  for (int64_t start = 0; start < tn; start += 256) {
    const int64_t stop = std::min(tn, start + 256);
    std::vector<int64_t> idx(static_cast<size_t>(stop - start));
    for (int64_t i = start; i < stop; ++i) idx[static_cast<size_t>(i - start)] = i;
    LabeledBatch<double> batch = test.gather(idx);
    Graph<double> g;
    auto logits = g.affine(g.flatten(g.input(batch.input)), g.param("w", weight), g.param("b", bias));
    std::vector<int> pred = argmax_rows(g.value(logits));
    for (size_t i = 0; i < idx.size(); ++i)
      if (pred[i] == test_targets[static_cast<size_t>(idx[i])]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(tn);
}

}  // namespace dannet
