#pragma once

#include <cstdint>
#include <vector>

#include "dannet/adversarial.hpp"
#include "dannet/tensor.hpp"

namespace dannet {

/// Per-domain gain on the shared shift spectrum. The spectrum is a fixed
/// seeded shape over Mel bands, broadcast over time; train and test gains
/// may differ to emulate unseen noise severity.
struct DomainShift {
  double train_gain = 0.0;
  double test_gain = 0.0;
};

/// Synthetic patch classification task with independent label and domain
/// factors: class templates are shared across domains and domains only
/// differ in their mean gain along one shift spectrum, so adversarial
/// training has a real signal to remove. offset_noise jitters every
/// sample's gain along that same spectrum, which keeps the two domains
/// overlapping: the domain classifier cannot saturate, and a feature
/// extractor that nulls the spectrum direction wins the game while also
/// shedding a nuisance factor.
struct ToyTaskSpec {
  int num_label_classes = 4;
  int num_domains = 2;
  int samples_per_class_train = 40;  // per (class, domain) cell
  int samples_per_class_test = 15;
  int n_mels = 24;
  int patch_width = 11;
  uint64_t class_template_seed = 1234;
  double template_gain = 1.0;
  double sample_noise = 0.1;   // iid per pixel
  double offset_noise = 0.0;   // per-sample gain jitter along the shift spectrum
  std::vector<DomainShift> domain_shift;  // size num_domains; default: domain 0 clean, rest shifted
  uint64_t seed = 99;

  void validate() const;
};

struct ToyTask {
  PatchDataset<double> train;
  PatchDataset<double> test;
};

ToyTask make_toy_task(const ToyTaskSpec& spec);

/// Multinomial logistic regression on flattened patches; returns accuracy on
/// the test split. Used to check that labels/domains are (not) linearly
/// recoverable from raw patches.
double train_linear_probe(const PatchDataset<double>& train, const PatchDataset<double>& test,
                          bool predict_domain, int steps, double lr, uint64_t seed);

/// Dataset on disk: <prefix>_patches.dgt plus <prefix>_meta.tsv rows of
/// "index<TAB>label<TAB>domain".
void save_patch_dataset(const std::string& dir, const std::string& prefix, const PatchDataset<double>& data);
PatchDataset<double> load_patch_dataset(const std::string& dir, const std::string& prefix);

template <typename Real>
PatchDataset<Real> cast_dataset(const PatchDataset<double>& d) {
  PatchDataset<Real> out;
  out.patches = Tensor<Real>(d.patches.shape);
  for (size_t i = 0; i < d.patches.data.size(); ++i) out.patches.data[i] = static_cast<Real>(d.patches.data[i]);
  out.labels = d.labels;
  out.domains = d.domains;
  return out;
}

}  // namespace dannet
