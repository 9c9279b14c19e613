#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dannet/adversarial.hpp"
#include "dannet/densenet.hpp"
#include "dannet/features.hpp"
#include "dannet/toytask.hpp"

namespace dannet {

/// Line-oriented `section.key=value` config. `#` starts a comment. Reads
/// are tracked so callers can reject unknown keys after parsing.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_string(const std::string& text);

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::string require_str(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback) const;

  void set(const std::string& key, const std::string& value);
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;
  /// Keys never read by any getter; used to flag typos before running.
  std::vector<std::string> unused_keys() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

/// Mix/featurize/train data plumbing knobs.
struct DataConfig {
  std::string mode = "toy";  // toy | corpus
  ToyTaskSpec toy;
  double toy_shift_gain = 1.0;
  double toy_shift_test_gain = 2.0;

  std::string corpus_dir;         // mix output / featurize input
  std::string features_dir;       // featurize output / train input
  std::string eval_features_dir;  // optional held-out archive for training evals

  int clean_count = 20;
  double clean_seconds = 1.2;
  int clean_classes = 4;
  int noise_known = 8;
  int noise_unknown = 4;
  double noise_seconds = 3.0;
  int sample_rate = 16000;
  std::vector<double> snr_values = {0, 1, 2, 3, 4};
  std::vector<double> snr_proportions = {0.199, 0.203, 0.196, 0.212, 0.190};
  std::string partition = "known";
  std::string domain_by = "noise_type";  // noise_type | snr_bin
};

struct ExperimentConfig {
  DenseNetConfig model;
  AdversarialConfig adversarial;
  bool adversarial_enabled = true;
  FeatureConfig features;
  int patch_width = 11;
  DataConfig data;
  TrainSchedule schedule;
  std::string out_dir = "out";

  /// Builds from parsed keys and rejects unknown ones.
  static ExperimentConfig from_config(const KeyValueConfig& kv);
};

}  // namespace dannet
