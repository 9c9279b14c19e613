#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dannet/wav.hpp"

namespace dannet {

/// Everything needed to reproduce one corrupted utterance bit-for-bit.
struct MixSpec {
  std::string clean_id;
  std::string noise_id;
  double snr_db = 0.0;
  uint64_t seed = 0;
  int64_t noise_offset = 0;
};

struct ManifestEntry {
  MixSpec spec;
  std::string partition;   // known | unknown
  double rescale = 1.0;    // global factor applied when the mix would clip
  int label = 0;           // class of the clean utterance
  int domain = 0;          // noise-condition bucket
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;
  std::vector<double> snr_values;
  std::vector<double> snr_proportions;
  std::string partition;  // which noise partition this corpus draws from
  uint64_t master_seed = 0;

  void save(const std::string& path) const;
  static CorpusManifest load(const std::string& path);
};

/// Mean squared sample value.
double signal_power(const std::vector<double>& x);

struct MixResult {
  Waveform audio;
  double gain = 0.0;     // noise scale factor
  double rescale = 1.0;  // applied to the whole mix, 1.0 unless clipping
};

/// Adds the noise clip (cropped at spec.noise_offset, looped as needed) to
/// the clean signal, scaled so the clean-to-scaled-noise power ratio equals
/// 10^(snr_db/10). If any sample would leave [-1, 1], the whole mix is
/// rescaled and the factor reported.
MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db, const MixSpec& spec);

struct NoiseBankInfo {
  // id -> sample count, split by partition. Partitions must be disjoint.
  std::map<std::string, int64_t> known;
  std::map<std::string, int64_t> unknown;
};

struct ManifestParams {
  std::vector<double> snr_values;
  std::vector<double> snr_proportions;
  std::string partition = "known";
  uint64_t master_seed = 0;
};

/// Draws an SNR bin and a noise clip for every clean utterance using
/// counter-based randomness keyed on (master_seed, clean_id), so the result
/// is independent of ordering and worker count.
CorpusManifest build_manifest(const std::vector<std::pair<std::string, int>>& clean_ids_labels,
                              const NoiseBankInfo& bank, const ManifestParams& params);

struct VerifyReport {
  std::vector<std::string> violations;
  double max_snr_error_db = 0.0;
  bool hygiene_ok = true;
  bool ok() const { return violations.empty(); }
};

/// Re-measures each utterance's realized SNR from the stored audio
/// (mixed minus rescaled clean) and checks partition hygiene.
VerifyReport verify_corpus(const CorpusManifest& manifest,
                           const std::function<Waveform(const std::string&)>& load_clean,
                           const std::function<Waveform(const std::string&)>& load_mixed,
                           const NoiseBankInfo& bank, double tolerance_db = 0.1);

/// Synthetic noise bank: white, pink, amplitude-modulated babble-like, and
/// tonal hum generators stand in for recorded noise.
const std::vector<std::string>& noise_types();
Waveform make_noise(const std::string& type, uint64_t seed, int64_t num_samples, int sample_rate);

/// Vowel-like synthetic utterance; class_id selects the formant pattern so
/// desk-scale corpora carry a learnable label.
Waveform synth_speech(uint64_t seed, int class_id, double seconds, int sample_rate);

}  // namespace dannet
