#pragma once

#include <string>
#include <vector>

#include "dannet/tensor.hpp"
#include "dannet/wav.hpp"

namespace dannet {

/// Front-end parameters. Defaults: 25 ms Hann frames at 10 ms hop, 512-point
/// FFT, 40 Mel bands between 20 Hz and 8 kHz, natural-log energies floored
/// at 1e-10.
struct FeatureConfig {
  int n_mels = 40;
  double frame_length = 0.025;  // seconds
  double frame_hop = 0.010;     // seconds
  int fft_size = 512;
  double fmin = 20.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;

  int frame_samples(int sample_rate) const;
  int hop_samples(int sample_rate) const;
  void validate(int sample_rate) const;
};

/// Static log-Mel energies with first and second time derivatives, each a
/// row-major [n_frames x n_mels] plane.
struct FeatureMatrix {
  int n_frames = 0;
  int n_mels = 0;
  std::vector<double> frames;
  std::vector<double> delta;
  std::vector<double> delta2;

  double& at(std::vector<double>& plane, int t, int d) { return plane[static_cast<size_t>(t) * n_mels + d]; }
};

/// Hann-windowed frames at hop intervals; frame count 1 + (N - L) / H.
std::vector<std::vector<double>> frame_signal(const Waveform& w, const FeatureConfig& cfg);

/// Power spectrum -> triangular Mel filterbank -> ln(max(energy, floor)).
/// Returns [n_frames x n_mels] row-major.
std::vector<double> log_mel_filterbank(const std::vector<std::vector<double>>& frames, const FeatureConfig& cfg,
                                       int sample_rate);

/// Regression deltas with half-window W over a [T x D] plane; boundary
/// frames are clamp-replicated so a constant input has exactly zero deltas.
std::vector<double> compute_deltas(const std::vector<double>& plane, int t_frames, int dims, int half_window = 2);

FeatureMatrix extract_features(const Waveform& w, const FeatureConfig& cfg);

/// mel(f) = 2595 log10(1 + f/700)
double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Center frequency (Hz) of each triangular filter.
std::vector<double> mel_band_centers(const FeatureConfig& cfg);
/// Unit-peak triangle weights, [n_mels x (fft_size/2 + 1)] row-major.
std::vector<double> mel_filter_weights(const FeatureConfig& cfg, int sample_rate);

/// In-place iterative radix-2 FFT; size must be a power of two.
void fft_radix2(std::vector<double>& re, std::vector<double>& im);

/// Per-(plane, band) corpus statistics for input normalization.
struct NormStats {
  int n_mels = 0;
  std::vector<double> mean;     // 3 * n_mels
  std::vector<double> inv_std;  // 3 * n_mels
};

NormStats compute_norm_stats(const std::vector<const FeatureMatrix*>& corpus);

/// One patch per center frame (stride 1): [P, 3, n_mels, patch_width] with
/// channels static/delta/delta2, frequency as height, time as width.
/// Normalization is applied per Mel band before patching.
Tensor<double> assemble_patches(const FeatureMatrix& fm, const NormStats& stats, int patch_width);

/// Archive layout helpers: a FeatureMatrix round-trips through a
/// [3, T, n_mels] tensor file.
Tensor<double> feature_to_tensor(const FeatureMatrix& fm);
FeatureMatrix tensor_to_feature(const Tensor<double>& t);

}  // namespace dannet
