#pragma once

#include <string>
#include <vector>

namespace dannet {

/// Mono audio in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Reads a RIFF/WAVE file. Only PCM 16-bit mono little-endian is accepted;
/// unknown chunks are skipped.
Waveform read_wav(const std::string& path);

/// Writes PCM 16-bit mono. Samples are clamped to [-1, 1] first.
void write_wav(const Waveform& w, const std::string& path);

}  // namespace dannet
