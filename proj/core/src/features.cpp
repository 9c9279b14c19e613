#include "dannet/features.hpp"

#include <cmath>

#include "dannet/errors.hpp"

namespace dannet {

namespace {
constexpr double kPi = 3.14159265358979323846;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }
}  // namespace

int FeatureConfig::frame_samples(int sample_rate) const {
  return static_cast<int>(std::lround(frame_length * sample_rate));
}
int FeatureConfig::hop_samples(int sample_rate) const {
  return static_cast<int>(std::lround(frame_hop * sample_rate));
}

void FeatureConfig::validate(int sample_rate) const {
  if (n_mels < 1) throw ConfigError("features: n_mels must be >= 1");
  if (frame_hop <= 0.0 || frame_length <= 0.0 || frame_hop > frame_length)
    throw ConfigError("features: need 0 < frame_hop <= frame_length");
  if (!(fmin > 0.0) || !(fmin < fmax) || fmax > sample_rate / 2.0)
    throw ConfigError("features: need 0 < fmin < fmax <= sample_rate/2");
  if (!is_pow2(fft_size)) throw ConfigError("features: fft_size must be a power of two");
  if (fft_size < frame_samples(sample_rate))
    throw ConfigError("features: fft_size " + std::to_string(fft_size) + " smaller than frame of " +
                      std::to_string(frame_samples(sample_rate)) + " samples");
  if (!(log_floor > 0.0)) throw ConfigError("features: log_floor must be positive");
}

std::vector<std::vector<double>> frame_signal(const Waveform& w, const FeatureConfig& cfg) {
  cfg.validate(w.sample_rate);
  const int L = cfg.frame_samples(w.sample_rate);
  const int H = cfg.hop_samples(w.sample_rate);
  const int64_t n = static_cast<int64_t>(w.samples.size());
  if (n < L)
    throw DataError("signal too short for one frame: " + std::to_string(n) + " < " + std::to_string(L) +
                    " samples");
  const int64_t t_frames = 1 + (n - L) / H;

  std::vector<double> window(static_cast<size_t>(L));
  for (int i = 0; i < L; ++i) window[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / L);

  std::vector<std::vector<double>> frames(static_cast<size_t>(t_frames));
  for (int64_t t = 0; t < t_frames; ++t) {
    auto& f = frames[static_cast<size_t>(t)];
    f.resize(static_cast<size_t>(L));
    const double* src = w.samples.data() + t * H;
    for (int i = 0; i < L; ++i) f[static_cast<size_t>(i)] = src[i] * window[static_cast<size_t>(i)];
  }
  return frames;
}

void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const size_t n = re.size();
  if (n != im.size() || !is_pow2(static_cast<int>(n))) throw ConfigError("fft size must be a power of two");
  // Bit-reversal permutation.
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (size_t k = 0; k < len / 2; ++k) {
        const double ur = re[i + k], ui = im[i + k];
        const double vr = re[i + k + len / 2] * cr - im[i + k + len / 2] * ci;
        const double vi = re[i + k + len / 2] * ci + im[i + k + len / 2] * cr;
        re[i + k] = ur + vr;
        im[i + k] = ui + vi;
        re[i + k + len / 2] = ur - vr;
        im[i + k + len / 2] = ui - vi;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(const FeatureConfig& cfg) {
  // n_mels + 2 edge frequencies, Mel-spaced between fmin and fmax.
  std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
  const double mlo = hz_to_mel(cfg.fmin), mhi = hz_to_mel(cfg.fmax);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[static_cast<size_t>(i)] = mel_to_hz(mlo + (mhi - mlo) * i / (cfg.n_mels + 1));
  return edges;
}

}  // namespace

std::vector<double> mel_band_centers(const FeatureConfig& cfg) {
  const auto edges = mel_edges(cfg);
  return std::vector<double>(edges.begin() + 1, edges.end() - 1);
}

std::vector<double> mel_filter_weights(const FeatureConfig& cfg, int sample_rate) {
  const auto edges = mel_edges(cfg);
  const int bins = cfg.fft_size / 2 + 1;
  std::vector<double> weights(static_cast<size_t>(cfg.n_mels) * bins, 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[static_cast<size_t>(m)];
    const double c = edges[static_cast<size_t>(m) + 1];
    const double hi = edges[static_cast<size_t>(m) + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / cfg.fft_size;
      double wgt = 0.0;
      if (f > lo && f < hi) wgt = f <= c ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
      weights[static_cast<size_t>(m) * bins + k] = wgt;
    }
  }
  return weights;
}

std::vector<double> log_mel_filterbank(const std::vector<std::vector<double>>& frames, const FeatureConfig& cfg,
                                       int sample_rate) {
  cfg.validate(sample_rate);
  const int bins = cfg.fft_size / 2 + 1;
  const auto weights = mel_filter_weights(cfg, sample_rate);
  std::vector<double> out(frames.size() * static_cast<size_t>(cfg.n_mels));

  std::vector<double> re(static_cast<size_t>(cfg.fft_size)), im(static_cast<size_t>(cfg.fft_size));
  std::vector<double> power(static_cast<size_t>(bins));
  for (size_t t = 0; t < frames.size(); ++t) {
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    std::copy(frames[t].begin(), frames[t].end(), re.begin());
    fft_radix2(re, im);
    for (int k = 0; k < bins; ++k)
      power[static_cast<size_t>(k)] = re[static_cast<size_t>(k)] * re[static_cast<size_t>(k)] +
                                      im[static_cast<size_t>(k)] * im[static_cast<size_t>(k)];
    for (int m = 0; m < cfg.n_mels; ++m) {
      const double* wrow = &weights[static_cast<size_t>(m) * bins];
      double e = 0.0;
      for (int k = 0; k < bins; ++k) e += wrow[k] * power[static_cast<size_t>(k)];
      out[t * static_cast<size_t>(cfg.n_mels) + static_cast<size_t>(m)] = std::log(std::max(e, cfg.log_floor));
    }
  }
  return out;
}

std::vector<double> compute_deltas(const std::vector<double>& plane, int t_frames, int dims, int half_window) {
  if (t_frames < 1 || half_window < 1) throw DataError("compute_deltas: need T >= 1 and half_window >= 1");
  double denom = 0.0;
  for (int n = 1; n <= half_window; ++n) denom += static_cast<double>(n) * n;
  denom *= 2.0;
  std::vector<double> out(plane.size());
  auto clamp_t = [&](int t) { return t < 0 ? 0 : (t >= t_frames ? t_frames - 1 : t); };
  for (int t = 0; t < t_frames; ++t) {
    for (int d = 0; d < dims; ++d) {
      double num = 0.0;
      for (int n = 1; n <= half_window; ++n) {
        const double fwd = plane[static_cast<size_t>(clamp_t(t + n)) * dims + d];
        const double bwd = plane[static_cast<size_t>(clamp_t(t - n)) * dims + d];
        num += n * (fwd - bwd);
      }
      out[static_cast<size_t>(t) * dims + d] = num / denom;
    }
  }
  return out;
}

FeatureMatrix extract_features(const Waveform& w, const FeatureConfig& cfg) {
  const auto frames = frame_signal(w, cfg);
  FeatureMatrix fm;
  fm.n_frames = static_cast<int>(frames.size());
  fm.n_mels = cfg.n_mels;
  fm.frames = log_mel_filterbank(frames, cfg, w.sample_rate);
  fm.delta = compute_deltas(fm.frames, fm.n_frames, fm.n_mels);
  fm.delta2 = compute_deltas(fm.delta, fm.n_frames, fm.n_mels);
  return fm;
}

NormStats compute_norm_stats(const std::vector<const FeatureMatrix*>& corpus) {
  if (corpus.empty()) throw DataError("compute_norm_stats: empty corpus");
  const int d = corpus.front()->n_mels;
  NormStats s;
  s.n_mels = d;
  s.mean.assign(static_cast<size_t>(3) * d, 0.0);
  s.inv_std.assign(static_cast<size_t>(3) * d, 0.0);
  std::vector<long double> sum(static_cast<size_t>(3) * d, 0.0L), sumsq(static_cast<size_t>(3) * d, 0.0L);
  int64_t total = 0;
  for (const FeatureMatrix* fm : corpus) {
    if (fm->n_mels != d) throw ShapeError("compute_norm_stats: mixed n_mels in corpus");
    total += fm->n_frames;
    const std::vector<double>* planes[3] = {&fm->frames, &fm->delta, &fm->delta2};
    for (int p = 0; p < 3; ++p)
      for (int t = 0; t < fm->n_frames; ++t)
        for (int b = 0; b < d; ++b) {
          const double v = (*planes[p])[static_cast<size_t>(t) * d + b];
          sum[static_cast<size_t>(p) * d + b] += v;
          sumsq[static_cast<size_t>(p) * d + b] += static_cast<long double>(v) * v;
        }
  }
  if (total == 0) throw DataError("compute_norm_stats: corpus has no frames");
  for (size_t i = 0; i < sum.size(); ++i) {
    const long double m = sum[i] / total;
    const long double var = sumsq[i] / total - m * m;
    s.mean[i] = static_cast<double>(m);
    s.inv_std[i] = 1.0 / std::sqrt(std::max(static_cast<double>(var), 1e-20));
  }
  return s;
}

Tensor<double> assemble_patches(const FeatureMatrix& fm, const NormStats& stats, int patch_width) {
  if (patch_width < 1) throw ConfigError("patch_width must be >= 1");
  if (fm.n_frames < patch_width)
    throw DataError("utterance has " + std::to_string(fm.n_frames) + " frames, fewer than patch width " +
                    std::to_string(patch_width));
  if (stats.n_mels != fm.n_mels) throw ShapeError("normalization stats do not match feature dimensionality");
  const int d = fm.n_mels;
  const int patches = fm.n_frames - patch_width + 1;
  Tensor<double> out({patches, 3, d, patch_width});
  const std::vector<double>* planes[3] = {&fm.frames, &fm.delta, &fm.delta2};
  for (int p = 0; p < patches; ++p)
    for (int ch = 0; ch < 3; ++ch)
      for (int b = 0; b < d; ++b) {
        const double m = stats.mean[static_cast<size_t>(ch) * d + b];
        const double is = stats.inv_std[static_cast<size_t>(ch) * d + b];
        for (int t = 0; t < patch_width; ++t)
          out.at4(p, ch, b, t) = ((*planes[ch])[static_cast<size_t>(p + t) * d + b] - m) * is;
      }
  return out;
}

Tensor<double> feature_to_tensor(const FeatureMatrix& fm) {
  Tensor<double> t({3, fm.n_frames, fm.n_mels});
  const size_t plane = static_cast<size_t>(fm.n_frames) * fm.n_mels;
  std::copy(fm.frames.begin(), fm.frames.end(), t.data.begin());
  std::copy(fm.delta.begin(), fm.delta.end(), t.data.begin() + plane);
  std::copy(fm.delta2.begin(), fm.delta2.end(), t.data.begin() + 2 * plane);
  return t;
}

FeatureMatrix tensor_to_feature(const Tensor<double>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("feature tensor must be [3,T,n_mels], got " + shape_str(t.shape));
  FeatureMatrix fm;
  fm.n_frames = t.dim(1);
  fm.n_mels = t.dim(2);
  const size_t plane = static_cast<size_t>(fm.n_frames) * fm.n_mels;
  fm.frames.assign(t.data.begin(), t.data.begin() + plane);
  fm.delta.assign(t.data.begin() + plane, t.data.begin() + 2 * plane);
  fm.delta2.assign(t.data.begin() + 2 * plane, t.data.begin() + 3 * plane);
  return fm;
}

}  // namespace dannet
