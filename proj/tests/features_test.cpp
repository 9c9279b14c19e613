#include <cmath>

#include "dannet/errors.hpp"
#include "dannet/features.hpp"
#include "dannet/rng.hpp"
#include "doctest.h"

using namespace dannet;

namespace {
constexpr double kPi = 3.14159265358979323846;

Waveform sine(double freq, double seconds, int sr = 16000, double amp = 0.5) {
  Waveform w;
  w.sample_rate = sr;
  const int64_t n = static_cast<int64_t>(seconds * sr);
  w.samples.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) w.samples[static_cast<size_t>(i)] = amp * std::sin(2.0 * kPi * freq * i / sr);
  return w;
}

Waveform random_wave(uint64_t seed, int64_t n, int sr = 16000) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(static_cast<size_t>(n));
  Rng rng(seed);
  for (auto& v : w.samples) v = rng.uniform(-0.5, 0.5);
  return w;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("frame counts follow 1 + (N - L) / H") {
  FeatureConfig cfg;
  Waveform w = random_wave(1, 400);
  CHECK(frame_signal(w, cfg).size() == 1);

  Waveform w10 = random_wave(2, 400 + 160 * 9);
  CHECK(frame_signal(w10, cfg).size() == 10);

  Waveform w_short = random_wave(3, 399);
  CHECK_THROWS_AS(frame_signal(w_short, cfg), DataError);
}

TEST_CASE("constant signal frames equal the scaled window") {
  FeatureConfig cfg;
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(800, 0.25);
  const auto frames = frame_signal(w, cfg);
  REQUIRE(frames.size() >= 2);
  for (int i = 0; i < 400; ++i) {
    const double window = 0.5 - 0.5 * std::cos(2.0 * kPi * i / 400);
    CHECK(frames[0][static_cast<size_t>(i)] == doctest::Approx(0.25 * window).epsilon(1e-12));
    CHECK(frames[1][static_cast<size_t>(i)] == frames[0][static_cast<size_t>(i)]);
  }
}

TEST_CASE("config validation") {
  FeatureConfig cfg;
  cfg.fft_size = 500;  // not a power of two
  CHECK_THROWS_AS(cfg.validate(16000), ConfigError);
  cfg.fft_size = 256;  // smaller than the 400-sample frame
  CHECK_THROWS_AS(cfg.validate(16000), ConfigError);
  cfg = FeatureConfig{};
  cfg.fmax = 9000.0;  // above Nyquist
  CHECK_THROWS_AS(cfg.validate(16000), ConfigError);
  cfg = FeatureConfig{};
  cfg.frame_hop = 0.05;  // hop > length
  CHECK_THROWS_AS(cfg.validate(16000), ConfigError);
}

TEST_CASE("fft matches the direct DFT") {
  Rng rng(4);
  const int n = 64;
  std::vector<double> re(n), im(n, 0.0);
  for (auto& v : re) v = rng.uniform(-1.0, 1.0);
  auto re2 = re;
  auto im2 = im;
  fft_radix2(re2, im2);
  for (int k = 0; k < n; ++k) {
    double sr = 0.0, si = 0.0;
    for (int t = 0; t < n; ++t) {
      sr += re[static_cast<size_t>(t)] * std::cos(-2.0 * kPi * k * t / n);
      si += re[static_cast<size_t>(t)] * std::sin(-2.0 * kPi * k * t / n);
    }
    CHECK(re2[static_cast<size_t>(k)] == doctest::Approx(sr).epsilon(1e-9));
    CHECK(im2[static_cast<size_t>(k)] == doctest::Approx(si).epsilon(1e-9));
  }
}

TEST_CASE("all-zero signal hits the log floor everywhere") {
  FeatureConfig cfg;
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(1200, 0.0);
  FeatureMatrix fm = extract_features(w, cfg);
  CHECK(fm.n_mels == 40);
  for (double v : fm.frames) CHECK(v == doctest::Approx(std::log(cfg.log_floor)));
  for (double v : fm.delta) CHECK(v == 0.0);
  for (double v : fm.delta2) CHECK(v == 0.0);
}

TEST_CASE("pure tone peaks in the band whose center is nearest") {
  FeatureConfig cfg;
  const auto centers = mel_band_centers(cfg);
  REQUIRE(centers.size() == 40);
  for (size_t band : {8u, 15u, 24u, 33u}) {
    const double f = centers[band];
    Waveform w = sine(f, 0.3);
    FeatureMatrix fm = extract_features(w, cfg);
    // Use an interior frame to avoid onset effects.
    const int t = fm.n_frames / 2;
    int argmax = 0;
    for (int m = 1; m < fm.n_mels; ++m)
      if (fm.frames[static_cast<size_t>(t) * 40 + m] > fm.frames[static_cast<size_t>(t) * 40 + argmax])
        argmax = m;
    // The winning band's center must be the closest one to f.
    int nearest = 0;
    for (int m = 1; m < 40; ++m)
      if (std::fabs(centers[static_cast<size_t>(m)] - f) < std::fabs(centers[static_cast<size_t>(nearest)] - f))
        nearest = m;
    CHECK(argmax == nearest);
  }
}

TEST_CASE("doubling the amplitude adds ln 4 above the floor") {
  FeatureConfig cfg;
  Waveform w = random_wave(5, 3200);
  Waveform w2 = w;
  for (auto& v : w2.samples) v *= 2.0;
  FeatureMatrix a = extract_features(w, cfg);
  FeatureMatrix b = extract_features(w2, cfg);
  const double floor_log = std::log(cfg.log_floor);
  for (size_t i = 0; i < a.frames.size(); ++i) {
    if (a.frames[i] <= floor_log + 2.0) continue;  // stay clear of the floor
    CHECK(b.frames[i] - a.frames[i] == doctest::Approx(std::log(4.0)).epsilon(1e-10));
  }
}

TEST_CASE("energy monotonicity under gain") {
  FeatureConfig cfg;
  Waveform w = random_wave(6, 2400);
  Waveform w15 = w;
  for (auto& v : w15.samples) v *= 1.5;
  FeatureMatrix a = extract_features(w, cfg);
  FeatureMatrix b = extract_features(w15, cfg);
  const double floor_log = std::log(cfg.log_floor);
  for (size_t i = 0; i < a.frames.size(); ++i)
    if (a.frames[i] > floor_log) CHECK(b.frames[i] >= a.frames[i] - 1e-12);
}

TEST_CASE("deltas: constant, ramp, brute-force oracle, linearity") {
  // Constant input: exactly zero everywhere, including clamped edges.
  std::vector<double> constant(12 * 3, 3.7);
  for (double v : compute_deltas(constant, 12, 3)) CHECK(v == 0.0);

  // Linear ramp: interior deltas equal the slope.
  const int t_frames = 10, dims = 2;
  std::vector<double> ramp(static_cast<size_t>(t_frames) * dims);
  for (int t = 0; t < t_frames; ++t)
    for (int d = 0; d < dims; ++d) ramp[static_cast<size_t>(t) * dims + d] = 0.3 * t;
  auto dr = compute_deltas(ramp, t_frames, dims);
  for (int t = 2; t < t_frames - 2; ++t)
    for (int d = 0; d < dims; ++d) CHECK(dr[static_cast<size_t>(t) * dims + d] == doctest::Approx(0.3));

  // Brute-force of the regression formula, including edge clamping.
  Rng rng(7);
  std::vector<double> x(static_cast<size_t>(10) * 3);
  for (auto& v : x) v = rng.uniform(-2.0, 2.0);
  auto got = compute_deltas(x, 10, 3, 2);
  auto clamp = [&](int t) { return std::min(9, std::max(0, t)); };
  for (int t = 0; t < 10; ++t)
    for (int d = 0; d < 3; ++d) {
      double num = 0.0;
      for (int n = 1; n <= 2; ++n)
        num += n * (x[static_cast<size_t>(clamp(t + n)) * 3 + d] - x[static_cast<size_t>(clamp(t - n)) * 3 + d]);
      CHECK(got[static_cast<size_t>(t) * 3 + d] == doctest::Approx(num / 10.0).epsilon(1e-14));
    }

  // Linearity: deltas(a*X + b*Y) == a*deltas(X) + b*deltas(Y), exactly for
  // power-of-two coefficients.
  std::vector<double> y(x.size());
  for (auto& v : y) v = rng.uniform(-1.0, 1.0);
  std::vector<double> combo(x.size());
  for (size_t i = 0; i < x.size(); ++i) combo[i] = 2.0 * x[i] + 0.5 * y[i];
  auto dx = compute_deltas(x, 10, 3);
  auto dy = compute_deltas(y, 10, 3);
  auto dc = compute_deltas(combo, 10, 3);
  for (size_t i = 0; i < x.size(); ++i) CHECK(dc[i] == doctest::Approx(2.0 * dx[i] + 0.5 * dy[i]).epsilon(1e-12));
}

TEST_CASE("extraction is bit-deterministic") {
  FeatureConfig cfg;
  Waveform w = random_wave(8, 4000);
  FeatureMatrix a = extract_features(w, cfg);
  FeatureMatrix b = extract_features(w, cfg);
  CHECK(a.frames == b.frames);
  CHECK(a.delta == b.delta);
  CHECK(a.delta2 == b.delta2);
}

TEST_CASE("time-shift covariance by one hop") {
  FeatureConfig cfg;
  Waveform w = random_wave(9, 6400);
  Waveform shifted;
  shifted.sample_rate = w.sample_rate;
  shifted.samples.assign(w.samples.begin() + 160, w.samples.end());
  FeatureMatrix a = extract_features(w, cfg);
  FeatureMatrix b = extract_features(shifted, cfg);
  // Frame t of the shifted signal sees the samples of frame t+1.
  for (int t = 0; t < b.n_frames; ++t)
    for (int m = 0; m < 40; ++m)
      CHECK(b.frames[static_cast<size_t>(t) * 40 + m] ==
            doctest::Approx(a.frames[static_cast<size_t>(t + 1) * 40 + m]).epsilon(1e-9));
}

TEST_CASE("patch assembly: count, layout, normalization") {
  FeatureConfig cfg;
  cfg.n_mels = 12;
  Waveform w = random_wave(10, 400 + 160 * 19);  // 20 frames
  FeatureMatrix fm = extract_features(w, cfg);
  REQUIRE(fm.n_frames == 20);

  std::vector<const FeatureMatrix*> corpus = {&fm};
  NormStats stats = compute_norm_stats(corpus);

  // Exactly one patch when T equals the patch width.
  FeatureMatrix one = fm;
  one.n_frames = 11;
  one.frames.resize(static_cast<size_t>(11) * 12);
  one.delta.resize(static_cast<size_t>(11) * 12);
  one.delta2.resize(static_cast<size_t>(11) * 12);
  CHECK(assemble_patches(one, stats, 11).dim(0) == 1);
  CHECK_THROWS_AS(assemble_patches(one, stats, 12), DataError);

  Tensor<double> patches = assemble_patches(fm, stats, 11);
  CHECK(patches.shape == std::vector<int>{10, 3, 12, 11});

  // Channel 0 of patch p is the normalized static slice.
  for (int p = 0; p < 10; ++p)
    for (int b = 0; b < 12; ++b)
      for (int t = 0; t < 11; ++t) {
        const double expected = (fm.frames[static_cast<size_t>(p + t) * 12 + b] - stats.mean[b]) * stats.inv_std[b];
        CHECK(patches.at4(p, 0, b, t) == doctest::Approx(expected).epsilon(1e-12));
      }

  // Post-hoc statistics of the normalized planes: mean 0, variance 1.
  for (int ch = 0; ch < 3; ++ch)
    for (int b = 0; b < 12; ++b) {
      // Recompute over the normalized full planes (patch overlap would bias
      // the count toward interior frames).
      const std::vector<double>* plane = ch == 0 ? &fm.frames : (ch == 1 ? &fm.delta : &fm.delta2);
      long double mean = 0.0L, var = 0.0L;
      for (int t = 0; t < 20; ++t) {
        const double v = ((*plane)[static_cast<size_t>(t) * 12 + b] - stats.mean[static_cast<size_t>(ch) * 12 + b]) *
                         stats.inv_std[static_cast<size_t>(ch) * 12 + b];
        mean += v;
        var += static_cast<long double>(v) * v;
      }
      mean /= 20.0L;
      var = var / 20.0L - mean * mean;
      CHECK(std::fabs(static_cast<double>(mean)) < 1e-9);
      CHECK(static_cast<double>(var) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("feature tensor round trip") {
  FeatureConfig cfg;
  Waveform w = random_wave(11, 2000);
  FeatureMatrix fm = extract_features(w, cfg);
  FeatureMatrix back = tensor_to_feature(feature_to_tensor(fm));
  CHECK(back.n_frames == fm.n_frames);
  CHECK(back.frames == fm.frames);
  CHECK(back.delta == fm.delta);
  CHECK(back.delta2 == fm.delta2);
}

}  // TEST_SUITE
