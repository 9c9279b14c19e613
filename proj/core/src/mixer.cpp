#include "dannet/mixer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dannet/errors.hpp"
#include "dannet/rng.hpp"

namespace dannet {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double signal_power(const std::vector<double>& x) {
  if (x.empty()) throw DataError("signal_power: empty input");
  long double s = 0.0L;
  for (double v : x) s += static_cast<long double>(v) * v;
  return static_cast<double>(s / static_cast<long double>(x.size()));
}

MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db, const MixSpec& spec) {
  if (clean.samples.empty()) throw DataError("mix_at_snr: empty clean signal");
  if (noise.samples.empty()) throw DataError("mix_at_snr: empty noise signal");
  const double p_clean = signal_power(clean.samples);
  if (p_clean <= 0.0) throw DataError("mix_at_snr: silent clean signal (" + spec.clean_id + ")");

  const int64_t n = static_cast<int64_t>(clean.samples.size());
  const int64_t nl = static_cast<int64_t>(noise.samples.size());
  std::vector<double> seg(static_cast<size_t>(n));
  const int64_t off = ((spec.noise_offset % nl) + nl) % nl;
  for (int64_t i = 0; i < n; ++i) seg[static_cast<size_t>(i)] = noise.samples[static_cast<size_t>((off + i) % nl)];

  const double p_noise = signal_power(seg);
  if (p_noise <= 0.0) throw DataError("mix_at_snr: silent noise segment (" + spec.noise_id + ")");

  const double gain = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));

  MixResult r;
  r.gain = gain;
  r.audio.sample_rate = clean.sample_rate;
  r.audio.samples.resize(static_cast<size_t>(n));
  double peak = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double v = clean.samples[static_cast<size_t>(i)] + gain * seg[static_cast<size_t>(i)];
    r.audio.samples[static_cast<size_t>(i)] = v;
    peak = std::max(peak, std::fabs(v));
  }
  if (peak > 1.0) {
    r.rescale = 1.0 / peak;
    for (auto& v : r.audio.samples) v *= r.rescale;
  }
  return r;
}

void CorpusManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path);
  out.precision(17);
  out << "#master_seed\t" << master_seed << "\n";
  out << "#partition\t" << partition << "\n";
  out << "#snr_values";
  for (double v : snr_values) out << "\t" << v;
  out << "\n#snr_proportions";
  for (double v : snr_proportions) out << "\t" << v;
  out << "\n";
  out << "#clean_id\tnoise_id\tsnr_db\tseed\tnoise_offset\tpartition\trescale_factor\tlabel\tdomain\n";
  for (const auto& e : entries)
    out << e.spec.clean_id << "\t" << e.spec.noise_id << "\t" << e.spec.snr_db << "\t" << e.spec.seed << "\t"
        << e.spec.noise_offset << "\t" << e.partition << "\t" << e.rescale << "\t" << e.label << "\t"
        << e.domain << "\n";
  if (!out) throw DataError("short write on manifest: " + path);
}

CorpusManifest CorpusManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  CorpusManifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    if (line[0] == '#') {
      std::string tag;
      ss >> tag;
      if (tag == "#master_seed") ss >> m.master_seed;
      else if (tag == "#partition") ss >> m.partition;
      else if (tag == "#snr_values") {
        double v;
        while (ss >> v) m.snr_values.push_back(v);
      } else if (tag == "#snr_proportions") {
        double v;
        while (ss >> v) m.snr_proportions.push_back(v);
      }
      continue;
    }
    ManifestEntry e;
    std::string field;
    std::getline(ss, e.spec.clean_id, '\t');
    std::getline(ss, e.spec.noise_id, '\t');
    std::getline(ss, field, '\t');
    e.spec.snr_db = std::stod(field);
    std::getline(ss, field, '\t');
    e.spec.seed = std::stoull(field);
    std::getline(ss, field, '\t');
    e.spec.noise_offset = std::stoll(field);
    std::getline(ss, e.partition, '\t');
    std::getline(ss, field, '\t');
    e.rescale = std::stod(field);
    std::getline(ss, field, '\t');
    e.label = std::stoi(field);
    std::getline(ss, field, '\t');
    e.domain = std::stoi(field);
    m.entries.push_back(std::move(e));
  }
  return m;
}

namespace {

void check_params(const ManifestParams& p) {
  if (p.snr_values.empty() || p.snr_values.size() != p.snr_proportions.size())
    throw ConfigError("manifest params: snr_values and snr_proportions must be equal-length and nonempty");
  double sum = 0.0;
  for (double v : p.snr_proportions) {
    if (v < 0.0) throw ConfigError("manifest params: negative proportion");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > 1e-9)
    throw ConfigError("manifest params: proportions sum to " + std::to_string(sum) + ", expected 1");
  if (p.partition != "known" && p.partition != "unknown")
    throw ConfigError("manifest params: partition must be known or unknown, got " + p.partition);
}

}  // namespace

CorpusManifest build_manifest(const std::vector<std::pair<std::string, int>>& clean_ids_labels,
                              const NoiseBankInfo& bank, const ManifestParams& params) {
  check_params(params);
  for (const auto& [id, len] : bank.known)
    if (bank.unknown.count(id)) throw ConfigError("noise id in both partitions: " + id);
  const auto& part = params.partition == "known" ? bank.known : bank.unknown;
  if (part.empty()) throw ConfigError("requested noise partition '" + params.partition + "' is empty");

  std::vector<std::pair<std::string, int64_t>> pool(part.begin(), part.end());

  CorpusManifest m;
  m.snr_values = params.snr_values;
  m.snr_proportions = params.snr_proportions;
  m.partition = params.partition;
  m.master_seed = params.master_seed;
  m.entries.reserve(clean_ids_labels.size());
  for (const auto& [clean_id, label] : clean_ids_labels) {
    Rng rng = Rng(params.master_seed).derive(clean_id);
    ManifestEntry e;
    e.spec.clean_id = clean_id;
    const int bin = rng.categorical(params.snr_proportions);
    e.spec.snr_db = params.snr_values[static_cast<size_t>(bin)];
    const auto& pick = pool[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(pool.size())))];
    e.spec.noise_id = pick.first;
    e.spec.noise_offset = rng.uniform_int(std::max<int64_t>(pick.second, 1));
    e.spec.seed = rng.next_u64();
    e.partition = params.partition;
    e.label = label;
    e.domain = bin;  // re-bucketed downstream when domains follow noise type
    m.entries.push_back(std::move(e));
  }
  return m;
}

VerifyReport verify_corpus(const CorpusManifest& manifest,
                           const std::function<Waveform(const std::string&)>& load_clean,
                           const std::function<Waveform(const std::string&)>& load_mixed,
                           const NoiseBankInfo& bank, double tolerance_db) {
  VerifyReport rep;
  for (const auto& e : manifest.entries) {
    const auto& part = e.partition == "known" ? bank.known : bank.unknown;
    if (!part.count(e.spec.noise_id)) {
      rep.violations.push_back("hygiene: noise '" + e.spec.noise_id + "' not in partition '" + e.partition +
                               "' (utterance " + e.spec.clean_id + ")");
      rep.hygiene_ok = false;
      continue;
    }
    const Waveform clean = load_clean(e.spec.clean_id);
    const Waveform mixed = load_mixed(e.spec.clean_id);
    if (clean.samples.size() != mixed.samples.size()) {
      rep.violations.push_back("length mismatch for utterance " + e.spec.clean_id);
      continue;
    }
    std::vector<double> residual(clean.samples.size());
    for (size_t i = 0; i < residual.size(); ++i)
      residual[i] = mixed.samples[i] - e.rescale * clean.samples[i];
    const double p_signal = signal_power(clean.samples) * e.rescale * e.rescale;
    const double p_noise = signal_power(residual);
    if (p_noise <= 0.0) {
      rep.violations.push_back("no noise content in utterance " + e.spec.clean_id);
      continue;
    }
    const double realized_db = 10.0 * std::log10(p_signal / p_noise);
    const double err = std::fabs(realized_db - e.spec.snr_db);
    rep.max_snr_error_db = std::max(rep.max_snr_error_db, err);
    if (err >= tolerance_db)
      rep.violations.push_back("snr: utterance " + e.spec.clean_id + " realized " + std::to_string(realized_db) +
                               " dB vs target " + std::to_string(e.spec.snr_db) + " dB");
  }
  return rep;
}

const std::vector<std::string>& noise_types() {
  static const std::vector<std::string> kTypes = {"white", "pink", "babble", "hum"};
  return kTypes;
}

namespace {

Waveform make_white(Rng& rng, int64_t n, int sr) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(static_cast<size_t>(n));
  for (auto& v : w.samples) v = rng.uniform(-0.6, 0.6);
  return w;
}

// Voss-McCartney pink noise over 12 octaves.
Waveform make_pink(Rng& rng, int64_t n, int sr) {
  constexpr int kRows = 12;
  double rows[kRows];
  for (auto& r : rows) r = rng.uniform(-1.0, 1.0);
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    for (int b = 0; b < kRows; ++b)
      if ((i >> b) << b == i) rows[b] = rng.uniform(-1.0, 1.0);
    double s = 0.0;
    for (double r : rows) s += r;
    w.samples[static_cast<size_t>(i)] = s / kRows * 0.9;
  }
  return w;
}

Waveform make_babble(Rng& rng, int64_t n, int sr) {
  // Band-limited noise under a slow multi-sine amplitude envelope.
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(static_cast<size_t>(n));
  double mod_freq[3], mod_phase[3];
  for (int k = 0; k < 3; ++k) {
    mod_freq[k] = rng.uniform(1.5, 7.0);
    mod_phase[k] = rng.uniform(0.0, 2.0 * kPi);
  }
  double lp = 0.0;
  const double alpha = 0.25;
  for (int64_t i = 0; i < n; ++i) {
    lp += alpha * (rng.uniform(-1.0, 1.0) - lp);
    double env = 0.0;
    for (int k = 0; k < 3; ++k) env += std::sin(2.0 * kPi * mod_freq[k] * i / sr + mod_phase[k]);
    env = 0.55 + 0.15 * env;
    w.samples[static_cast<size_t>(i)] = 0.9 * env * lp;
  }
  return w;
}

Waveform make_hum(Rng& rng, int64_t n, int sr) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(static_cast<size_t>(n));
  const double base = rng.uniform(48.0, 62.0);
  const double phases[3] = {rng.uniform(0.0, 2.0 * kPi), rng.uniform(0.0, 2.0 * kPi), rng.uniform(0.0, 2.0 * kPi)};
  for (int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    double v = 0.5 * std::sin(2.0 * kPi * base * t + phases[0]) +
               0.25 * std::sin(2.0 * kPi * 2.0 * base * t + phases[1]) +
               0.12 * std::sin(2.0 * kPi * 3.0 * base * t + phases[2]);
    v += 0.02 * rng.uniform(-1.0, 1.0);
    w.samples[static_cast<size_t>(i)] = 0.8 * v;
  }
  return w;
}

}  // namespace

Waveform make_noise(const std::string& type, uint64_t seed, int64_t num_samples, int sample_rate) {
  if (num_samples < 1) throw DataError("make_noise: need at least one sample");
  Rng rng(hash_combine(mix64(seed), hash_str("noise." + type)));
  if (type == "white") return make_white(rng, num_samples, sample_rate);
  if (type == "pink") return make_pink(rng, num_samples, sample_rate);
  if (type == "babble") return make_babble(rng, num_samples, sample_rate);
  if (type == "hum") return make_hum(rng, num_samples, sample_rate);
  throw ConfigError("unknown noise type: " + type);
}

Waveform synth_speech(uint64_t seed, int class_id, double seconds, int sample_rate) {
  if (seconds <= 0.0) throw DataError("synth_speech: duration must be positive");
  Rng rng(hash_combine(mix64(seed), mix64(static_cast<uint64_t>(class_id) + 0x5bd1u)));
  const int64_t n = static_cast<int64_t>(seconds * sample_rate);

  // Two-formant vowel-ish spectrum; the pattern is the class identity.
  static const double kFormants[][2] = {{320, 2300}, {600, 1900}, {750, 1200}, {420, 2600},
                                        {520, 1500}, {280, 1700}, {680, 2200}, {380, 1100}};
  const int pattern = class_id % 8;
  const double f1 = kFormants[pattern][0] * rng.uniform(0.95, 1.05);
  const double f2 = kFormants[pattern][1] * rng.uniform(0.95, 1.05);
  const double f0 = rng.uniform(95.0, 220.0);

  const int harmonics = static_cast<int>(std::min(4000.0, sample_rate / 2.0 - 200.0) / f0);
  std::vector<double> amp(static_cast<size_t>(harmonics)), phase(static_cast<size_t>(harmonics));
  for (int h = 0; h < harmonics; ++h) {
    const double f = f0 * (h + 1);
    const double r1 = 1.0 / (1.0 + std::pow((f - f1) / 120.0, 2.0));
    const double r2 = 0.7 / (1.0 + std::pow((f - f2) / 180.0, 2.0));
    amp[static_cast<size_t>(h)] = (r1 + r2 + 0.02) / (1.0 + 0.12 * h);
    phase[static_cast<size_t>(h)] = rng.uniform(0.0, 2.0 * kPi);
  }

  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(static_cast<size_t>(n));
  const double syllable_rate = rng.uniform(2.5, 4.5);
  const double syl_phase = rng.uniform(0.0, 2.0 * kPi);
  double peak = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    double env = 0.5 - 0.5 * std::cos(2.0 * kPi * std::min(1.0, std::min(t, seconds - t) / 0.05));
    env *= 0.6 + 0.4 * std::sin(2.0 * kPi * syllable_rate * t + syl_phase);
    double v = 0.0;
    for (int h = 0; h < harmonics; ++h)
      v += amp[static_cast<size_t>(h)] * std::sin(2.0 * kPi * f0 * (h + 1) * t + phase[static_cast<size_t>(h)]);
    const double s = env * v;
    w.samples[static_cast<size_t>(i)] = s;
    peak = std::max(peak, std::fabs(s));
  }
  if (peak > 0.0)
    for (auto& v : w.samples) v *= 0.5 / peak;
  return w;
}

}  // namespace dannet
