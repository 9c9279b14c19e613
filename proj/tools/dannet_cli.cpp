// Pipeline driver: corpus corruption, feature extraction, adversarial or
// plain training, evaluation, and numeric self-checks, all from one
// key=value config.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dannet/checkpoint.hpp"
#include "dannet/config.hpp"
#include "dannet/gradcheck.hpp"
#include "dannet/hash.hpp"
#include "dannet/mixer.hpp"
#include "dannet/rng.hpp"
#include "dannet/toytask.hpp"

namespace fs = std::filesystem;
using namespace dannet;

namespace {

struct CliOptions {
  std::string config_path;
  int64_t seed_override = -1;
  std::string out_override;
  std::vector<std::string> test_sets;  // name=features_dir
  std::string checkpoint;
  bool corrupt_conv_backward = false;
};

ExperimentConfig load_experiment(const CliOptions& opt) {
  KeyValueConfig kv = opt.config_path.empty() ? KeyValueConfig::parse_string("")
                                              : KeyValueConfig::parse_file(opt.config_path);
  ExperimentConfig cfg = ExperimentConfig::from_config(kv);
  if (opt.seed_override >= 0) cfg.schedule.seed = static_cast<uint64_t>(opt.seed_override);
  if (!opt.out_override.empty()) cfg.out_dir = opt.out_override;
  return cfg;
}

std::string utt_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "utt%04d", i);
  return buf;
}

double quantize16(double v) {
  const double c = std::clamp(v, -1.0, 1.0);
  return static_cast<double>(std::lrint(c * 32767.0)) / 32767.0;
}

void quantize_wave(Waveform& w) {
  for (auto& v : w.samples) v = quantize16(v);
}

struct NoiseBankEntry {
  std::string id;
  std::string type;
  std::string partition;
  int64_t samples = 0;
};

std::vector<NoiseBankEntry> make_bank_entries(const DataConfig& data) {
  std::vector<NoiseBankEntry> bank;
  const auto& types = noise_types();
  for (int i = 0; i < data.noise_known; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s-k%02d", types[static_cast<size_t>(i) % types.size()].c_str(), i);
    bank.push_back({buf, types[static_cast<size_t>(i) % types.size()], "known",
                    static_cast<int64_t>(data.noise_seconds * data.sample_rate)});
  }
  for (int i = 0; i < data.noise_unknown; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s-u%02d", types[static_cast<size_t>(i) % types.size()].c_str(), i);
    bank.push_back({buf, types[static_cast<size_t>(i) % types.size()], "unknown",
                    static_cast<int64_t>(data.noise_seconds * data.sample_rate)});
  }
  return bank;
}

int cmd_mix(const CliOptions& opt) {
  const ExperimentConfig cfg = load_experiment(opt);
  if (cfg.data.corpus_dir.empty()) throw ConfigError("mix requires data.corpus_dir");
  if (cfg.data.clean_count < 1) throw ConfigError("mix requires data.clean_count >= 1");
  const auto bank_entries = make_bank_entries(cfg.data);

  NoiseBankInfo bank;
  for (const auto& b : bank_entries)
    (b.partition == "known" ? bank.known : bank.unknown)[b.id] = b.samples;

  std::vector<std::pair<std::string, int>> clean_ids;
  for (int i = 0; i < cfg.data.clean_count; ++i)
    clean_ids.emplace_back(utt_id(i), i % cfg.data.clean_classes);

  ManifestParams params;
  params.snr_values = cfg.data.snr_values;
  params.snr_proportions = cfg.data.snr_proportions;
  params.partition = cfg.data.partition;
  params.master_seed = cfg.schedule.seed;
  CorpusManifest manifest = build_manifest(clean_ids, bank, params);

  // Config is fully validated; now touch the filesystem.
  const fs::path root = cfg.data.corpus_dir;
  fs::create_directories(root / "clean");
  fs::create_directories(root / "noise");
  fs::create_directories(root / "mixed");

  std::map<std::string, Waveform> clean_waves, noise_waves;
  for (const auto& [id, label] : clean_ids) {
    Waveform w = synth_speech(hash_combine(mix64(params.master_seed), hash_str(id)), label,
                              cfg.data.clean_seconds, cfg.data.sample_rate);
    quantize_wave(w);
    write_wav(w, (root / "clean" / (id + ".wav")).string());
    clean_waves[id] = std::move(w);
  }
  for (const auto& b : bank_entries) {
    Waveform w = make_noise(b.type, hash_combine(mix64(params.master_seed), hash_str(b.id)), b.samples,
                            cfg.data.sample_rate);
    quantize_wave(w);
    write_wav(w, (root / "noise" / (b.id + ".wav")).string());
    noise_waves[b.id] = std::move(w);
  }

  for (auto& e : manifest.entries) {
    MixResult r = mix_at_snr(clean_waves.at(e.spec.clean_id), noise_waves.at(e.spec.noise_id), e.spec.snr_db,
                             e.spec);
    e.rescale = r.rescale;
    quantize_wave(r.audio);
    write_wav(r.audio, (root / "mixed" / (e.spec.clean_id + ".wav")).string());
  }
  manifest.save((root / "manifest.tsv").string());

  {
    std::ofstream utts(root / "utts.tsv");
    for (const auto& [id, label] : clean_ids) utts << id << "\t" << label << "\n";
    std::ofstream nb(root / "noise_bank.tsv");
    for (const auto& b : bank_entries) nb << b.id << "\t" << b.partition << "\t" << b.type << "\t" << b.samples << "\n";
  }

  VerifyReport rep = verify_corpus(
      manifest, [&](const std::string& id) { return read_wav((root / "clean" / (id + ".wav")).string()); },
      [&](const std::string& id) { return read_wav((root / "mixed" / (id + ".wav")).string()); }, bank);
  std::cout << "mixed " << manifest.entries.size() << " utterances into " << root.string() << "\n";
  std::cout << "verification: " << (rep.ok() ? "clean" : "VIOLATIONS") << ", max |realized - target| = "
            << rep.max_snr_error_db << " dB\n";
  for (const auto& v : rep.violations) std::cout << "  " << v << "\n";
  return rep.ok() ? 0 : 2;
}

struct ArchiveIndexRow {
  std::string utt;
  std::string file;
  int t_frames = 0;
  int label = 0;
  int domain = 0;
};

std::vector<ArchiveIndexRow> read_archive_index(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "index.tsv");
  if (!in) throw DataError("cannot open feature index in " + dir);
  std::vector<ArchiveIndexRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ArchiveIndexRow r;
    ss >> r.utt >> r.file >> r.t_frames >> r.label >> r.domain;
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError("empty feature index in " + dir);
  return rows;
}

int noise_type_index(const std::string& noise_id) {
  const auto& types = noise_types();
  for (size_t i = 0; i < types.size(); ++i)
    if (noise_id.rfind(types[i] + "-", 0) == 0) return static_cast<int>(i);
  throw DataError("cannot derive noise type from id: " + noise_id);
}

int cmd_featurize(const CliOptions& opt) {
  const ExperimentConfig cfg = load_experiment(opt);
  if (cfg.data.corpus_dir.empty()) throw ConfigError("featurize requires data.corpus_dir");
  if (cfg.data.features_dir.empty()) throw ConfigError("featurize requires data.features_dir");
  const fs::path root = cfg.data.corpus_dir;
  if (!fs::exists(root / "manifest.tsv")) throw ConfigError("no manifest.tsv under " + root.string());
  const CorpusManifest manifest = CorpusManifest::load((root / "manifest.tsv").string());

  const fs::path out = cfg.data.features_dir;
  fs::create_directories(out);

  std::vector<FeatureMatrix> mats;
  mats.reserve(manifest.entries.size());
  std::ostringstream index;
  for (const auto& e : manifest.entries) {
    const Waveform w = read_wav((root / "mixed" / (e.spec.clean_id + ".wav")).string());
    FeatureMatrix fm = extract_features(w, cfg.features);
    const std::string file = e.spec.clean_id + ".dgt";
    save_tensor(feature_to_tensor(fm), (out / file).string());
    int domain = e.domain;  // snr bin by default
    if (cfg.data.domain_by == "noise_type") domain = noise_type_index(e.spec.noise_id);
    index << e.spec.clean_id << "\t" << file << "\t" << fm.n_frames << "\t" << e.label << "\t" << domain << "\n";
    mats.push_back(std::move(fm));
  }

  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& m : mats) ptrs.push_back(&m);
  const NormStats stats = compute_norm_stats(ptrs);
  Tensor<double> st({2, 3, stats.n_mels});
  std::copy(stats.mean.begin(), stats.mean.end(), st.data.begin());
  std::copy(stats.inv_std.begin(), stats.inv_std.end(), st.data.begin() + stats.mean.size());
  save_tensor(st, (out / "norm_stats.dgt").string());

  std::ofstream idx(out / "index.tsv");
  idx << "#utt\tfile\tframes\tlabel\tdomain\n" << index.str();
  std::cout << "featurized " << mats.size() << " utterances (" << cfg.features.n_mels << " mel bands) into "
            << out.string() << "\n";
  return 0;
}

NormStats load_norm_stats(const std::string& dir) {
  Tensor<double> st = load_tensor<double>((fs::path(dir) / "norm_stats.dgt").string());
  if (st.rank() != 3 || st.dim(0) != 2 || st.dim(1) != 3) throw DataError("bad norm_stats.dgt in " + dir);
  NormStats stats;
  stats.n_mels = st.dim(2);
  stats.mean.assign(st.data.begin(), st.data.begin() + st.data.size() / 2);
  stats.inv_std.assign(st.data.begin() + st.data.size() / 2, st.data.end());
  return stats;
}

PatchDataset<double> load_archive_patches(const std::string& dir, int patch_width) {
  const auto rows = read_archive_index(dir);
  const NormStats stats = load_norm_stats(dir);
  std::vector<Tensor<double>> per_utt;
  std::vector<int> labels, domains;
  int64_t total = 0;
  for (const auto& r : rows) {
    const FeatureMatrix fm = tensor_to_feature(load_tensor<double>((fs::path(dir) / r.file).string()));
    Tensor<double> p = assemble_patches(fm, stats, patch_width);
    total += p.dim(0);
    for (int i = 0; i < p.dim(0); ++i) {
      labels.push_back(r.label);
      domains.push_back(r.domain);
    }
    per_utt.push_back(std::move(p));
  }
  PatchDataset<double> out;
  const auto& shape0 = per_utt.front().shape;
  out.patches = Tensor<double>({static_cast<int>(total), shape0[1], shape0[2], shape0[3]});
  int64_t off = 0;
  for (const auto& p : per_utt) {
    std::copy(p.data.begin(), p.data.end(), out.patches.data.begin() + off);
    off += p.numel();
  }
  out.labels = std::move(labels);
  out.domains = std::move(domains);
  return out;
}

int class_count(const std::vector<int>& v) {
  int m = 0;
  for (int x : v) m = std::max(m, x);
  return m + 1;
}

int cmd_train(const CliOptions& opt) {
  ExperimentConfig cfg = load_experiment(opt);
  PatchDataset<float> train_set, eval_set;
  int input_h = 0, input_w = 0;

  if (cfg.data.mode == "toy") {
    ToyTask task = make_toy_task(cfg.data.toy);
    train_set = cast_dataset<float>(task.train);
    eval_set = cast_dataset<float>(task.test);
    input_h = cfg.data.toy.n_mels;
    input_w = cfg.data.toy.patch_width;
  } else {
    if (cfg.data.features_dir.empty()) throw ConfigError("train requires data.features_dir in corpus mode");
    train_set = cast_dataset<float>(load_archive_patches(cfg.data.features_dir, cfg.patch_width));
    if (!cfg.data.eval_features_dir.empty())
      eval_set = cast_dataset<float>(load_archive_patches(cfg.data.eval_features_dir, cfg.patch_width));
    input_h = cfg.features.n_mels;
    input_w = cfg.patch_width;
  }

  DenseNetConfig mcfg = cfg.model;
  if (mcfg.num_classes <= 0) mcfg.num_classes = class_count(train_set.labels);
  const int num_domains = std::max(2, class_count(train_set.domains));
  mcfg.input_channels = 3;

  AdversarialModel<float> model =
      AdversarialModel<float>::build(mcfg, num_domains, cfg.adversarial, cfg.schedule.seed);

  std::cout << "training on " << train_set.size() << " patches of 3x" << input_h << "x" << input_w << ", "
            << mcfg.num_classes << " classes, " << num_domains << " domains, adversarial="
            << (cfg.adversarial_enabled ? "on" : "off") << " (lambda=" << cfg.adversarial.lambda << ")\n";

  fs::create_directories(cfg.out_dir);
  TrainingLog log;
  try {
    log = train(model, train_set, eval_set, cfg.schedule, cfg.adversarial_enabled);
  } catch (const DivergenceError& e) {
    std::ofstream csv(fs::path(cfg.out_dir) / "train_log.csv");
    csv << log.to_csv();
    std::cerr << "training diverged: " << e.what() << "\n";
    return 2;
  }

  std::ofstream csv(fs::path(cfg.out_dir) / "train_log.csv");
  csv << log.to_csv();
  save_checkpoint((fs::path(cfg.out_dir) / "checkpoint").string(), model, cfg.schedule.steps);

  if (!log.rows.empty()) {
    const auto& last = log.rows.back();
    std::cout << "final: step " << last.step << " loss_y " << last.loss_y << " loss_z " << last.loss_z
              << " label_acc " << last.label_acc << " domain_acc " << last.domain_acc << "\n";
  }
  std::cout << "checkpoint hash " << hex64(hash_dir((fs::path(cfg.out_dir) / "checkpoint").string())) << "\n";
  return 0;
}

int cmd_eval(const CliOptions& opt) {
  const ExperimentConfig cfg = load_experiment(opt);
  if (opt.checkpoint.empty()) throw ConfigError("eval requires --checkpoint");
  AdversarialModel<float> model = load_checkpoint<float>(opt.checkpoint);

  struct NamedSet {
    std::string name;
    PatchDataset<float> data;
  };
  std::vector<NamedSet> sets;
  if (cfg.data.mode == "toy" && opt.test_sets.empty()) {
    ToyTask task = make_toy_task(cfg.data.toy);
    sets.push_back({"toy-test", cast_dataset<float>(task.test)});
  }
  for (const auto& spec : opt.test_sets) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--test expects NAME=FEATURES_DIR, got " + spec);
    sets.push_back({spec.substr(0, eq),
                    cast_dataset<float>(load_archive_patches(spec.substr(eq + 1), cfg.patch_width))});
  }
  if (sets.empty()) throw ConfigError("eval: no test sets (use --test NAME=DIR or data.mode=toy)");

  const int classes = model.net().config().num_classes;
  for (const auto& s : sets)
    if (class_count(s.data.labels) > classes)
      throw DataError("test set '" + s.name + "' has labels beyond the checkpoint's " +
                      std::to_string(classes) + " classes");

  std::ostringstream csv;
  csv << "test_set,label_acc,domain_acc,mean_loss_y\n";
  csv.precision(17);
  for (auto& s : sets) {
    EvalMetrics m = evaluate(model, s.data);
    const auto per_domain = per_domain_label_accuracy(model, s.data);
    std::cout << s.name << ": label_acc " << m.label_acc << ", domain_acc " << m.domain_acc << ", mean_loss_y "
              << m.mean_loss_y << "\n";
    for (size_t d = 0; d < per_domain.size(); ++d)
      std::cout << "  domain " << d << " label_acc " << per_domain[d] << "\n";
    csv << s.name << "," << m.label_acc << "," << m.domain_acc << "," << m.mean_loss_y << "\n";
  }
  fs::create_directories(cfg.out_dir);
  std::ofstream out(fs::path(cfg.out_dir) / "eval_report.csv");
  out << csv.str();
  return 0;
}

int cmd_gradcheck(const CliOptions& opt) {
  uint64_t seed = 7;
  if (!opt.config_path.empty()) seed = load_experiment(opt).schedule.seed;
  if (opt.seed_override >= 0) seed = static_cast<uint64_t>(opt.seed_override);

  const auto t0 = std::chrono::steady_clock::now();
  GradCheckReport gc = gradcheck_tiny_densenet(seed, opt.corrupt_conv_backward);
  std::cout << "finite-difference check, tiny model (2 blocks x 2 layers, growth 4), seed " << seed << ":\n";
  for (const auto& g : gc.groups)
    std::printf("  %-28s %4lld elems   max rel err %.3e\n", g.name.c_str(),
                static_cast<long long>(g.elements), g.max_rel_err);
  std::printf("  worst group %s: %.3e (threshold %.1e) -> %s\n", gc.worst_group.c_str(), gc.max_rel_err,
              gc.threshold, gc.passed ? "ok" : "FAIL");

  EquivalenceReport eq = check_update_equivalence({0.0, 0.5, 1.0}, 10, seed);
  std::cout << "reversal-layer vs explicit update, 10 random tiny models per lambda:\n";
  for (const auto& p : eq.points)
    std::printf("  lambda %.2f   max ulp %.0f%s\n", p.lambda, p.max_ulp,
                p.worst_param.empty() ? "" : (" (" + p.worst_param + ")").c_str());
  std::printf("  -> %s\n", eq.passed ? "ok (within 1 ulp)" : "FAIL");

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("gradcheck finished in %.1f s\n", secs);
  return (gc.passed && eq.passed) ? 0 : 2;
}

int cmd_toy(const CliOptions& opt) {
  const ExperimentConfig cfg = load_experiment(opt);
  ToyTask task = make_toy_task(cfg.data.toy);
  const fs::path out = fs::path(cfg.out_dir) / "toy";
  save_patch_dataset(out.string(), "train", task.train);
  save_patch_dataset(out.string(), "test", task.test);
  std::cout << "toy dataset: " << task.train.size() << " train / " << task.test.size() << " test patches of 3x"
            << cfg.data.toy.n_mels << "x" << cfg.data.toy.patch_width << " under " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"densely connected acoustic models with domain adversarial training"};
  app.require_subcommand(1);
  app.fallthrough();

  CliOptions opt;
  app.add_option("--config", opt.config_path, "key=value config file");
  app.add_option("--seed", opt.seed_override, "override schedule.seed");
  app.add_option("--out", opt.out_override, "override outputs.dir");

  CLI::App* mix = app.add_subcommand("mix", "build an SNR-controlled noise-corrupted corpus");
  CLI::App* featurize = app.add_subcommand("featurize", "extract log-Mel features with deltas");
  CLI::App* train = app.add_subcommand("train", "train the acoustic model");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on test sets");
  eval->add_option("--checkpoint", opt.checkpoint, "checkpoint directory");
  eval->add_option("--test", opt.test_sets, "test set as NAME=FEATURES_DIR (repeatable)");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference and update-equivalence self-check");
  gradcheck->add_flag("--corrupt-conv-backward", opt.corrupt_conv_backward,
                      "test hook: corrupt conv gradients to prove the check catches it")
      ->group("");  // hidden
  CLI::App* toy = app.add_subcommand("toy", "generate the synthetic two-domain dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (mix->parsed()) return cmd_mix(opt);
    if (featurize->parsed()) return cmd_featurize(opt);
    if (train->parsed()) return cmd_train(opt);
    if (eval->parsed()) return cmd_eval(opt);
    if (gradcheck->parsed()) return cmd_gradcheck(opt);
    if (toy->parsed()) return cmd_toy(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
