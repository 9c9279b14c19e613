#include "dannet/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dannet/config.hpp"

namespace dannet {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

template <typename Real>
const char* precision_name() {
  return sizeof(Real) == 4 ? "float32" : "float64";
}

}  // namespace

template <typename Real>
void save_checkpoint(const std::string& dir, const AdversarialModel<Real>& model, int step) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  const auto& cfg = model.net().config();
  const auto& acfg = model.config();
  manifest << "format=dannet-checkpoint-1\n";
  manifest << "precision=" << precision_name<Real>() << "\n";
  manifest << "step=" << step << "\n";
  manifest << "seed=" << model.net().seed() << "\n";
  manifest << "num_domains=" << model.num_domains() << "\n";
  manifest << "model.blocks=" << cfg.num_blocks << "\n";
  manifest << "model.layers_per_block=" << cfg.layers_per_block << "\n";
  manifest << "model.growth_rate=" << cfg.growth_rate << "\n";
  manifest << "model.compression=" << fmt_double(cfg.compression) << "\n";
  manifest << "model.initial_channels=" << cfg.initial_channels << "\n";
  manifest << "model.input_channels=" << cfg.input_channels << "\n";
  manifest << "model.num_classes=" << cfg.num_classes << "\n";
  manifest << "adversarial.lambda=" << fmt_double(acfg.lambda) << "\n";
  manifest << "adversarial.epsilon=" << fmt_double(acfg.epsilon) << "\n";
  manifest << "adversarial.shared_split=" << acfg.shared_split << "\n";
  manifest << "adversarial.domain_hidden=" << acfg.domain_hidden << "\n";
  manifest << "adversarial.domain_hidden_units=" << acfg.domain_hidden_units << "\n";

  auto dump = [&](const ParameterSet<Real>& ps) {
    for (const auto& [name, p] : ps) {
      const char tag = model.subset_of(name);
      const std::string file = std::string(1, tag) + "." + name + ".dgt";
      manifest << "param." << tag << "." << name << "=" << file << "\n";
      save_tensor(p.value, (fs::path(dir) / file).string());
    }
  };
  dump(model.net().params());
  dump(model.domain_params());

  std::ofstream out(fs::path(dir) / "manifest.txt");
  if (!out) throw DataError("cannot write checkpoint manifest in " + dir);
  out << manifest.str();
  if (!out) throw DataError("short write on checkpoint manifest in " + dir);
}

int checkpoint_step(const std::string& dir) {
  const KeyValueConfig kv = KeyValueConfig::parse_file((fs::path(dir) / "manifest.txt").string());
  return kv.get_int("step", 0);
}

template <typename Real>
AdversarialModel<Real> load_checkpoint(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  if (!fs::exists(manifest_path)) throw DataError("no checkpoint manifest in " + dir);
  const KeyValueConfig kv = KeyValueConfig::parse_file(manifest_path);
  if (kv.get_str("format", "") != "dannet-checkpoint-1")
    throw DataError("unsupported checkpoint format in " + dir);

  DenseNetConfig cfg;
  cfg.num_blocks = kv.get_int("model.blocks", 0);
  cfg.layers_per_block = kv.get_int("model.layers_per_block", 0);
  cfg.growth_rate = kv.get_int("model.growth_rate", 0);
  cfg.compression = kv.get_double("model.compression", 0.0);
  cfg.initial_channels = kv.get_int("model.initial_channels", 0);
  cfg.input_channels = kv.get_int("model.input_channels", 0);
  cfg.num_classes = kv.get_int("model.num_classes", 0);

  AdversarialConfig acfg;
  acfg.lambda = kv.get_double("adversarial.lambda", acfg.lambda);
  acfg.epsilon = kv.get_double("adversarial.epsilon", acfg.epsilon);
  acfg.shared_split = kv.get_str("adversarial.shared_split", acfg.shared_split);
  acfg.domain_hidden = kv.get_int("adversarial.domain_hidden", acfg.domain_hidden);
  acfg.domain_hidden_units = kv.get_int("adversarial.domain_hidden_units", acfg.domain_hidden_units);

  const int num_domains = kv.get_int("num_domains", 2);
  const uint64_t seed = kv.get_u64("seed", 0);

  AdversarialModel<Real> model = AdversarialModel<Real>::build(cfg, num_domains, acfg, seed);

  for (const std::string& key : kv.keys_with_prefix("param.")) {
    const std::string tagged = key.substr(6);  // e.g. x.stem.conv.weight
    if (tagged.size() < 3 || tagged[1] != '.') throw DataError("bad checkpoint param key: " + key);
    const std::string name = tagged.substr(2);
    const std::string file = kv.get_str(key, "");
    Tensor<Real> t = load_tensor<Real>((fs::path(dir) / file).string());
    ParameterSet<Real>& ps = name.rfind("domain.", 0) == 0 ? model.domain_params() : model.net().params();
    Param<Real>& p = ps.at(name);
    if (!p.value.same_shape(t))
      throw DataError("checkpoint tensor " + name + " has shape " + shape_str(t.shape) + ", expected " +
                      shape_str(p.value.shape));
    p.value = std::move(t);
  }
  return model;
}

template void save_checkpoint<float>(const std::string&, const AdversarialModel<float>&, int);
template void save_checkpoint<double>(const std::string&, const AdversarialModel<double>&, int);
template AdversarialModel<float> load_checkpoint<float>(const std::string&);
template AdversarialModel<double> load_checkpoint<double>(const std::string&);

}  // namespace dannet
