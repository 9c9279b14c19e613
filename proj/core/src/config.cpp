#include "dannet/config.hpp"

#include <fstream>
#include <sstream>

#include "dannet/errors.hpp"

namespace dannet {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_string(const std::string& text) {
  KeyValueConfig kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
    if (kv.values_.count(key)) throw ConfigError("duplicate config key: " + key);
    kv.values_[key] = value;
  }
  return kv;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) != 0; }

std::string KeyValueConfig::get_str(const std::string& key, const std::string& fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string KeyValueConfig::require_str(const std::string& key) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing required config key: " + key);
  return it->second;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer: '" + it->second + "'");
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: '" + it->second + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config key " + key + " is not a boolean: '" + it->second + "'");
}

uint64_t KeyValueConfig::get_u64(const std::string& key, uint64_t fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    const uint64_t v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an unsigned integer: '" + it->second + "'");
  }
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    const std::vector<double>& fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  std::istringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " has a non-numeric element: '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + " is an empty list");
  return out;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::vector<std::string> KeyValueConfig::keys_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (k.rfind(prefix, 0) == 0) {
      out.push_back(k);
      used_.insert(k);
    }
  return out;
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) out.push_back(k);
  return out;
}

ExperimentConfig ExperimentConfig::from_config(const KeyValueConfig& kv) {
  ExperimentConfig c;

  c.model.num_blocks = kv.get_int("model.blocks", c.model.num_blocks);
  c.model.layers_per_block = kv.get_int("model.layers_per_block", c.model.layers_per_block);
  c.model.growth_rate = kv.get_int("model.growth_rate", c.model.growth_rate);
  c.model.compression = kv.get_double("model.compression", c.model.compression);
  c.model.initial_channels = kv.get_int("model.initial_channels", c.model.initial_channels);
  c.model.input_channels = kv.get_int("model.input_channels", c.model.input_channels);
  c.model.num_classes = kv.get_int("model.num_classes", 0);  // 0: resolved from data

  c.adversarial_enabled = kv.get_bool("adversarial.enabled", true);
  c.adversarial.lambda = kv.get_double("adversarial.lambda", c.adversarial.lambda);
  c.adversarial.shared_split = kv.get_str("adversarial.shared_split", c.adversarial.shared_split);
  c.adversarial.domain_hidden = kv.get_int("adversarial.domain_hidden", c.adversarial.domain_hidden);
  c.adversarial.domain_hidden_units =
      kv.get_int("adversarial.domain_hidden_units", c.adversarial.domain_hidden_units);

  c.features.n_mels = kv.get_int("features.n_mels", c.features.n_mels);
  c.features.frame_length = kv.get_double("features.frame_length", c.features.frame_length);
  c.features.frame_hop = kv.get_double("features.frame_hop", c.features.frame_hop);
  c.features.fft_size = kv.get_int("features.fft_size", c.features.fft_size);
  c.features.fmin = kv.get_double("features.fmin", c.features.fmin);
  c.features.fmax = kv.get_double("features.fmax", c.features.fmax);
  c.features.log_floor = kv.get_double("features.log_floor", c.features.log_floor);
  c.patch_width = kv.get_int("features.patch_width", c.patch_width);

  c.data.mode = kv.get_str("data.mode", c.data.mode);
  if (c.data.mode != "toy" && c.data.mode != "corpus")
    throw ConfigError("data.mode must be toy or corpus, got " + c.data.mode);
  c.data.toy.num_label_classes = kv.get_int("data.toy.classes", c.data.toy.num_label_classes);
  c.data.toy.num_domains = kv.get_int("data.toy.domains", c.data.toy.num_domains);
  c.data.toy.samples_per_class_train = kv.get_int("data.toy.train_per_cell", c.data.toy.samples_per_class_train);
  c.data.toy.samples_per_class_test = kv.get_int("data.toy.test_per_cell", c.data.toy.samples_per_class_test);
  c.data.toy.n_mels = kv.get_int("data.toy.mels", c.data.toy.n_mels);
  c.data.toy.patch_width = kv.get_int("data.toy.width", c.data.toy.patch_width);
  c.data.toy.class_template_seed = kv.get_u64("data.toy.template_seed", c.data.toy.class_template_seed);
  c.data.toy.template_gain = kv.get_double("data.toy.template_gain", c.data.toy.template_gain);
  c.data.toy.sample_noise = kv.get_double("data.toy.sample_noise", c.data.toy.sample_noise);
  c.data.toy.offset_noise = kv.get_double("data.toy.offset_noise", c.data.toy.offset_noise);
  c.data.toy.seed = kv.get_u64("data.toy.seed", c.data.toy.seed);
  c.data.toy_shift_gain = kv.get_double("data.toy.shift_gain", c.data.toy_shift_gain);
  c.data.toy_shift_test_gain = kv.get_double("data.toy.shift_test_gain", c.data.toy_shift_test_gain);
  c.data.toy.domain_shift.assign(static_cast<size_t>(c.data.toy.num_domains), DomainShift{});
  for (int d = 1; d < c.data.toy.num_domains; ++d)
    c.data.toy.domain_shift[static_cast<size_t>(d)] = {c.data.toy_shift_gain, c.data.toy_shift_test_gain};

  c.data.corpus_dir = kv.get_str("data.corpus_dir", "");
  c.data.features_dir = kv.get_str("data.features_dir", "");
  c.data.eval_features_dir = kv.get_str("data.eval_features_dir", "");
  c.data.clean_count = kv.get_int("data.clean_count", c.data.clean_count);
  c.data.clean_seconds = kv.get_double("data.clean_seconds", c.data.clean_seconds);
  c.data.clean_classes = kv.get_int("data.clean_classes", c.data.clean_classes);
  c.data.noise_known = kv.get_int("data.noise_known", c.data.noise_known);
  c.data.noise_unknown = kv.get_int("data.noise_unknown", c.data.noise_unknown);
  c.data.noise_seconds = kv.get_double("data.noise_seconds", c.data.noise_seconds);
  c.data.sample_rate = kv.get_int("data.sample_rate", c.data.sample_rate);
  c.data.snr_values = kv.get_double_list("data.snr_values", c.data.snr_values);
  c.data.snr_proportions = kv.get_double_list("data.snr_proportions", c.data.snr_proportions);
  c.data.partition = kv.get_str("data.partition", c.data.partition);
  c.data.domain_by = kv.get_str("data.domain_by", c.data.domain_by);
  if (c.data.domain_by != "noise_type" && c.data.domain_by != "snr_bin")
    throw ConfigError("data.domain_by must be noise_type or snr_bin, got " + c.data.domain_by);

  c.schedule.steps = kv.get_int("schedule.steps", c.schedule.steps);
  c.schedule.batch_size = kv.get_int("schedule.batch_size", c.schedule.batch_size);
  c.adversarial.epsilon = kv.get_double("schedule.epsilon", c.adversarial.epsilon);
  c.schedule.seed = kv.get_u64("schedule.seed", c.schedule.seed);
  c.schedule.eval_every = kv.get_int("schedule.eval_every", c.schedule.eval_every);

  c.out_dir = kv.get_str("outputs.dir", c.out_dir);

  const auto unknown = kv.unused_keys();
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  return c;
}

}  // namespace dannet
