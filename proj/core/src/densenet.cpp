#include "dannet/densenet.hpp"

#include <cmath>

#include "dannet/rng.hpp"

namespace dannet {

void DenseNetConfig::validate() const {
  if (num_blocks < 1 || layers_per_block < 1 || growth_rate < 1 || initial_channels < 1 ||
      input_channels < 1 || num_classes < 1)
    throw ConfigError("densenet config: all counts must be >= 1");
  if (!(compression > 0.0) || compression > 1.0)
    throw ConfigError("densenet config: compression must satisfy 0 < theta <= 1, got " +
                      std::to_string(compression));
}

namespace {

int compressed_channels(double theta, int y) {
  const int out = static_cast<int>(std::floor(theta * static_cast<double>(y)));
  if (out < 1)
    throw ConfigError("transition would produce 0 channels: floor(" + std::to_string(theta) + " * " +
                      std::to_string(y) + ")");
  return out;
}

}  // namespace

std::vector<ConvShape> count_feature_maps(const DenseNetConfig& cfg) {
  cfg.validate();
  std::vector<ConvShape> out;
  out.push_back({"stem.conv", cfg.input_channels, cfg.initial_channels});
  int c = cfg.initial_channels;
  for (int b = 1; b <= cfg.num_blocks; ++b) {
    const int block_in = c;
    for (int l = 1; l <= cfg.layers_per_block; ++l) {
      const int in_ch = block_in + cfg.growth_rate * (l - 1);
      out.push_back({"block" + std::to_string(b) + ".layer" + std::to_string(l) + ".conv", in_ch,
                     cfg.growth_rate});
    }
    c = block_in + cfg.growth_rate * cfg.layers_per_block;
    if (b < cfg.num_blocks) {
      const int t_out = compressed_channels(cfg.compression, c);
      out.push_back({"trans" + std::to_string(b) + ".conv", c, t_out});
      c = t_out;
    }
  }
  return out;
}

int weighted_depth(const DenseNetConfig& cfg) {
  // Every conv plus the affine classifier.
  return static_cast<int>(count_feature_maps(cfg).size()) + 1;
}

template <typename Real>
void init_parameter(Tensor<Real>& t, const std::string& name, uint64_t seed, const std::string& kind,
                    int fan_in) {
  Rng rng(hash_combine(mix64(seed), hash_str(name)));
  if (kind == "weight") {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<Real>(rng.normal(0.0, stddev));
  } else if (kind == "zero") {
    t.fill(Real(0));
  } else if (kind == "one") {
    t.fill(Real(1));
  } else {
    throw ConfigError("unknown init kind: " + kind);
  }
}

template <typename Real>
DenseNetModel<Real> DenseNetModel<Real>::build(const DenseNetConfig& cfg, uint64_t seed) {
  cfg.validate();
  DenseNetModel m;
  m.cfg_ = cfg;
  m.seed_ = seed;

  auto add_bn = [&](const std::string& prefix, int channels) {
    init_parameter(m.params_.create(prefix + ".gamma", {channels}), prefix + ".gamma", seed, "one", channels);
    init_parameter(m.params_.create(prefix + ".beta", {channels}), prefix + ".beta", seed, "zero", channels);
    init_parameter(m.params_.create(prefix + ".running_mean", {channels}, /*trainable=*/false),
                   prefix + ".running_mean", seed, "zero", channels);
    init_parameter(m.params_.create(prefix + ".running_var", {channels}, /*trainable=*/false),
                   prefix + ".running_var", seed, "one", channels);
  };
  // In-block and transition convs are bias-free: their outputs feed a batch
  // norm, which absorbs any per-channel shift, so a bias would be an inert
  // parameter. The stem conv keeps its bias: the stem output is the shared
  // representation that a domain head consumes before any normalization.
  auto add_conv = [&](const std::string& prefix, int in_ch, int out_ch, int k) {
    const std::string wname = prefix + ".weight";
    init_parameter(m.params_.create(wname, {out_ch, in_ch, k, k}), wname, seed, "weight", in_ch * k * k);
  };

  add_conv("stem.conv", cfg.input_channels, cfg.initial_channels, 3);
  init_parameter(m.params_.create("stem.conv.bias", {cfg.initial_channels}), "stem.conv.bias", seed, "zero",
                 cfg.input_channels * 9);
  m.stages_.push_back("stem");

  int c = cfg.initial_channels;
  for (int b = 1; b <= cfg.num_blocks; ++b) {
    const std::string bname = "block" + std::to_string(b);
    const int block_in = c;
    for (int l = 1; l <= cfg.layers_per_block; ++l) {
      const std::string lname = bname + ".layer" + std::to_string(l);
      const int in_ch = block_in + cfg.growth_rate * (l - 1);
      add_bn(lname + ".bn", in_ch);
      add_conv(lname + ".conv", in_ch, cfg.growth_rate, 3);
    }
    c = block_in + cfg.growth_rate * cfg.layers_per_block;
    m.stages_.push_back(bname);
    if (b < cfg.num_blocks) {
      const std::string tname = "trans" + std::to_string(b);
      const int t_out = compressed_channels(cfg.compression, c);
      add_bn(tname + ".bn", c);
      add_conv(tname + ".conv", c, t_out, 1);
      c = t_out;
      m.stages_.push_back(tname);
    }
  }

  add_bn("head.bn", c);
  const std::string fw = "head.fc.weight";
  init_parameter(m.params_.create(fw, {c, cfg.num_classes}), fw, seed, "weight", c);
  const std::string fb = "head.fc.bias";
  init_parameter(m.params_.create(fb, {cfg.num_classes}), fb, seed, "zero", c);
  return m;
}

template <typename Real>
RunningStats<Real> DenseNetModel<Real>::stats_of(const std::string& prefix) {
  return RunningStats<Real>{&params_.at(prefix + ".running_mean").value, &params_.at(prefix + ".running_var").value};
}

template <typename Real>
typename DenseNetModel<Real>::NodeId DenseNetModel<Real>::bn_relu(Graph<Real>& g, const std::string& prefix,
                                                                  NodeId x, Mode mode) {
  NodeId gamma = g.param(prefix + ".gamma", params_.at(prefix + ".gamma").value);
  NodeId beta = g.param(prefix + ".beta", params_.at(prefix + ".beta").value);
  NodeId bn = g.batch_norm(x, gamma, beta, mode, stats_of(prefix));
  return g.relu(bn);
}

template <typename Real>
typename DenseNetModel<Real>::NodeId DenseNetModel<Real>::conv(Graph<Real>& g, const std::string& prefix,
                                                               NodeId x, Pad pad, ForwardTrace* trace) {
  NodeId w = g.param(prefix + ".weight", params_.at(prefix + ".weight").value);
  NodeId b = params_.contains(prefix + ".bias")
                 ? g.param(prefix + ".bias", params_.at(prefix + ".bias").value)
                 : g.input(Tensor<Real>({g.value(w).dim(0)}));  // bias-free conv
  NodeId out = g.conv2d(x, w, b, pad);
  if (trace != nullptr)
    trace->convs.push_back({prefix, g.value(x).dim(1), g.value(out).dim(1)});
  return out;
}

template <typename Real>
typename DenseNetModel<Real>::NodeId DenseNetModel<Real>::forward_block(Graph<Real>& g, NodeId x0,
                                                                        int block_index, Mode mode,
                                                                        ForwardTrace* trace) {
  const std::string bname = "block" + std::to_string(block_index);
  std::vector<NodeId> features = {x0};
  for (int l = 1; l <= cfg_.layers_per_block; ++l) {
    const std::string lname = bname + ".layer" + std::to_string(l);
    NodeId cat = g.concat_channels(features);
    NodeId h = bn_relu(g, lname + ".bn", cat, mode);
    NodeId y = conv(g, lname + ".conv", h, Pad::kSame, trace);
    features.push_back(y);
  }
  return g.concat_channels(features);
}

template <typename Real>
typename DenseNetModel<Real>::NodeId DenseNetModel<Real>::forward_transition(Graph<Real>& g, NodeId x,
                                                                             int trans_index, Mode mode,
                                                                             ForwardTrace* trace) {
  const std::string tname = "trans" + std::to_string(trans_index);
  const Tensor<Real>& v = g.value(x);
  if (v.dim(2) < 2 || v.dim(3) < 2)
    throw ConfigError(tname + ": spatial dims " + std::to_string(v.dim(2)) + "x" + std::to_string(v.dim(3)) +
                      " collapse under 2x2 pooling");
  NodeId h = bn_relu(g, tname + ".bn", x, mode);
  NodeId y = conv(g, tname + ".conv", h, Pad::kValid, trace);
  return g.avg_pool_2x2(y);
}

template <typename Real>
typename DenseNetModel<Real>::NodeId DenseNetModel<Real>::forward(Graph<Real>& g, NodeId in, Mode mode,
                                                                  ForwardTrace* trace) {
  const Tensor<Real>& x = g.value(in);
  if (x.rank() != 4 || x.dim(1) != cfg_.input_channels)
    throw ShapeError("model input must be [B," + std::to_string(cfg_.input_channels) + ",H,W], got " +
                     shape_str(x.shape));
  NodeId cur = conv(g, "stem.conv", in, Pad::kSame, trace);
  if (trace != nullptr) trace->stage_outputs["stem"] = cur;
  for (int b = 1; b <= cfg_.num_blocks; ++b) {
    cur = forward_block(g, cur, b, mode, trace);
    if (trace != nullptr) trace->stage_outputs["block" + std::to_string(b)] = cur;
    if (b < cfg_.num_blocks) {
      cur = forward_transition(g, cur, b, mode, trace);
      if (trace != nullptr) trace->stage_outputs["trans" + std::to_string(b)] = cur;
    }
  }
  cur = bn_relu(g, "head.bn", cur, mode);
  cur = g.global_avg_pool(cur);
  NodeId w = g.param("head.fc.weight", params_.at("head.fc.weight").value);
  NodeId b = g.param("head.fc.bias", params_.at("head.fc.bias").value);
  NodeId logits = g.affine(cur, w, b);
  if (trace != nullptr) trace->stage_outputs["logits"] = logits;
  return logits;
}

template <typename Real>
Tensor<Real> DenseNetModel<Real>::forward_eval(const Tensor<Real>& input) {
  Graph<Real> g;
  NodeId in = g.input(input);
  NodeId logits = forward(g, in, Mode::kEval);
  return g.value(logits);
}

template class DenseNetModel<float>;
template class DenseNetModel<double>;
template void init_parameter<float>(Tensor<float>&, const std::string&, uint64_t, const std::string&, int);
template void init_parameter<double>(Tensor<double>&, const std::string&, uint64_t, const std::string&, int);

}  // namespace dannet
