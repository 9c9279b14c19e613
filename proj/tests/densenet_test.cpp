#include <cmath>

#include "dannet/densenet.hpp"
#include "dannet/rng.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace dannet;
using dannet::testing::fd_gradient;
using dannet::testing::max_rel_err;
using dannet::testing::to_double;

namespace {

// Independent closed-form parameter count: pure channel arithmetic, no
// model code involved.
int64_t closed_form_param_count(const DenseNetConfig& cfg) {
  auto conv = [](int64_t in, int64_t out, int64_t k) { return out * in * k * k; };
  auto bn = [](int64_t c) { return 2 * c; };  // gamma + beta (running stats are not trainable)
  int64_t total = conv(cfg.input_channels, cfg.initial_channels, 3) + cfg.initial_channels;  // stem + bias
  int64_t c = cfg.initial_channels;
  for (int b = 1; b <= cfg.num_blocks; ++b) {
    const int64_t block_in = c;
    for (int l = 1; l <= cfg.layers_per_block; ++l) {
      const int64_t in_ch = block_in + static_cast<int64_t>(cfg.growth_rate) * (l - 1);
      total += bn(in_ch) + conv(in_ch, cfg.growth_rate, 3);
    }
    c = block_in + static_cast<int64_t>(cfg.growth_rate) * cfg.layers_per_block;
    if (b < cfg.num_blocks) {
      const int64_t t_out = static_cast<int64_t>(std::floor(cfg.compression * static_cast<double>(c)));
      total += bn(c) + conv(c, t_out, 1);
      c = t_out;
    }
  }
  total += bn(c);                        // head bn
  total += c * cfg.num_classes + cfg.num_classes;  // classifier
  return total;
}

Tensor<double> random_input(uint64_t seed, int b, int c, int h, int w) {
  Rng rng(seed);
  Tensor<double> t({b, c, h, w});
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

DenseNetConfig tiny_config() {
  DenseNetConfig cfg;
  cfg.num_blocks = 2;
  cfg.layers_per_block = 2;
  cfg.growth_rate = 4;
  cfg.compression = 0.5;
  cfg.initial_channels = 6;
  cfg.num_classes = 4;
  return cfg;
}

}  // namespace

TEST_SUITE("densenet") {

TEST_CASE("default architecture builds") {
  DenseNetConfig cfg;  // 4 blocks x 14 layers, k=12, theta=0.5
  auto model = DenseNetModel<float>::build(cfg, 1);
  CHECK(model.stages().size() == 1 + 4 + 3);  // stem + blocks + transitions
  CHECK(model.params().trainable_count() == closed_form_param_count(cfg));
  // 1 stem + 56 block convs + 3 transition convs, plus the classifier.
  CHECK(count_feature_maps(cfg).size() == 60);
  CHECK(weighted_depth(cfg) == 61);
}

TEST_CASE("minimal config: one layer, no transitions") {
  DenseNetConfig cfg;
  cfg.num_blocks = 1;
  cfg.layers_per_block = 1;
  cfg.growth_rate = 1;
  cfg.compression = 1.0;
  cfg.initial_channels = 1;
  cfg.input_channels = 1;
  cfg.num_classes = 2;
  auto model = DenseNetModel<double>::build(cfg, 3);
  CHECK(model.stages() == std::vector<std::string>{"stem", "block1"});
  const auto maps = count_feature_maps(cfg);
  REQUIRE(maps.size() == 2);
  CHECK(maps[1].name == "block1.layer1.conv");
  CHECK(maps[1].in_channels == 1);
  CHECK(maps[1].out_channels == 1);
}

TEST_CASE("config validation") {
  DenseNetConfig cfg;
  cfg.compression = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.compression = 1.2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.compression = 0.5;
  cfg.growth_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  // Compression driving a transition to zero channels is rejected.
  DenseNetConfig crush;
  crush.num_blocks = 2;
  crush.layers_per_block = 1;
  crush.growth_rate = 1;
  crush.initial_channels = 1;
  crush.compression = 0.4;  // floor(0.4 * 2) = 0
  CHECK_THROWS_AS(count_feature_maps(crush), ConfigError);
  CHECK_THROWS_AS(DenseNetModel<float>::build(crush, 1), ConfigError);
}

TEST_CASE("channel bookkeeping follows the growth-rate formula") {
  DenseNetConfig cfg;
  cfg.num_blocks = 3;
  cfg.layers_per_block = 3;
  cfg.growth_rate = 12;
  cfg.compression = 0.5;
  cfg.initial_channels = 3;
  const auto maps = count_feature_maps(cfg);
  // Layer 3 of block 1 sees 12*2 + 3 = 27 input channels.
  for (const auto& m : maps)
    if (m.name == "block1.layer3.conv") CHECK(m.in_channels == 27);
  // Block 2's input is the compressed output of block 1.
  const int block1_out = 3 + 12 * 3;
  for (const auto& m : maps)
    if (m.name == "block2.layer1.conv") CHECK(m.in_channels == block1_out / 2);
}

TEST_CASE("transition arithmetic") {
  DenseNetConfig cfg = tiny_config();
  auto model = DenseNetModel<double>::build(cfg, 5);
  // theta*y channel compression: trans1 sees 6 + 2*4 = 14 -> 7.
  for (const auto& m : count_feature_maps(cfg))
    if (m.name == "trans1.conv") {
      CHECK(m.in_channels == 14);
      CHECK(m.out_channels == 7);
    }
  // floor behavior: 7 channels at theta=0.5 -> 3.
  CHECK(static_cast<int>(std::floor(0.5 * 7)) == 3);

  // Spatial halving with ceil: 10 -> 5.
  Graph<double> g;
  auto in = g.input(random_input(6, 1, cfg.input_channels, 10, 10));
  ForwardTrace trace;
  model.forward(g, in, Mode::kEval, &trace);
  CHECK(g.value(trace.stage_outputs.at("trans1")).shape == std::vector<int>{1, 7, 5, 5});
}

TEST_CASE("count_feature_maps matches a real forward pass") {
  for (uint64_t seed : {1u, 2u, 3u, 4u, 5u, 6u, 7u, 8u, 9u, 10u}) {
    Rng rng(seed);
    DenseNetConfig cfg;
    cfg.num_blocks = 1 + static_cast<int>(rng.uniform_int(3));
    cfg.layers_per_block = 1 + static_cast<int>(rng.uniform_int(4));
    cfg.growth_rate = 1 + static_cast<int>(rng.uniform_int(8));
    cfg.compression = 0.3 + 0.7 * rng.uniform();
    cfg.initial_channels = 1 + static_cast<int>(rng.uniform_int(8));
    cfg.num_classes = 2 + static_cast<int>(rng.uniform_int(5));
    std::vector<ConvShape> expected;
    try {
      expected = count_feature_maps(cfg);
    } catch (const ConfigError&) {
      continue;  // compression collapsed a transition; not buildable either
    }
    auto model = DenseNetModel<double>::build(cfg, seed);
    Graph<double> g;
    const int hw = 1 << cfg.num_blocks;
    auto in = g.input(random_input(seed, 2, 3, hw, hw));
    ForwardTrace trace;
    model.forward(g, in, Mode::kTrain, &trace);
    REQUIRE(trace.convs.size() == expected.size());
    for (size_t i = 0; i < expected.size(); ++i) {
      CHECK(trace.convs[i].name == expected[i].name);
      CHECK(trace.convs[i].in_channels == expected[i].in_channels);
      CHECK(trace.convs[i].out_channels == expected[i].out_channels);
    }
  }
}

TEST_CASE("parameter count is monotone in growth rate and depth") {
  DenseNetConfig cfg = tiny_config();
  auto count = [](DenseNetConfig c) {
    return DenseNetModel<float>::build(c, 1).params().trainable_count();
  };
  DenseNetConfig more_k = cfg;
  more_k.growth_rate += 3;
  CHECK(count(more_k) > count(cfg));
  DenseNetConfig more_l = cfg;
  more_l.layers_per_block += 2;
  CHECK(count(more_l) > count(cfg));
  CHECK(count(cfg) == closed_form_param_count(cfg));
  CHECK(count(more_k) == closed_form_param_count(more_k));
  CHECK(count(more_l) == closed_form_param_count(more_l));
}

TEST_CASE("theta = 1 transitions preserve channel count") {
  DenseNetConfig cfg = tiny_config();
  cfg.compression = 1.0;
  const auto maps = count_feature_maps(cfg);
  for (const auto& m : maps)
    if (m.name == "trans1.conv") CHECK(m.in_channels == m.out_channels);
}

TEST_CASE("dense block output starts with the block input, verbatim") {
  DenseNetConfig cfg = tiny_config();
  auto model = DenseNetModel<double>::build(cfg, 11);
  Graph<double> g;
  auto x0 = g.input(random_input(12, 2, cfg.initial_channels, 5, 5));
  auto out = model.forward_block(g, x0, 1, Mode::kTrain);
  const auto& in_v = g.value(x0);
  const auto& out_v = g.value(out);
  CHECK(out_v.dim(1) == cfg.initial_channels + cfg.growth_rate * cfg.layers_per_block);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < cfg.initial_channels; ++c)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) CHECK(out_v.at4(b, c, y, x) == in_v.at4(b, c, y, x));
}

TEST_CASE("dense layer input is the concatenation of all previous outputs") {
  // L=1: output = concat(x0, H1(x0)).
  DenseNetConfig cfg = tiny_config();
  cfg.layers_per_block = 1;
  auto model = DenseNetModel<double>::build(cfg, 13);
  Graph<double> g;
  auto x0 = g.input(random_input(14, 1, cfg.initial_channels, 4, 4));
  auto out = model.forward_block(g, x0, 1, Mode::kTrain);
  CHECK(g.value(out).dim(1) == cfg.initial_channels + cfg.growth_rate);
}

TEST_CASE("zeroed early layers leave the last layer a function of the input only") {
  DenseNetConfig cfg = tiny_config();
  cfg.layers_per_block = 3;
  auto model = DenseNetModel<double>::build(cfg, 15);
  // Zero the conv kernels of layers 1..2 in block 1.
  for (int l = 1; l <= 2; ++l)
    model.params().at("block1.layer" + std::to_string(l) + ".conv.weight").value.fill(0.0);

  auto run = [&](const Tensor<double>& in) {
    Graph<double> g;
    auto x0 = g.input(in);
    auto out = model.forward_block(g, x0, 1, Mode::kTrain);
    return g.value(out);
  };
  const auto out_a = run(random_input(16, 2, cfg.initial_channels, 4, 4));
  const auto out_b = run(random_input(17, 2, cfg.initial_channels, 4, 4));

  // Intermediate feature channels are identically zero for any input...
  const int c0 = cfg.initial_channels;
  for (int b = 0; b < 2; ++b)
    for (int c = c0; c < c0 + 2 * cfg.growth_rate; ++c)
      for (int i = 0; i < 16; ++i) {
        CHECK(out_a.at4(b, c, i / 4, i % 4) == 0.0);
        CHECK(out_b.at4(b, c, i / 4, i % 4) == 0.0);
      }
  // ...while the last layer's slice still responds to the input.
  double diff = 0.0;
  for (int b = 0; b < 2; ++b)
    for (int c = c0 + 2 * cfg.growth_rate; c < c0 + 3 * cfg.growth_rate; ++c)
      for (int i = 0; i < 16; ++i)
        diff = std::max(diff, std::fabs(out_a.at4(b, c, i / 4, i % 4) - out_b.at4(b, c, i / 4, i % 4)));
  CHECK(diff > 1e-6);
}

TEST_CASE("model_forward contract") {
  DenseNetConfig cfg = tiny_config();
  auto model = DenseNetModel<float>::build(cfg, 21);
  Tensor<float> in({2, 3, 8, 8});
  Rng rng(22);
  for (auto& v : in.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  Tensor<float> logits = model.forward_eval(in);
  CHECK(logits.shape == std::vector<int>{2, cfg.num_classes});
  Tensor<float> again = model.forward_eval(in);
  CHECK(logits.data == again.data);

  Tensor<float> wrong({2, 5, 8, 8});
  CHECK_THROWS_AS(model.forward_eval(wrong), ShapeError);
}

TEST_CASE("spatial collapse names the offending transition") {
  DenseNetConfig cfg = tiny_config();
  cfg.num_blocks = 3;
  auto model = DenseNetModel<double>::build(cfg, 23);
  Graph<double> g;
  auto in = g.input(random_input(24, 1, 3, 2, 2));
  CHECK_THROWS_WITH_AS(model.forward(g, in, Mode::kEval), doctest::Contains("trans2"), ConfigError);
}

TEST_CASE("seed determinism and independence of initialization") {
  DenseNetConfig cfg = tiny_config();
  auto a = DenseNetModel<float>::build(cfg, 99);
  auto b = DenseNetModel<float>::build(cfg, 99);
  for (const auto& [name, p] : a.params()) CHECK(p.value.data == b.params().at(name).value.data);
  auto c = DenseNetModel<float>::build(cfg, 100);
  CHECK(c.params().at("stem.conv.weight").value.data != a.params().at("stem.conv.weight").value.data);

  // Name-keyed init: the same tensor in a deeper model matches bitwise.
  DenseNetConfig deeper = cfg;
  deeper.layers_per_block += 1;
  auto d = DenseNetModel<float>::build(deeper, 99);
  CHECK(d.params().at("stem.conv.weight").value.data == a.params().at("stem.conv.weight").value.data);
  CHECK(d.params().at("block1.layer1.conv.weight").value.data ==
        a.params().at("block1.layer1.conv.weight").value.data);
}

TEST_CASE("stem smoke test: constant input gives per-channel constant interior") {
  DenseNetConfig cfg = tiny_config();
  auto model = DenseNetModel<double>::build(cfg, 25);
  Graph<double> g;
  auto in = g.input(Tensor<double>::full({1, 3, 8, 8}, 0.4));
  ForwardTrace trace;
  model.forward(g, in, Mode::kEval, &trace);
  const auto& stem = g.value(trace.stage_outputs.at("stem"));
  // Zero same-padding perturbs the border; the interior is constant.
  for (int c = 0; c < cfg.initial_channels; ++c) {
    const double ref = stem.at4(0, c, 1, 1);
    for (int y = 1; y < 7; ++y)
      for (int x = 1; x < 7; ++x) CHECK(stem.at4(0, c, y, x) == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("tiny end-to-end gradients match finite differences") {
  // Spot check across parameter tensors on a 1-block model to keep the
  // unit suite fast; the acceptance suite covers the full 2x2 model.
  DenseNetConfig cfg = tiny_config();
  cfg.num_blocks = 1;
  auto model = DenseNetModel<double>::build(cfg, 27);
  Tensor<double> in = random_input(28, 2, 3, 6, 6);
  std::vector<int> targets = {1, 3};
  auto loss_fn = [&]() {
    Graph<double> g;
    return g.value(g.softmax_cross_entropy(model.forward(g, g.input(in), Mode::kTrain), targets))[0];
  };
  model.params().zero_grads();
  Graph<double> g;
  g.backward(g.softmax_cross_entropy(model.forward(g, g.input(in), Mode::kTrain), targets));
  g.accumulate_param_grads(model.params());

  for (const std::string name : {"stem.conv.weight", "block1.layer2.conv.weight", "head.fc.weight",
                                 "block1.layer1.bn.gamma", "head.bn.beta"}) {
    auto& p = model.params().at(name);
    Tensor<double> fd = fd_gradient(p.value, loss_fn, 1e-6);
    CHECK_MESSAGE(max_rel_err(to_double(p.grad), fd) < 1e-3, name);
  }
}

}  // TEST_SUITE
